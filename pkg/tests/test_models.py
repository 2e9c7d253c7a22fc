"""Field-model evaluation: value/derivative routes and the material wrapper."""

import numpy as np
import pytest

from pdpinn.constitutive import MaterialParams
from pdpinn.errors import InvalidArgumentError, UnsupportedOrderError
from pdpinn.mesh import build_families, build_grid
from pdpinn.models import (ELASTIC_FIELDS, FieldModel, MaterialModel,
                           PLASTIC_FIELDS, ScaleSet, load_model, save_model)
from pdpinn.pddo import build_operator_set

UNIT_SCALES = ScaleSet(u=1.0, sigma=1.0, strain=1.0)


@pytest.fixture(scope="module")
def grid():
    cloud = build_grid(11, 9, 2.0, 1.5)
    opset = build_operator_set(cloud, build_families(cloud))
    return cloud, opset


def _model(cloud, opset, arch, **kw):
    kw.setdefault("scales", UNIT_SCALES)
    kw.setdefault("hidden", (8,))
    kw.setdefault("seed", 0)
    return FieldModel(cloud, arch, plastic=False,
                      opset=None if arch == "local" else opset, **kw)


def _craft_scaled_x(model, field="ux"):
    """Overwrite ``field``'s net so it returns the scaled x coordinate.

    For the nonlocal layouts each slot output becomes that slot's scaled x;
    for the local layout the single output is the centre's scaled x. The
    represented physical field is then ``x_hat(x) * field_scale``, whose
    exact x-derivative is ``jac_x * field_scale``.
    """
    net = model.nets[field]
    w = net.weights[0]
    w.value = np.zeros_like(w.value)
    if model.architecture == "local":
        w.value[0, 0] = 1.0
    else:
        n_slots = w.value.shape[1]
        for j in range(n_slots):
            w.value[2 * j, j] = 1.0
    net.biases[0].value = np.zeros_like(net.biases[0].value)


class TestEvaluation:
    def test_all_architectures_reproduce_a_linear_field(self, grid):
        cloud, opset = grid
        scale = 3.5
        scales = ScaleSet(u=scale, sigma=1.0, strain=1.0)
        jx = 2.0 / (cloud.points[:, 0].max() - cloud.points[:, 0].min())
        x_hat = (cloud.points[:, 0] - cloud.points[:, 0].min()) * jx - 1.0
        idx = np.arange(len(cloud))
        for arch in ("local", "ad_pddo", "pddo"):
            model = _model(cloud, opset, arch, hidden=(), scales=scales)
            _craft_scaled_x(model)
            ev = model.eval_batch(idx)
            value = ev.value("ux").value
            deriv = ev.deriv("ux", (1, 0)).value
            assert np.abs(value - x_hat * scale).max() < 1e-8, arch
            assert np.abs(deriv - jx * scale).max() < 1e-8, arch

    def test_pddo_supports_second_order(self, grid):
        cloud, opset = grid
        model = _model(cloud, opset, "pddo")
        out = model.eval_batch(np.arange(6)).deriv("ux", (2, 0))
        assert out.value.shape == (6,)

    @pytest.mark.parametrize("arch", ["local", "ad_pddo"])
    def test_differentiation_routes_reject_second_order(self, grid, arch):
        cloud, opset = grid
        model = _model(cloud, opset, arch)
        with pytest.raises(UnsupportedOrderError):
            model.eval_batch(np.arange(4)).deriv("ux", (0, 2))

    def test_batch_eval_caches_forwards(self, grid):
        cloud, opset = grid
        model = _model(cloud, opset, "ad_pddo")
        ev = model.eval_batch(np.arange(10))
        assert ev.value("ux") is ev.value("ux")
        assert ev.deriv("uy", (1, 0)) is ev.deriv("uy", (1, 0))
        # derivatives of both axes share one reverse sweep
        ev.deriv("uy", (0, 1))
        assert len(ev._cotangents) == 1

    def test_center_only_variant_changes_the_derivative(self, grid):
        cloud, opset = grid
        full = _model(cloud, opset, "ad_pddo", hidden=())
        center = FieldModel(cloud, "ad_pddo", plastic=False, scales=UNIT_SCALES,
                            hidden=(), seed=0, opset=opset, center_only=True)
        _craft_scaled_x(full)
        _craft_scaled_x(center)
        idx = np.arange(len(cloud))
        d_full = full.eval_batch(idx).deriv("ux", (1, 0)).value
        d_center = center.eval_batch(idx).deriv("ux", (1, 0)).value
        assert not np.allclose(d_full, d_center)

    def test_field_seeds_differ(self, grid):
        cloud, opset = grid
        model = _model(cloud, opset, "local")
        assert not np.array_equal(model.nets["ux"].weights[0].value,
                                  model.nets["uy"].weights[0].value)

    def test_predict_covers_every_field(self, grid):
        cloud, opset = grid
        model = _model(cloud, opset, "pddo")
        out = model.predict(batch_size=17)
        assert sorted(out) == sorted(ELASTIC_FIELDS)
        assert all(v.shape == (len(cloud),) for v in out.values())

    def test_plastic_mode_adds_szz(self, grid):
        cloud, opset = grid
        model = FieldModel(cloud, "local", plastic=True, scales=UNIT_SCALES,
                           hidden=(6,), seed=0)
        assert model.fields == PLASTIC_FIELDS

    def test_nonlocal_needs_an_operator_set(self, grid):
        cloud, _ = grid
        with pytest.raises(InvalidArgumentError, match="operator set"):
            FieldModel(cloud, "pddo", plastic=False, scales=UNIT_SCALES)

    def test_unknown_architecture(self, grid):
        cloud, opset = grid
        with pytest.raises(InvalidArgumentError, match="architecture"):
            FieldModel(cloud, "spectral", plastic=False, scales=UNIT_SCALES,
                       opset=opset)


class TestMaterialModel:
    PARAMS = MaterialParams(lam=1.5, mu=1.0, sigma_y0=0.12, hp=0.3,
                            train_lam=True, train_mu=True,
                            train_sigma_y0=True, train_hp=True)

    def test_initial_values_equal_the_guesses(self):
        mat = MaterialModel(self.PARAMS, {"lam": 1.2, "mu": 0.8,
                                          "sigma_y0": 0.1, "hp": 0.2})
        cur = mat.current()
        assert cur.mu == pytest.approx(0.8, rel=1e-12)
        assert cur.lam == pytest.approx(1.2, rel=1e-12)
        assert cur.sigma_y0 == pytest.approx(0.1, rel=1e-12)
        assert cur.hp == pytest.approx(0.2, rel=1e-12)

    def test_default_guess_is_half_the_configured_value(self):
        mat = MaterialModel(self.PARAMS)
        assert mat.current().mu == pytest.approx(0.5, rel=1e-12)

    def test_nodes_rebuild_from_current_thetas(self):
        mat = MaterialModel(self.PARAMS)
        stale = mat.nodes()
        mat._thetas["mu"].value = mat._thetas["mu"].value + 1.0
        fresh = mat.nodes()
        assert float(fresh.mu.value) > float(stale.mu.value)
        assert mat.current().mu == pytest.approx(float(fresh.mu.value))

    def test_gradient_reaches_thetas(self):
        mat = MaterialModel(self.PARAMS)
        nodes = mat.nodes()
        loss = (nodes.mu - 0.9) * (nodes.mu - 0.9) + nodes.hp * 2.0
        loss.backward()
        assert mat._thetas["mu"].grad is not None
        assert float(mat._thetas["hp"].grad) > 0.0

    def test_fixed_constants_stay_plain_floats(self):
        mat = MaterialModel(MaterialParams(lam=1.5, mu=1.0, sigma_y0=0.12,
                                           hp=0.3))
        nodes = mat.nodes()
        assert isinstance(nodes.lam, float) and isinstance(nodes.hp, float)
        assert mat.leaves() == []

    def test_leaf_order_is_deterministic(self):
        a = MaterialModel(self.PARAMS)
        b = MaterialModel(self.PARAMS)
        assert [l.op for l in a.leaves()] == [l.op for l in b.leaves()]

    def test_snapshot_restore_round_trip(self):
        mat = MaterialModel(self.PARAMS)
        saved = mat.snapshot()
        mat._thetas["mu"].value = mat._thetas["mu"].value + 3.0
        mat.restore(saved)
        assert mat.current().mu == pytest.approx(0.5, rel=1e-12)

    def test_rejects_nonpositive_guess(self):
        with pytest.raises(InvalidArgumentError, match="positive"):
            MaterialModel(self.PARAMS, {"mu": -1.0})


class TestScaleSet:
    def test_picked_from_observed_channels(self, grid):
        from pdpinn.dataio import generate_elastic_manufactured
        cloud, _ = grid
        mat = MaterialParams(lam=40.385e9, mu=26.923e9, sigma_y0=0.1e9, hp=0.5e9)
        ds = generate_elastic_manufactured(cloud, "harmonic_quadratic", 2e-4, mat)
        scales = ScaleSet.from_dataset(ds)
        for ch in ("ux", "uy"):
            assert np.abs(ds.values[ch]).max() <= scales.u + 1e-30
        assert scales.sigma == pytest.approx(
            max(np.abs(ds.values[ch]).max() for ch in ("sxx", "syy", "szz", "sxy")))

    def test_overrides_win(self, grid):
        from pdpinn.dataio import generate_elastic_manufactured
        cloud, _ = grid
        mat = MaterialParams(lam=40.385e9, mu=26.923e9, sigma_y0=0.1e9, hp=0.5e9)
        ds = generate_elastic_manufactured(cloud, "constant_strain", 1e-4, mat)
        scales = ScaleSet.from_dataset(ds, overrides={"sigma": 123.0})
        assert scales.sigma == 123.0
        assert scales.u > 0.0


def test_save_load_round_trip_is_bitwise(tmp_path, grid):
    cloud, opset = grid
    model = FieldModel(cloud, "ad_pddo", plastic=True,
                       scales=ScaleSet(u=2e-4, sigma=5e7, strain=1e-3),
                       hidden=(6, 5), seed=42, opset=opset)
    save_model(model, tmp_path / "model")
    again = load_model(tmp_path / "model", cloud, opset=opset)
    assert again.architecture == "ad_pddo"
    assert again.plastic and again.fields == PLASTIC_FIELDS
    assert again.scales == model.scales
    for field in model.fields:
        for a, b in zip(model.nets[field].leaves(), again.nets[field].leaves()):
            assert np.array_equal(a.value, b.value)


def test_load_model_reports_missing_directory(tmp_path, grid):
    cloud, _ = grid
    with pytest.raises(InvalidArgumentError, match="no saved model"):
        load_model(tmp_path / "nothing", cloud)
