"""Network forward/derivative passes and checkpoint format."""

import numpy as np
import pytest

from pdpinn.errors import InvalidArgumentError
from pdpinn.network import (EvalRecord, NetworkSpec, forward, init_params,
                            input_cotangent, input_derivatives, load_network,
                            save_network)
from pdpinn.tape import zero_grads

from _oracles import fd_gradient, rel_err


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        NetworkSpec(widths=(2,))
    with pytest.raises(InvalidArgumentError):
        NetworkSpec(widths=(2, 0, 1))
    with pytest.raises(InvalidArgumentError):
        NetworkSpec(widths=(2, 4, 1), activation="sigmoid")


def test_init_block_structure_and_determinism():
    spec = NetworkSpec(widths=(2, 100, 100, 100, 100, 1), seed=7)
    params = init_params(spec)
    assert len(spec.widths) == 6
    assert len(params.weights) == len(params.biases) == 5
    assert all(np.all(b.value == 0.0) for b in params.biases)
    limit0 = np.sqrt(6.0 / (2 + 100))
    assert np.abs(params.weights[0].value).max() <= limit0
    again = init_params(spec)
    for a, b in zip(params.leaves(), again.leaves()):
        assert np.array_equal(a.value, b.value)
    other = init_params(NetworkSpec(widths=spec.widths, seed=8))
    assert not np.array_equal(params.weights[0].value, other.weights[0].value)


def test_tanh_net_is_odd_with_zero_bias():
    params = init_params(NetworkSpec(widths=(2, 8, 8, 1), seed=0))
    at_zero = forward(params, np.zeros((1, 2))).outputs.value
    assert np.all(at_zero == 0.0)
    x = np.array([[0.3, -0.2]])
    assert np.allclose(forward(params, x).outputs.value,
                       -forward(params, -x).outputs.value)


def test_forward_matches_manual_numpy():
    spec = NetworkSpec(widths=(3, 5, 2), activation="tanh", seed=42)
    params = init_params(spec)
    x = np.random.default_rng(0).normal(size=(4, 3))
    rec = forward(params, x)
    w0, b0 = params.weights[0].value, params.biases[0].value
    w1, b1 = params.weights[1].value, params.biases[1].value
    manual = np.tanh(x @ w0 + b0) @ w1 + b1
    assert np.allclose(rec.outputs.value, manual, atol=0, rtol=0)
    assert isinstance(rec, EvalRecord)


def test_forward_rejects_bad_inputs():
    params = init_params(NetworkSpec(widths=(2, 4, 1)))
    with pytest.raises(InvalidArgumentError):
        forward(params, np.zeros((3, 5)))
    with pytest.raises(InvalidArgumentError):
        forward(params, np.array([[np.nan, 0.0]]))


@pytest.mark.parametrize("activation", ["tanh", "relu", "linear"])
def test_input_cotangent_matches_fd(activation):
    spec = NetworkSpec(widths=(2, 10, 10, 3), activation=activation, seed=5)
    params = init_params(spec)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 2)) + 0.1    # keep relu kinks away from samples
    cot = rng.normal(size=(6, 3))

    got = input_cotangent(forward(params, x), cot).value
    want = np.zeros_like(x)
    for row in range(x.shape[0]):
        def f_of_row(r=row):
            out = forward(params, x).outputs.value
            return float((out[r] * cot[r]).sum())
        want[row] = fd_gradient(f_of_row, x[row])
    assert rel_err(got, want) < 1e-6


def test_input_derivatives_per_output():
    spec = NetworkSpec(widths=(2, 6, 2), seed=9)
    params = init_params(spec)
    x = np.random.default_rng(2).normal(size=(3, 2))
    rows = input_derivatives(forward(params, x))
    assert len(rows) == 2
    basis = np.zeros((3, 2))
    basis[:, 0] = 1.0
    direct = input_cotangent(forward(params, x), basis)
    assert np.allclose(rows[0].value, direct.value)


def test_parameter_gradients_through_input_derivative():
    """Backward through a loss made of input derivatives (second-order terms)."""
    spec = NetworkSpec(widths=(2, 7, 1), activation="tanh", seed=12)
    params = init_params(spec)
    x = np.random.default_rng(3).normal(size=(5, 2))
    cot = np.ones((5, 1))

    def loss():
        rec = forward(params, x)
        du = input_cotangent(rec, cot)
        return ((du * du).sum() + (rec.outputs * rec.outputs).sum())

    root = loss()
    root.backward()
    for leaf in params.leaves():
        want = fd_gradient(lambda: loss().value, leaf.value, h=1e-6)
        assert rel_err(leaf.grad, want, floor=1e-10) < 1e-5
    zero_grads(params.leaves())


def test_relu_slope_zero_exactly_at_kink():
    spec = NetworkSpec(widths=(1, 1, 1), activation="relu", seed=0)
    params = init_params(spec)
    params.weights[0].value[:] = 1.0
    params.weights[1].value[:] = 1.0
    rec = forward(params, np.array([[0.0], [1.0]]))
    slope = input_cotangent(rec, np.ones((2, 1))).value
    assert slope[0, 0] == 0.0
    assert slope[1, 0] == 1.0


def test_checkpoint_round_trip_bitwise(tmp_path):
    spec = NetworkSpec(widths=(2, 13, 4), activation="relu", seed=77)
    params = init_params(spec)
    params.biases[0].value[:] = np.random.default_rng(4).normal(size=13)
    path = tmp_path / "ux.net"
    save_network(params, path, field="ux")
    loaded, field = load_network(path)
    assert field == "ux"
    assert loaded.spec == spec
    for a, b in zip(params.leaves(), loaded.leaves()):
        assert np.array_equal(a.value, b.value)


def test_checkpoint_rejects_corrupt_payload(tmp_path):
    spec = NetworkSpec(widths=(2, 3, 1))
    path = tmp_path / "net.bin"
    save_network(init_params(spec), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(InvalidArgumentError, match="payload"):
        load_network(path)


def test_snapshot_restore_round_trip():
    params = init_params(NetworkSpec(widths=(2, 4, 1), seed=1))
    saved = params.snapshot()
    params.weights[0].value += 1.0
    params.restore(saved)
    assert np.array_equal(params.weights[0].value, saved[0])
