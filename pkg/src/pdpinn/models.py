"""Field models: networks per field plus an architecture's derivative route.

Three architectures share one interface (``value``/``deriv`` on a batch):

``local``
    One network per field taking the two (scaled) point coordinates.
    Derivatives differentiate the network through the tape — first order
    only, which is all the losses need.

``ad_pddo``
    One network per field taking the concatenated scaled coordinates of a
    family's stencil slots (centre first, absent slots zero-padded) and
    returning one sample per slot. The field *value* at the centre is the
    reconstruction-weighted sum over slots; a first *derivative* is the
    accumulated input derivative of that sum over all present slot
    coordinates of one axis (a rigid-translation chain rule), times the sum
    of the value weights. Input differentiation keeps this route first-order
    only.

``pddo``
    Same network layout, but derivatives come from the derivative-tag
    reconstruction weights — plain dot products, no input differentiation,
    so non-smooth activations (relu) are fine and second orders are
    available.

Network inputs are affinely mapped to [-1, 1] per axis; outputs carry one
scale per field so the nets work near unit magnitude regardless of units.
Because graph nodes are per-evaluation snapshots, anything that depends on
trainable leaves (network outputs, reparameterized material constants) is
rebuilt for every batch; only the leaves themselves persist.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import tape
from .constitutive import MaterialParams
from .errors import InvalidArgumentError, UnsupportedOrderError
from .mesh import PointCloud
from .network import (NetworkSpec, forward, init_params, input_cotangent,
                      load_network, save_network)
from .pddo import PdOperatorSet, TAG_INDEX
from .tape import Var

ARCHITECTURES = ("local", "ad_pddo", "pddo")

ELASTIC_FIELDS = ("ux", "uy", "sxx", "syy", "sxy")
PLASTIC_FIELDS = ELASTIC_FIELDS + ("szz",)

#: theta with softplus(theta) == 1, where each reparameterized constant starts.
_SOFTPLUS_UNIT = float(np.log(np.e - 1.0))

MODEL_MANIFEST_MAGIC = "pdpinn-model 1"

FIRST_ORDER_TAGS = ((1, 0), (0, 1))


@dataclass(frozen=True)
class ScaleSet:
    """Characteristic magnitudes used to nondimensionalize fields and losses."""

    u: float
    sigma: float
    strain: float

    @classmethod
    def from_dataset(cls, dataset, overrides: Optional[dict] = None) -> "ScaleSet":
        overrides = overrides or {}

        def pick(key, channels):
            value = overrides.get(key)
            if value is not None:
                return float(value)
            return dataset.channel_scale(channels, fallback=1.0)

        return cls(u=pick("u", ("ux", "uy")),
                   sigma=pick("sigma", ("sxx", "syy", "szz", "sxy")),
                   strain=pick("strain", ("exx", "eyy", "exy")))

    def for_field(self, field: str) -> float:
        return self.u if field in ("ux", "uy") else self.sigma


class MaterialNodes:
    """One evaluation's view of the material constants (Var or float each)."""

    __slots__ = ("lam", "mu", "sigma_y0", "hp")

    def __init__(self, lam, mu, sigma_y0, hp):
        self.lam, self.mu = lam, mu
        self.sigma_y0, self.hp = sigma_y0, hp


class MaterialModel:
    """Material constants with identification reparameterization.

    Trainable positives (``mu``, the bulk modulus ``K = lam + 2 mu / 3``,
    ``sigma_y0``, ``hp``) are ``softplus(theta) * ref`` with ``ref`` the
    starting guess (default half the configured value), so they stay
    admissible whatever theta does; ``lam`` is recovered as ``K - 2 mu / 3``.
    Fixed constants stay plain floats, so solve-mode runs cannot perturb
    them even by round-off. Call :meth:`nodes` once per loss evaluation.
    """

    def __init__(self, params: MaterialParams, guesses: Optional[dict] = None):
        self.params = params
        guesses = dict(guesses or {})
        for key, true in (("lam", params.lam), ("mu", params.mu),
                          ("sigma_y0", params.sigma_y0), ("hp", params.hp)):
            guesses.setdefault(key, 0.5 * true)
        self._thetas: Dict[str, Var] = {}
        self._refs: Dict[str, float] = {}
        if params.train_mu:
            self._add("mu", guesses["mu"])
        if params.train_lam:
            mu_start = guesses["mu"] if params.train_mu else params.mu
            k_ref = guesses["lam"] + 2.0 * mu_start / 3.0
            self._add("bulk", k_ref)
        if params.train_sigma_y0:
            self._add("sigma_y0", guesses["sigma_y0"])
        if params.train_hp:
            self._add("hp", guesses["hp"])

    def _add(self, name: str, ref: float) -> None:
        if ref <= 0.0 or not np.isfinite(ref):
            raise InvalidArgumentError(
                f"starting guess for {name} must be positive, got {ref}"
            )
        self._thetas[name] = Var(np.array(_SOFTPLUS_UNIT), op=f"theta_{name}")
        self._refs[name] = float(ref)

    def leaves(self) -> List[Var]:
        return [self._thetas[k] for k in sorted(self._thetas)]

    def _node(self, name: str) -> Var:
        return tape.softplus(self._thetas[name]) * self._refs[name]

    def _float(self, name: str) -> float:
        return float(np.logaddexp(0.0, self._thetas[name].value) * self._refs[name])

    def nodes(self) -> MaterialNodes:
        """Fresh graph expressions reflecting the current thetas."""
        p = self.params
        mu = self._node("mu") if p.train_mu else p.mu
        if p.train_lam:
            lam = self._node("bulk") - mu * (2.0 / 3.0)
        else:
            lam = p.lam
        sigma_y0 = self._node("sigma_y0") if p.train_sigma_y0 else p.sigma_y0
        hp = self._node("hp") if p.train_hp else p.hp
        return MaterialNodes(lam, mu, sigma_y0, hp)

    def current(self) -> MaterialParams:
        """Present constants as plain numbers (for logging and reports)."""
        p = self.params
        mu = self._float("mu") if p.train_mu else p.mu
        lam = (self._float("bulk") - 2.0 * mu / 3.0) if p.train_lam else p.lam
        sigma_y0 = self._float("sigma_y0") if p.train_sigma_y0 else p.sigma_y0
        hp = self._float("hp") if p.train_hp else p.hp
        return p.with_values(lam=lam, mu=mu, sigma_y0=sigma_y0, hp=hp)

    def snapshot(self) -> List[np.ndarray]:
        return [leaf.value.copy() for leaf in self.leaves()]

    def restore(self, saved: List[np.ndarray]) -> None:
        for leaf, value in zip(self.leaves(), saved):
            leaf.value = value.copy()


class FieldModel:
    """All field networks of one run plus the architecture's evaluation rules."""

    def __init__(self, cloud: PointCloud, architecture: str, plastic: bool,
                 scales: ScaleSet, hidden=(20, 20), activation: str = "tanh",
                 seed: int = 0, opset: Optional[PdOperatorSet] = None,
                 center_only: bool = False):
        if architecture not in ARCHITECTURES:
            raise InvalidArgumentError(
                f"architecture must be one of {ARCHITECTURES}, got {architecture!r}"
            )
        if architecture != "local" and opset is None:
            raise InvalidArgumentError(
                f"{architecture!r} needs a reconstruction operator set"
            )
        self.cloud = cloud
        self.architecture = architecture
        self.plastic = bool(plastic)
        self.scales = scales
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.seed = int(seed)
        self.opset = opset
        self.center_only = bool(center_only)
        self.fields = PLASTIC_FIELDS if plastic else ELASTIC_FIELDS

        pts = cloud.points
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        self._origin = lo
        self._jac = 2.0 / span                      # d(scaled)/d(physical)
        scaled = 2.0 * (pts - lo) / span - 1.0

        if architecture == "local":
            self._inputs = scaled
            in_dim, out_dim = 2, 1
        else:
            slot_map = opset.slot_map                # (n, S)
            present = np.stack([f.slot_members >= 0 for f in opset.families])
            n, n_slots = slot_map.shape
            slot_coords = scaled[slot_map]           # (n, S, 2)
            slot_coords[~present] = 0.0
            self._inputs = slot_coords.reshape(n, 2 * n_slots)
            self._present = present
            axis_mask = np.zeros((n, 2 * n_slots, 2))
            axis_mask[:, 0::2, 0] = present
            axis_mask[:, 1::2, 1] = present
            if center_only:
                axis_mask[:] = 0.0
                axis_mask[:, 0, 0] = 1.0
                axis_mask[:, 1, 1] = 1.0
            self._axis_mask = axis_mask              # (n, 2S, axis)
            self._g00 = opset.padded((0, 0))
            self._g00_sum = self._g00.sum(axis=1)    # ~1 by the moment rules
            in_dim, out_dim = 2 * n_slots, n_slots

        self.nets = {}
        for k, field in enumerate(self.fields):
            spec = NetworkSpec(widths=(in_dim, *self.hidden, out_dim),
                               activation=activation, seed=self.seed + k)
            self.nets[field] = init_params(spec)

    # -- parameters ---------------------------------------------------------

    def leaves(self) -> List[Var]:
        out = []
        for field in self.fields:
            out.extend(self.nets[field].leaves())
        return out

    def snapshot(self) -> Dict[str, list]:
        return {field: self.nets[field].snapshot() for field in self.fields}

    def restore(self, saved: Dict[str, list]) -> None:
        for field in self.fields:
            self.nets[field].restore(saved[field])

    # -- evaluation ---------------------------------------------------------

    def eval_batch(self, idx: np.ndarray) -> "BatchEval":
        return BatchEval(self, np.asarray(idx, dtype=np.int64))

    def predict(self, fields=None, batch_size: int = 1024) -> Dict[str, np.ndarray]:
        """Field values at every cloud point as plain arrays."""
        fields = tuple(fields) if fields is not None else self.fields
        n = len(self.cloud)
        out = {f: np.empty(n) for f in fields}
        for start in range(0, n, batch_size):
            idx = np.arange(start, min(start + batch_size, n))
            ev = self.eval_batch(idx)
            for f in fields:
                out[f][idx] = ev.value(f).value
        return out


class BatchEval:
    """Lazy, cached field values and first derivatives on one batch."""

    def __init__(self, model: FieldModel, idx: np.ndarray):
        self.model = model
        self.idx = idx
        self._records = {}
        self._values: Dict[str, Var] = {}
        self._cotangents: Dict[str, Var] = {}
        self._derivs: Dict[tuple, Var] = {}

    def _record(self, field: str):
        rec = self._records.get(field)
        if rec is None:
            rec = forward(self.model.nets[field], self.model._inputs[self.idx])
            self._records[field] = rec
        return rec

    def value(self, field: str) -> Var:
        out = self._values.get(field)
        if out is not None:
            return out
        m = self.model
        rec = self._record(field)
        if m.architecture == "local":
            out = rec.outputs[:, 0] * m.scales.for_field(field)
        else:
            g00 = m._g00[self.idx]
            out = (rec.outputs * g00).sum(axis=1) * m.scales.for_field(field)
        self._values[field] = out
        return out

    def deriv(self, field: str, tag) -> Var:
        """First spatial derivative of ``field`` (physical units).

        ``pddo`` also supports the three second-order tags; the two
        differentiation-based routes raise :class:`UnsupportedOrderError`
        for them.
        """
        key = (field, tuple(tag))
        out = self._derivs.get(key)
        if out is not None:
            return out
        m = self.model
        if m.architecture == "pddo":
            g = m.opset.padded(tag)[self.idx]
            out = (self._record(field).outputs * g).sum(axis=1) * m.scales.for_field(field)
        else:
            if tuple(tag) not in FIRST_ORDER_TAGS:
                raise UnsupportedOrderError(
                    f"the {m.architecture!r} derivative route is first-order "
                    f"only; tag {tuple(tag)} needs the 'pddo' architecture"
                )
            axis = 0 if tuple(tag) == (1, 0) else 1
            du = self._input_gradient(field)
            if m.architecture == "local":
                out = du[:, axis] * (m._jac[axis] * m.scales.for_field(field))
            else:
                mask = m._axis_mask[self.idx, :, axis]
                acc = (du * mask).sum(axis=1)
                out = (acc * (m._jac[axis] * m.scales.for_field(field))
                       * m._g00_sum[self.idx])
        self._derivs[key] = out
        return out

    def _input_gradient(self, field: str) -> Var:
        """d(weighted outputs)/d(inputs), one reverse sweep per field."""
        du = self._cotangents.get(field)
        if du is None:
            m = self.model
            rec = self._record(field)
            if m.architecture == "local":
                cot = np.ones((self.idx.size, 1))
            else:
                cot = m._g00[self.idx]
            du = input_cotangent(rec, cot)
            self._cotangents[field] = du
        return du


# -- persistence --------------------------------------------------------------

def save_model(model: FieldModel, directory) -> None:
    """Write the manifest plus one checkpoint per field network."""
    os.makedirs(directory, exist_ok=True)
    lines = [
        MODEL_MANIFEST_MAGIC,
        f"architecture {model.architecture}",
        f"plastic {'on' if model.plastic else 'off'}",
        f"fields {' '.join(model.fields)}",
        f"hidden {' '.join(str(h) for h in model.hidden)}",
        f"activation {model.activation}",
        f"seed {model.seed}",
        f"center_only {'on' if model.center_only else 'off'}",
        f"scale_u {model.scales.u!r}",
        f"scale_sigma {model.scales.sigma!r}",
        f"scale_strain {model.scales.strain!r}",
    ]
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for field in model.fields:
        save_network(model.nets[field], os.path.join(directory, f"{field}.net"),
                     field=field)


def load_model(directory, cloud: PointCloud,
               opset: Optional[PdOperatorSet] = None) -> FieldModel:
    """Rebuild a :class:`FieldModel` from :func:`save_model` output."""
    path = os.path.join(directory, "manifest.txt")
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh]
    except OSError as exc:
        raise InvalidArgumentError(f"no saved model at {directory}: {exc}") from exc
    if not lines or lines[0] != MODEL_MANIFEST_MAGIC:
        raise InvalidArgumentError(f"{path}: not a model manifest")
    entries = {}
    for ln in lines[1:]:
        if ln.strip():
            key, _, value = ln.partition(" ")
            entries[key] = value
    scales = ScaleSet(u=float(entries["scale_u"]),
                      sigma=float(entries["scale_sigma"]),
                      strain=float(entries["scale_strain"]))
    model = FieldModel(
        cloud=cloud,
        architecture=entries["architecture"],
        plastic=entries["plastic"] == "on",
        scales=scales,
        hidden=tuple(int(h) for h in entries["hidden"].split()),
        activation=entries["activation"],
        seed=int(entries["seed"]),
        opset=opset,
        center_only=entries.get("center_only") == "on",
    )
    for field in model.fields:
        params, _ = load_network(os.path.join(directory, f"{field}.net"))
        if params.spec.widths != model.nets[field].spec.widths:
            raise InvalidArgumentError(
                f"{field}.net widths {params.spec.widths} do not match the "
                f"manifest architecture"
            )
        model.nets[field] = params
    return model
