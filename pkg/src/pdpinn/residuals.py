"""Loss assembly: data misfits plus governing-relation residuals.

Every term is a mean of squared, nondimensionalized residuals over one
batch of points, and the total is their weighted sum. The terms fall into
four groups (used for weight lookup and reporting):

``data``
    One term per observed channel: displacement and stress values against
    the matching network outputs, strain channels against displacement
    derivatives. Plane-strain ``ezz`` is identically zero on both sides and
    never forms a term.

``equilibrium``
    The two in-plane balance residuals built from stress derivatives,
    nondimensionalized by ``length / sigma_scale``. Included only when the
    dataset declares itself body-force-free.

``constitutive``
    The volumetric law (mean stress against ``K tr eps``) and the deviatoric
    law ``s = 2 mu (e - ep)`` componentwise. Elastically ``ep`` is zero; in
    plastic mode it is *defined* as ``e - s / (2 mu)``, which moves all the
    information into the plastic group and keeps these terms as numerical
    zeros.

``plastic``
    The hardening consistency ``|ep| = ramp(ebar)`` and the radial flow rule
    ``ep = (3/2) ramp(ebar) s / sigma_e`` componentwise. Points whose
    effective stress sits below a small fraction of the yield stress have no
    usable flow direction; they are skipped and counted.

All residuals need first derivatives only, so every architecture can train
either problem. Stress ``zz`` comes from the plane-strain elastic closure
unless the dataset is plastic, in which case it is its own field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import tape
from .constitutive import (FLOW_GUARD_REL, Tensor2D, effective_strain,
                           effective_stress, equivalent_plastic_strain,
                           plane_strain_szz, split_deviatoric,
                           strain_from_gradients)
from .errors import InvalidArgumentError
from .models import ScaleSet
from .tape import Var, as_var

#: term name -> weight-group name
GROUPS = {"data": "data", "equil": "equilibrium", "pressure": "constitutive",
          "dev": "constitutive", "hardening": "plastic", "flow": "plastic"}

#: data channels in reporting order, with the model quantity each one checks
DATA_CHANNELS = ("ux", "uy", "exx", "eyy", "exy", "sxx", "syy", "szz", "sxy")


def group_of(term: str) -> str:
    return GROUPS[term.split("_")[0]]


def weight_for(term: str, weights: Optional[dict]) -> float:
    """Per-term weight, falling back to the term's group, then 1."""
    if not weights:
        return 1.0
    if term in weights:
        return float(weights[term])
    return float(weights.get(group_of(term), 1.0))


@dataclass
class LossBreakdown:
    """One batch's loss: the differentiable total plus per-term bookkeeping.

    ``total.value`` always equals ``sum(weights[k] * terms[k])`` up to
    round-off; ``counts`` holds the number of squared residual entries each
    mean ran over (0 means the term had nothing to grade in this batch).
    """

    total: Var
    terms: Dict[str, float]
    weights: Dict[str, float]
    counts: Dict[str, int]
    flow_skipped: int = 0
    notices: Tuple[str, ...] = ()
    extras: dict = field(default_factory=dict)

    def weighted_sum(self) -> float:
        return float(sum(self.weights[k] * self.terms[k] for k in self.terms))


class _Accumulator:
    def __init__(self, weights):
        self.weights_in = weights
        self.total = as_var(np.array(0.0))
        self.terms: Dict[str, float] = {}
        self.weights: Dict[str, float] = {}
        self.counts: Dict[str, int] = {}
        self.notices = []

    def add(self, name: str, residual, count: int) -> None:
        """Fold mean(residual**2) into the total; residual already scaled."""
        w = weight_for(name, self.weights_in)
        self.weights[name] = w
        self.counts[name] = int(count)
        if count == 0:
            self.terms[name] = 0.0
            return
        term = (residual * residual).sum() * (1.0 / count)
        self.terms[name] = float(term.value)
        self.total = self.total + w * term

    def skip(self, name: str, note: str) -> None:
        w = weight_for(name, self.weights_in)
        self.weights[name] = w
        self.counts[name] = 0
        self.terms[name] = 0.0
        self.notices.append(note)


def _floatval(x) -> float:
    return float(getattr(x, "value", x))


def assemble_loss(provider, material, dataset, idx, *, scales: ScaleSet,
                  length_scale: float, weights: Optional[dict] = None,
                  equilibrium: Optional[bool] = None) -> LossBreakdown:
    """Build the full loss for one batch of point indices.

    ``provider`` supplies ``value(field)`` and ``deriv(field, tag)`` on the
    batch (a model evaluation or recorded data); ``material`` needs ``lam``,
    ``mu``, ``sigma_y0``, ``hp`` attributes, graph nodes or plain numbers.
    ``equilibrium`` overrides the dataset's own body-force flag.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise InvalidArgumentError("loss batch is empty")
    plastic = dataset.plastic_mode
    if equilibrium is None:
        equilibrium = dataset.equilibrium_terms
    acc = _Accumulator(weights)
    n = idx.size

    val = {f: as_var(provider.value(f)) for f in ("ux", "uy", "sxx", "syy", "sxy")}
    strain = strain_from_gradients(
        as_var(provider.deriv("ux", (1, 0))),
        as_var(provider.deriv("ux", (0, 1))),
        as_var(provider.deriv("uy", (1, 0))),
        as_var(provider.deriv("uy", (0, 1))),
    )
    if plastic:
        val["szz"] = as_var(provider.value("szz"))
    else:
        val["szz"] = plane_strain_szz(material, val["sxx"], val["syy"])

    model_side = {
        "ux": val["ux"], "uy": val["uy"],
        "exx": strain.xx, "eyy": strain.yy, "exy": strain.xy,
        "sxx": val["sxx"], "syy": val["syy"], "szz": val["szz"],
        "sxy": val["sxy"],
    }
    channel_scale = {"ux": scales.u, "uy": scales.u,
                     "exx": scales.strain, "eyy": scales.strain,
                     "exy": scales.strain,
                     "sxx": scales.sigma, "syy": scales.sigma,
                     "szz": scales.sigma, "sxy": scales.sigma}

    for ch in DATA_CHANNELS:
        if dataset.observed(ch) == 0:
            continue
        name = f"data_{ch}"
        pos = np.nonzero(dataset.masks[ch][idx])[0]
        if pos.size == 0:
            acc.skip(name, f"{ch}: observed in the dataset but not in this batch")
            continue
        obs = dataset.values[ch][idx][pos]
        residual = (model_side[ch][pos] - obs) * (1.0 / channel_scale[ch])
        acc.add(name, residual, pos.size)

    if equilibrium:
        factor = length_scale / scales.sigma
        rx = (as_var(provider.deriv("sxx", (1, 0)))
              + as_var(provider.deriv("sxy", (0, 1)))) * factor
        ry = (as_var(provider.deriv("sxy", (1, 0)))
              + as_var(provider.deriv("syy", (0, 1)))) * factor
        acc.add("equil_x", rx, n)
        acc.add("equil_y", ry, n)

    stress = Tensor2D(xx=val["sxx"], yy=val["syy"], zz=val["szz"], xy=val["sxy"])
    e_dev, tr_eps = split_deviatoric(strain)
    s_dev, tr_sig = split_deviatoric(stress)
    bulk = material.lam + material.mu * (2.0 / 3.0)
    acc.add("pressure",
            (tr_sig * (1.0 / 3.0) - bulk * tr_eps) * (1.0 / scales.sigma), n)

    if plastic:
        inv_two_mu = 1.0 / (2.0 * material.mu)
        ep = Tensor2D(xx=e_dev.xx - s_dev.xx * inv_two_mu,
                      yy=e_dev.yy - s_dev.yy * inv_two_mu,
                      zz=e_dev.zz - s_dev.zz * inv_two_mu,
                      xy=e_dev.xy - s_dev.xy * inv_two_mu)
    else:
        ep = None

    two_mu = 2.0 * material.mu
    for comp in ("xx", "yy", "zz", "xy"):
        e_c, s_c = getattr(e_dev, comp), getattr(s_dev, comp)
        if comp == "zz" and not plastic:
            # with the derived szz this duplicates the volumetric relation
            continue
        elastic_part = e_c - getattr(ep, comp) if ep is not None else e_c
        residual = (s_c - two_mu * elastic_part) * (1.0 / scales.sigma)
        acc.add(f"dev_{comp}", residual, n)

    flow_skipped = 0
    if plastic:
        ebar = effective_strain(e_dev)
        ebar_p_target = equivalent_plastic_strain(material, ebar)
        ebar_p_derived = effective_strain(ep)
        inv_eps = 1.0 / scales.strain
        acc.add("hardening", (ebar_p_derived - ebar_p_target) * inv_eps, n)

        sigma_e = effective_stress(s_dev)
        guard = FLOW_GUARD_REL * _floatval(material.sigma_y0)
        skip = np.asarray(sigma_e.value) < guard
        flow_skipped = int(skip.sum())
        usable = n - flow_skipped
        if flow_skipped:
            acc.notices.append(
                f"flow direction undefined at {flow_skipped} of {n} points "
                f"(effective stress below {guard:.3e})"
            )
        sigma_e_safe = tape.where(skip, 1.0, sigma_e)
        radial = 1.5 * ebar_p_target / sigma_e_safe
        for comp in ("xx", "yy", "zz", "xy"):
            residual = (getattr(ep, comp) - radial * getattr(s_dev, comp)) * inv_eps
            acc.add(f"flow_{comp}", tape.where(skip, 0.0, residual), usable)

    return LossBreakdown(total=acc.total, terms=acc.terms, weights=acc.weights,
                         counts=acc.counts, flow_skipped=flow_skipped,
                         notices=tuple(acc.notices))


class DataBackedFields:
    """Field provider that reads recorded channels instead of a model.

    Lets :func:`assemble_loss` grade a dataset directly — how well do the
    recorded fields satisfy the governing relations at given material
    constants? Displacement derivatives come from the strain channels; the
    two shear gradients are each reported as ``exy``, which leaves every
    symmetric combination the losses use correct (nothing consumes them
    separately). Stress derivatives, needed only by the equilibrium terms,
    must be supplied as ``derivs[(field, tag)]`` arrays over the full cloud.
    """

    _U_DERIVS = {("ux", (1, 0)): "exx", ("ux", (0, 1)): "exy",
                 ("uy", (1, 0)): "exy", ("uy", (0, 1)): "eyy"}

    def __init__(self, dataset, idx, derivs: Optional[dict] = None):
        self.dataset = dataset
        self.idx = np.asarray(idx, dtype=np.int64)
        self.derivs = derivs or {}

    def value(self, fld: str) -> np.ndarray:
        return self.dataset.values[fld][self.idx]

    def deriv(self, fld: str, tag) -> np.ndarray:
        key = (fld, tuple(tag))
        channel = self._U_DERIVS.get(key)
        if channel is not None:
            return self.dataset.values[channel][self.idx]
        if key in self.derivs:
            return np.asarray(self.derivs[key], dtype=np.float64)[self.idx]
        raise InvalidArgumentError(
            f"no recorded derivative for {fld} tag {tuple(tag)}; pass it via "
            f"'derivs' (only strain channels are implied by the data)"
        )


def dataset_residuals(dataset, material, idx=None, *,
                      sigma_derivs: Optional[dict] = None,
                      weights: Optional[dict] = None,
                      scales: Optional[ScaleSet] = None) -> LossBreakdown:
    """Grade a dataset against the governing relations at ``material``.

    Equilibrium terms are included only when the dataset asks for them *and*
    ``sigma_derivs`` provides the stress gradients; otherwise they are left
    out (recorded data carries no stress derivatives of its own).
    """
    if idx is None:
        idx = np.arange(len(dataset.points))
    if scales is None:
        scales = ScaleSet.from_dataset(dataset)
    span = dataset.points.max(axis=0) - dataset.points.min(axis=0)
    length = float(span.max()) if span.max() > 0 else 1.0
    include_equilibrium = dataset.equilibrium_terms and sigma_derivs is not None
    provider = DataBackedFields(dataset, idx, derivs=sigma_derivs)
    out = assemble_loss(provider, material, dataset, idx, scales=scales,
                        length_scale=length, weights=weights,
                        equilibrium=include_equilibrium)
    if dataset.equilibrium_terms and not include_equilibrium:
        out = LossBreakdown(
            total=out.total, terms=out.terms, weights=out.weights,
            counts=out.counts, flow_skipped=out.flow_skipped,
            notices=out.notices + (
                "equilibrium terms skipped: no stress derivatives supplied",),
        )
    return out
