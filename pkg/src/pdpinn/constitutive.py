"""Plane-strain J2 elastoplasticity with linear isotropic hardening.

Deformation-theory form: total strain decides everything. Given the deviatoric
strain ``e`` with effective measure ``ebar = sqrt(2/3 e:e)``, the equivalent
plastic strain is the ramp

    ebar_p = max(0, (3 mu ebar - sigma_y0) / (3 mu + hp)),

plastic flow is radial (``e_p = ebar_p / ebar * e``), the deviatoric stress is
``s = 2 mu (e - e_p)``, pressure is ``p = -(lambda + 2 mu / 3) tr(eps)``, and
the yield function ``f = sigma_e - (sigma_y0 + hp * ebar_p)`` closes to zero
whenever ``ebar_p > 0``.

Tensors are stored with the four plane-strain-relevant components
``(xx, yy, zz, xy)``; ``xy`` is the *tensor* shear component (half the
engineering shear). Double contractions therefore count ``xy`` twice.
All quantities are SI (Pa, m); unit conversion happens at the config boundary.

The invariant helpers (:func:`effective_strain`, :func:`effective_stress`,
:func:`equivalent_plastic_strain`, :func:`yield_value`) are duck-typed: they
accept numpy arrays or autodiff :class:`~pdpinn.tape.Var` nodes alike, so the
loss assembly uses exactly these formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from . import tape
from .errors import DegenerateFlowDirectionError, InvalidArgumentError
from .tape import Var

#: Relative threshold on sigma_e below which a plastic flow direction is
#: considered undefined.
FLOW_GUARD_REL = 1e-6

Scalar = Union[float, np.ndarray, Var]


def _sqrt(x: Scalar) -> Scalar:
    return tape.sqrt(x) if isinstance(x, Var) else np.sqrt(x)


def _ramp(x: Scalar) -> Scalar:
    return tape.relu(x) if isinstance(x, Var) else np.maximum(x, 0.0)


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic material constants and their identification flags.

    ``lam``/``mu`` are the Lame constants, ``sigma_y0`` the initial yield
    stress, ``hp`` the linear hardening modulus. The ``train_*`` flags mark
    which constants an identification run may update.
    """

    lam: float
    mu: float
    sigma_y0: float
    hp: float
    train_lam: bool = False
    train_mu: bool = False
    train_sigma_y0: bool = False
    train_hp: bool = False

    def __post_init__(self):
        if not np.isfinite([self.lam, self.mu, self.sigma_y0, self.hp]).all():
            raise InvalidArgumentError("material constants must be finite")
        if self.mu <= 0.0:
            raise InvalidArgumentError(f"mu must be positive, got {self.mu}")
        if self.bulk <= 0.0:
            raise InvalidArgumentError(
                f"bulk modulus lambda + 2 mu / 3 must be positive, got {self.bulk}"
            )
        if self.sigma_y0 <= 0.0:
            raise InvalidArgumentError(
                f"sigma_y0 must be positive, got {self.sigma_y0}"
            )
        if self.hp < 0.0:
            raise InvalidArgumentError(f"hp must be >= 0, got {self.hp}")

    @property
    def bulk(self) -> float:
        return self.lam + 2.0 * self.mu / 3.0

    @property
    def poisson(self) -> float:
        return self.lam / (2.0 * (self.lam + self.mu))

    def with_values(self, **kwargs) -> "MaterialParams":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class Tensor2D:
    """Symmetric second-order tensor under plane strain: (xx, yy, zz, xy)."""

    xx: Scalar
    yy: Scalar
    zz: Scalar
    xy: Scalar

    @property
    def trace(self) -> Scalar:
        return self.xx + self.yy + self.zz

    def double_dot(self) -> Scalar:
        """Full contraction with itself; the two shear slots count twice."""
        return (self.xx * self.xx + self.yy * self.yy + self.zz * self.zz
                + 2.0 * self.xy * self.xy)

    def deviator(self) -> "Tensor2D":
        mean = self.trace * (1.0 / 3.0)
        return Tensor2D(self.xx - mean, self.yy - mean, self.zz - mean, self.xy)

    def as_array(self) -> np.ndarray:
        return np.stack([np.asarray(self.xx), np.asarray(self.yy),
                         np.asarray(self.zz), np.asarray(self.xy)])


@dataclass(frozen=True)
class PlasticState:
    """Derived plastic quantities at a point (or array of points)."""

    ebar: Scalar
    ebar_p: Scalar
    ep: Tensor2D


def lame_from_engineering(e: float, nu: float) -> tuple:
    """Convert Young's modulus / Poisson ratio to the Lame pair.

    ``nu`` must lie strictly inside (-1, 0.5); the incompressible limit has
    no finite ``lambda``.
    """
    if e <= 0.0 or not np.isfinite(e):
        raise InvalidArgumentError(f"Young's modulus must be positive, got {e}")
    if not (-1.0 < nu < 0.5):
        raise InvalidArgumentError(
            f"Poisson ratio must lie in (-1, 0.5), got {nu}"
        )
    lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = e / (2.0 * (1.0 + nu))
    return lam, mu


def strain_from_gradients(dux_dx, dux_dy, duy_dx, duy_dy) -> Tensor2D:
    """Small-strain tensor from displacement gradients; plane strain so zz = 0."""
    zero = dux_dx * 0.0
    return Tensor2D(xx=dux_dx, yy=duy_dy, zz=zero,
                    xy=0.5 * (dux_dy + duy_dx))


def split_deviatoric(strain: Tensor2D) -> tuple:
    """Return (deviatoric part, volumetric trace)."""
    return strain.deviator(), strain.trace


def effective_strain(dev: Tensor2D) -> Scalar:
    """``sqrt(2/3 e:e)`` of a deviatoric tensor."""
    return _sqrt(dev.double_dot() * (2.0 / 3.0))


def effective_stress(dev: Tensor2D) -> Scalar:
    """Von Mises measure ``sqrt(3/2 s:s)`` of a deviatoric tensor."""
    return _sqrt(1.5 * dev.double_dot())


def equivalent_plastic_strain(material, ebar: Scalar) -> Scalar:
    """Ramp form of the hardening relation; zero below the yield onset.

    ``material`` only needs ``mu``, ``sigma_y0`` and ``hp`` attributes, which
    may themselves be graph nodes during identification.
    """
    return _ramp((3.0 * material.mu * ebar - material.sigma_y0)
                 / (3.0 * material.mu + material.hp))


def yield_value(material, sigma_e: Scalar, ebar_p: Scalar) -> Scalar:
    """Yield function ``f = sigma_e - (sigma_y0 + hp * ebar_p)``."""
    return sigma_e - (material.sigma_y0 + material.hp * ebar_p)


def plastic_strain_tensor(material: MaterialParams, stress_dev: Tensor2D,
                          ebar_p) -> Tensor2D:
    """Radial plastic strain ``(3/2) ebar_p / sigma_e * s`` (array-space).

    Points with ``ebar_p == 0`` get an exactly-zero tensor no matter the
    stress. A vanishing deviatoric stress where ``ebar_p > 0`` has no defined
    flow direction and raises :class:`DegenerateFlowDirectionError`.
    """
    ebar_p = np.asarray(ebar_p, dtype=np.float64)
    sigma_e = effective_stress(stress_dev)
    guard = FLOW_GUARD_REL * material.sigma_y0
    degenerate = (ebar_p > 0.0) & (sigma_e < guard)
    if np.any(degenerate):
        raise DegenerateFlowDirectionError(
            f"plastic strain requested at {int(np.sum(degenerate))} point(s) "
            f"with sigma_e < {guard:.3e} but ebar_p > 0"
        )
    active = ebar_p > 0.0
    factor = np.where(active, 1.5 * ebar_p / np.where(active, sigma_e, 1.0), 0.0)
    return Tensor2D(factor * np.asarray(stress_dev.xx),
                    factor * np.asarray(stress_dev.yy),
                    factor * np.asarray(stress_dev.zz),
                    factor * np.asarray(stress_dev.xy))


def stress_response(material: MaterialParams, strain: Tensor2D) -> tuple:
    """Full deformation-theory closure (array-space).

    Returns ``(stress, PlasticState)``. Elastic points keep ``ebar_p = 0``
    exactly; plastic points satisfy the yield closure ``f = 0``.
    """
    dev, tr = split_deviatoric(strain)
    ebar = effective_strain(dev)
    ebar_p = equivalent_plastic_strain(material, ebar)
    active = ebar_p > 0.0
    ratio = np.where(active, ebar_p / np.where(ebar > 0.0, ebar, 1.0), 0.0)
    elastic_factor = 2.0 * material.mu * (1.0 - ratio)
    s = Tensor2D(elastic_factor * np.asarray(dev.xx),
                 elastic_factor * np.asarray(dev.yy),
                 elastic_factor * np.asarray(dev.zz),
                 elastic_factor * np.asarray(dev.xy))
    pressure = -material.bulk * tr
    stress = Tensor2D(s.xx - pressure, s.yy - pressure, s.zz - pressure, s.xy)
    ep = Tensor2D(ratio * np.asarray(dev.xx), ratio * np.asarray(dev.yy),
                  ratio * np.asarray(dev.zz), ratio * np.asarray(dev.xy))
    return stress, PlasticState(ebar=ebar, ebar_p=ebar_p, ep=ep)


def plane_strain_szz(material, sxx: Scalar, syy: Scalar) -> Scalar:
    """Elastic plane-strain closure ``szz = nu (sxx + syy)``.

    ``material.lam``/``material.mu`` may be graph nodes; the Poisson ratio is
    formed from them directly so gradients flow.
    """
    return (sxx + syy) * material.lam / (2.0 * (material.lam + material.mu))


def pressure_from_stress(sxx: Scalar, syy: Scalar, szz: Scalar) -> Scalar:
    """Mechanical pressure ``p = -tr(sigma) / 3``."""
    return -(sxx + syy + szz) * (1.0 / 3.0)
