"""Nonlocal reconstruction of function values and derivatives on point clouds.

For each family (see :mod:`pdpinn.mesh`) we build six weight vectors
``G^(p1,p2)`` — one per derivative tag — such that the plain dot product

    sum_j f(x_j) * G^(p1,p2)_j     (j over family members)

reproduces ``d^(p1+p2) f / dx1^p1 dx2^p2`` at the family centre, exactly for
polynomials up to total degree 2. The weights come from a 6x6 moment system
per family: with the monomial basis ``{1, x1, x2, x1^2, x2^2, x1*x2}``
evaluated at the relative positions ``xi_j = x_j - x_center`` and the
Gaussian weights ``w_j``, the coefficients ``a`` solve ``A a = b`` where

    A[r, c] = sum_j w_j m_r(xi_j) m_c(xi_j) area_j,
    b       = diag(1, 1, 1, 2, 2, 1)   (the factorials n1! n2!),

and ``G^(p)_j = w_j (sum_q a[q, p] m_q(xi_j)) * area_j``. The diagonal ``b``
enforces the orthogonality conditions

    (1 / (n1! n2!)) sum_j xi1^n1 xi2^n2 G^(p1,p2)_j = delta_(n1,p1) delta_(n2,p2),

which is what :func:`orthogonality_residual` measures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (InvalidArgumentError, SingularMomentMatrixError,
                     UnsupportedOrderError)
from .mesh import MIN_FAMILY_SIZE, PointCloud, PointFamily
from .validation import as_field

#: The six supported derivative tags (p1, p2), in basis/column order.
TAGS = ((0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1))

TAG_INDEX = {tag: k for k, tag in enumerate(TAGS)}

TAG_NAMES = {(0, 0): "value", (1, 0): "d/dx", (0, 1): "d/dy",
             (2, 0): "d2/dx2", (0, 2): "d2/dy2", (1, 1): "d2/dxdy"}

#: Factorial normalizations n1! * n2!, i.e. the diagonal of b.
FACTORIALS = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 1.0])


def check_tag(tag) -> tuple:
    tag = (int(tag[0]), int(tag[1]))
    if tag not in TAG_INDEX:
        raise UnsupportedOrderError(
            f"derivative tag {tag} is outside the supported table {TAGS}"
        )
    return tag


def monomial_basis(xi: np.ndarray) -> np.ndarray:
    """Evaluate ``{1, x1, x2, x1^2, x2^2, x1 x2}`` at rows of ``xi`` -> (m, 6)."""
    x1, x2 = xi[:, 0], xi[:, 1]
    return np.column_stack([np.ones_like(x1), x1, x2, x1 * x1, x2 * x2, x1 * x2])


def assemble_moment_matrix(family: PointFamily, areas: np.ndarray) -> np.ndarray:
    """Weighted moment matrix ``A`` of one family (symmetric, 6x6).

    ``areas`` must be aligned with ``family.member_indices``.
    """
    if len(family) < MIN_FAMILY_SIZE:
        raise InvalidArgumentError(
            f"family of point {family.center_index} has {len(family)} members; "
            f"the moment system needs at least {MIN_FAMILY_SIZE}"
        )
    areas = as_field(areas, len(family), "areas")
    phi = monomial_basis(family.xi)
    return (phi * (family.weights * areas)[:, None]).T @ phi


def right_hand_side() -> np.ndarray:
    """The diagonal matrix ``b`` of factorial targets."""
    return np.diag(FACTORIALS)


def solve_pd_coefficients(moment_matrix: np.ndarray,
                          point_index: Optional[int] = None) -> np.ndarray:
    """Solve ``A a = b`` by LU with partial pivoting.

    Returns ``a`` with one column per derivative tag. A pivot smaller than
    ``1e-12 * max|A|`` aborts with :class:`SingularMomentMatrixError` carrying
    the offending point (when given) and a crude condition estimate.
    """
    a_mat = np.array(moment_matrix, dtype=np.float64)
    if a_mat.shape != (6, 6):
        raise InvalidArgumentError(f"moment matrix must be 6x6, got {a_mat.shape}")
    scale = np.abs(a_mat).max()
    threshold = 1e-12 * scale
    lu = a_mat.copy()
    rhs = right_hand_side()
    n = 6
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(lu[col:, col])))
        pivot = lu[pivot_row, col]
        if not np.isfinite(pivot) or abs(pivot) <= threshold:
            with np.errstate(over="ignore"):
                cond = scale / max(abs(pivot), np.finfo(float).tiny)
            where = f" of point {point_index}" if point_index is not None else ""
            raise SingularMomentMatrixError(
                f"moment matrix{where} is numerically singular at elimination "
                f"column {col} (pivot {pivot:.3e}, threshold {threshold:.3e}, "
                f"condition estimate ~{cond:.3e})"
            )
        if pivot_row != col:
            lu[[col, pivot_row]] = lu[[pivot_row, col]]
            rhs[[col, pivot_row]] = rhs[[pivot_row, col]]
        factors = lu[col + 1:, col] / pivot
        lu[col + 1:, col:] -= factors[:, None] * lu[col, col:]
        rhs[col + 1:] -= factors[:, None] * rhs[col]
    coeffs = np.empty((6, 6))
    for col in range(n - 1, -1, -1):
        coeffs[col] = (rhs[col] - lu[col, col + 1:] @ coeffs[col + 1:]) / lu[col, col]
    return coeffs


def evaluate_g_weights(family: PointFamily, coeffs: np.ndarray,
                       areas: np.ndarray) -> np.ndarray:
    """Area-scaled reconstruction weights ``G`` -> (6, m), rows in tag order."""
    areas = as_field(areas, len(family), "areas")
    phi = monomial_basis(family.xi)
    g = (phi @ coeffs).T * family.weights[None, :]
    return g * areas[None, :]


@dataclass
class PdOperatorSet:
    """Reconstruction weights for every family of a cloud.

    ``g_weights[k]`` is the (6, m_k) table of :func:`evaluate_g_weights` for
    family ``k``. ``padded(tag)`` exposes the same weights as a dense
    (n_points, n_slots) matrix aligned with the families' slot layout, with
    zeros on absent slots; ``slot_map`` carries the matching point indices
    (clipped to 0 where absent, which is safe because the weight there is 0).
    """

    cloud: PointCloud
    families: list
    g_weights: list

    def __post_init__(self):
        self._padded = None
        self._slot_map = None

    def _build_padded(self):
        n = len(self.families)
        n_slots = self.families[0].slot_members.shape[0]
        padded = np.zeros((6, n, n_slots))
        slot_map = np.zeros((n, n_slots), dtype=np.int64)
        for k, fam in enumerate(self.families):
            present = fam.slot_members >= 0
            slot_map[k] = np.where(present, fam.slot_members, 0)
            padded[:, k, present] = self.g_weights[k]
        self._padded = padded
        self._slot_map = slot_map

    @property
    def slot_map(self) -> np.ndarray:
        if self._slot_map is None:
            self._build_padded()
        return self._slot_map

    def padded(self, tag) -> np.ndarray:
        tag = check_tag(tag)
        if self._padded is None:
            self._build_padded()
        return self._padded[TAG_INDEX[tag]]


def build_operator_set(cloud: PointCloud, families: Sequence[PointFamily]) -> PdOperatorSet:
    """Assemble and solve the moment system of every family."""
    g_weights = []
    for fam in families:
        areas = cloud.areas[fam.member_indices]
        moments = assemble_moment_matrix(fam, areas)
        coeffs = solve_pd_coefficients(moments, point_index=fam.center_index)
        g_weights.append(evaluate_g_weights(fam, coeffs, areas))
    return PdOperatorSet(cloud=cloud, families=list(families), g_weights=g_weights)


def apply_operator(opset: PdOperatorSet, field, tag) -> np.ndarray:
    """Reconstruct a derivative of ``field`` at every cloud point.

    ``field`` holds one sample per cloud point; ``tag`` is one of
    :data:`TAGS`. Returns the reconstructed values as an (n,) array.
    """
    tag = check_tag(tag)
    field = as_field(field, len(opset.cloud), "field")
    weights = opset.padded(tag)
    return np.sum(field[opset.slot_map] * weights, axis=1)


def orthogonality_residual(opset: PdOperatorSet, index: int) -> float:
    """Worst violation of the moment conditions for family ``index``.

    Zero (to round-off) means the six weight vectors exactly annihilate /
    reproduce all quadratic monomials at that family's centre.
    """
    fam = opset.families[index]
    phi = monomial_basis(fam.xi)
    # moments[p, n] = sum_j G^(p)_j * xi^n / (n1! n2!)
    moments = (opset.g_weights[index] @ phi) / FACTORIALS[None, :]
    return float(np.abs(moments - np.eye(6)).max())


def worst_orthogonality_residual(opset: PdOperatorSet) -> float:
    return max(orthogonality_residual(opset, k) for k in range(len(opset.families)))


# -- plain-text export --------------------------------------------------------

OPERATOR_TABLE_MAGIC = "pdpinn-operators 1"


def save_operator_set(opset: PdOperatorSet, path) -> None:
    """Write the weight tables to a versioned plain-text file.

    Line format (whitespace-delimited, one line per point and tag)::

        point p1 p2 m member_indices... G_weights...

    Floats use shortest round-trip repr, so the file reloads losslessly.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {OPERATOR_TABLE_MAGIC}\n")
        fh.write("# point p1 p2 m members... weights...\n")
        for fam, g in zip(opset.families, opset.g_weights):
            members = " ".join(str(int(i)) for i in fam.member_indices)
            for tag, row in zip(TAGS, g):
                values = " ".join(repr(float(v)) for v in row)
                fh.write(f"{fam.center_index} {tag[0]} {tag[1]} "
                         f"{len(fam)} {members} {values}\n")


def load_operator_table(path) -> list:
    """Parse a file written by :func:`save_operator_set`.

    Returns a list of ``(point, tag, member_indices, weights)`` records.
    """
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read operator table {path}: {exc}") from exc
    with fh:
        first = fh.readline().strip()
        if first != f"# {OPERATOR_TABLE_MAGIC}":
            raise InvalidArgumentError(
                f"unrecognized operator table header: {first!r}"
            )
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            point, p1, p2, m = (int(parts[0]), int(parts[1]),
                                int(parts[2]), int(parts[3]))
            members = np.array([int(v) for v in parts[4:4 + m]], dtype=np.int64)
            weights = np.array([float(v) for v in parts[4 + m:4 + 2 * m]])
            records.append((point, (p1, p2), members, weights))
    return records
