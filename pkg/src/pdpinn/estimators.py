"""Scikit-learn style facades over the operator and training layers.

``PddoDerivatives`` is a transformer: fit it on the points of a uniform
grid, then turn columns of sampled field values into columns of derivative
values. ``ElastoplasticPinn`` is an estimator wrapping the whole training
loop: ``fit`` takes a :class:`~pdpinn.dataio.FieldDataset` and leaves the
usual trailing-underscore artifacts behind (``model_``, ``history_``,
``report_``). Both follow the get_params/set_params protocol so they
compose with sklearn model selection utilities.

The networks are tied to the points they were fitted on — the nonlocal
architectures have no meaning off the family structure — so ``predict``
returns values at the fitted points and accepts ``X`` only as a consistency
check.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import InvalidArgumentError, NotFittedError
from .mesh import PointCloud, build_families
from .models import FieldModel, MaterialModel, ScaleSet
from .pddo import apply_operator, build_operator_set, check_tag
from .trainer import TrainConfig, train
from .validation import as_points


def _collapse(sorted_values: np.ndarray, tol: float) -> np.ndarray:
    kept = [sorted_values[0]]
    for v in sorted_values[1:]:
        if v - kept[-1] > tol:
            kept.append(v)
    return np.asarray(kept)


def infer_grid(points) -> PointCloud:
    """Recover a uniform x-fastest grid from its points (any origin).

    Raises :class:`InvalidArgumentError` when the points are not such a
    grid: uneven spacing, wrong ordering, or missing entries.
    """
    pts = as_points(points)
    span = float(max(pts.max(axis=0).max() - pts.min(axis=0).min(), 1.0))
    tol = 1e-9 * span
    xs = _collapse(np.sort(np.unique(pts[:, 0])), tol)
    ys = _collapse(np.sort(np.unique(pts[:, 1])), tol)
    nx, ny = len(xs), len(ys)
    if nx * ny != len(pts):
        raise InvalidArgumentError(
            f"points do not fill a grid: {nx} x-levels times {ny} y-levels "
            f"!= {len(pts)} points")
    for name, levels in (("x", xs), ("y", ys)):
        if len(levels) > 2:
            gaps = np.diff(levels)
            if gaps.max() - gaps.min() > tol:
                raise InvalidArgumentError(f"{name} spacing is not uniform")
    dx = float(xs[1] - xs[0]) if nx > 1 else (float(ys[1] - ys[0]) if ny > 1 else 1.0)
    dy = float(ys[1] - ys[0]) if ny > 1 else dx
    gx, gy = np.meshgrid(xs, ys)
    expected = np.column_stack([gx.ravel(), gy.ravel()])
    if not np.allclose(pts, expected, rtol=0.0, atol=tol):
        raise InvalidArgumentError(
            "points must be ordered x-fastest, rows bottom to top")
    return PointCloud(points=pts.copy(), areas=np.full(len(pts), dx * dy),
                      spacing=dx, bounds=(float(xs[-1] - xs[0]) or dx,
                                          float(ys[-1] - ys[0]) or dy),
                      nx=nx, ny=ny)


class PddoDerivatives(TransformerMixin, BaseEstimator):
    """Turn sampled field columns into derivative columns on a uniform grid.

    Parameters mirror the family construction: ``tags`` picks the
    derivatives to emit (``(1, 0)`` is d/dx, up to second order), and the
    stencil halfwidth / horizon factor control each point's neighbourhood.

    ``fit`` consumes the (n, 2) grid points; ``transform`` consumes (n,) or
    (n, k) field values at those same points and returns an
    ``(n, k * len(tags))`` array, tag index varying fastest.
    """

    def __init__(self, tags=((1, 0), (0, 1)), stencil_halfwidth: int = 3,
                 delta_factor: float = 3.5):
        self.tags = tags
        self.stencil_halfwidth = stencil_halfwidth
        self.delta_factor = delta_factor

    def fit(self, X, y=None):
        for tag in self.tags:
            check_tag(tuple(tag))
        cloud = infer_grid(X)
        families = build_families(cloud,
                                  stencil_halfwidth=self.stencil_halfwidth,
                                  delta_factor=self.delta_factor)
        self.cloud_ = cloud
        self.opset_ = build_operator_set(cloud, families)
        self.n_features_in_ = 2
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "opset_"):
            raise NotFittedError("fit this transformer on grid points first")
        values = np.asarray(X, dtype=np.float64)
        squeeze = values.ndim == 1
        if squeeze:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != len(self.cloud_):
            raise InvalidArgumentError(
                f"expected value columns of length {len(self.cloud_)}, "
                f"got shape {values.shape}")
        if not np.isfinite(values).all():
            raise InvalidArgumentError("field values must be finite")
        tags = [tuple(t) for t in self.tags]
        out = np.empty((values.shape[0], values.shape[1] * len(tags)))
        for j in range(values.shape[1]):
            for i, tag in enumerate(tags):
                out[:, j * len(tags) + i] = apply_operator(
                    self.opset_, values[:, j], tag)
        return out


class ElastoplasticPinn(BaseEstimator):
    """Fit the field networks (and optionally material constants) to a dataset.

    ``material`` is a :class:`~pdpinn.constitutive.MaterialParams`; its
    ``train_*`` flags decide between a plain solve and identification, and
    ``guesses`` (internal names ``lam``/``mu``/``sigma_y0``/``hp``) seeds any
    trainable constants. ``fit(dataset)`` infers the grid from the dataset's
    points. Afterwards ``material_.current()`` holds the identified
    constants, ``history_`` the per-epoch record, and ``predict()`` the
    fields at the fitted points.
    """

    def __init__(self, material=None, architecture: str = "local",
                 hidden=(20, 20), activation: str = "tanh", seed: int = 0,
                 epochs: int = 200, batch_size: int = 0,
                 lr_start: float = 1e-2, lr_end: float = 1e-4,
                 patience: int = 0, weights: Optional[dict] = None,
                 guesses: Optional[dict] = None,
                 scale_overrides: Optional[dict] = None,
                 stencil_halfwidth: int = 3, delta_factor: float = 3.5,
                 center_only: bool = False):
        self.material = material
        self.architecture = architecture
        self.hidden = hidden
        self.activation = activation
        self.seed = seed
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.patience = patience
        self.weights = weights
        self.guesses = guesses
        self.scale_overrides = scale_overrides
        self.stencil_halfwidth = stencil_halfwidth
        self.delta_factor = delta_factor
        self.center_only = center_only

    def fit(self, X, y=None):
        dataset = X
        if self.material is None:
            raise InvalidArgumentError("set 'material' before fitting")
        if not hasattr(dataset, "values") or not hasattr(dataset, "masks"):
            raise InvalidArgumentError(
                "fit expects a FieldDataset (see pdpinn.dataio)")
        cloud = infer_grid(dataset.points)
        opset = None
        if self.architecture != "local":
            families = build_families(
                cloud, stencil_halfwidth=self.stencil_halfwidth,
                delta_factor=self.delta_factor)
            opset = build_operator_set(cloud, families)
        scales = ScaleSet.from_dataset(dataset, overrides=self.scale_overrides)
        model = FieldModel(cloud, self.architecture,
                           plastic=dataset.plastic_mode, scales=scales,
                           hidden=tuple(self.hidden),
                           activation=self.activation, seed=self.seed,
                           opset=opset, center_only=self.center_only)
        material = MaterialModel(self.material, self.guesses)
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          lr_start=self.lr_start, lr_end=self.lr_end,
                          seed=self.seed, patience=self.patience,
                          weights=self.weights)
        result = train(model, material, dataset, cfg)
        self.cloud_ = cloud
        self.opset_ = opset
        self.model_ = model
        self.material_ = material
        self.result_ = result
        self.history_ = result.history
        self.report_ = result.report
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("fit the estimator before using it")

    def predict(self, X=None) -> Dict[str, np.ndarray]:
        """Field values at the fitted points, one array per field."""
        self._check_fitted()
        if X is not None:
            pts = as_points(X)
            if pts.shape != self.cloud_.points.shape or not np.allclose(
                    pts, self.cloud_.points, rtol=0.0, atol=1e-9):
                raise InvalidArgumentError(
                    "the networks are tied to the fitted points; pass those "
                    "points (or nothing)")
        return self.model_.predict()

    def score(self, X=None, y=None) -> float:
        """Negative best training loss (higher is better)."""
        self._check_fitted()
        return -float(self.result_.best_total)
