"""Field datasets: manufactured generators, text round-trip, heatmaps.

A :class:`FieldDataset` couples a point cloud's coordinates with up to ten
observation channels (displacements, strains, stresses). Each channel carries
a boolean mask — the set of points where that channel is observed; physics
residuals are always evaluated at *all* points, data misfits only when the
mask says so.

File format (``save_fields``/``load_fields``): delimited text with ``#``
metadata lines, then a fixed header row ``x,y,ux,uy,...,sxy`` and one row per
point, empty cells marking unobserved channels. Floats are written with
shortest round-trip repr, so a load reproduces the arrays bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from .constitutive import MaterialParams, Tensor2D, stress_response
from .errors import DatasetFormatError, InvalidArgumentError
from .mesh import PointCloud
from .validation import as_points

CHANNELS = ("ux", "uy", "exx", "eyy", "ezz", "exy",
            "sxx", "syy", "szz", "sxy")

FIELDS_MAGIC = "pdpinn-fields 1"
HEATMAP_MAGIC = "pdpinn-heatmap 1"


@dataclass(frozen=True)
class FieldDataset:
    """Observed field values on a point cloud.

    ``values[ch]``/``masks[ch]`` are aligned with ``points``; entries with a
    False mask hold 0 and mean "not observed here". ``equilibrium_terms``
    records whether the fields satisfy momentum balance (manufactured
    non-equilibrated data must switch the equilibrium residuals off).
    """

    points: np.ndarray
    values: Dict[str, np.ndarray]
    masks: Dict[str, np.ndarray]
    equilibrium_terms: bool = True
    plastic_mode: bool = False
    provenance: str = ""
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        pts = as_points(self.points)
        object.__setattr__(self, "points", pts)
        n = pts.shape[0]
        for ch in self.values:
            if ch not in CHANNELS:
                raise InvalidArgumentError(f"unknown channel {ch!r}")
        values, masks = {}, {}
        for ch in CHANNELS:
            v = np.asarray(self.values.get(ch, np.zeros(n)), dtype=np.float64)
            m = np.asarray(self.masks.get(ch, np.zeros(n, dtype=bool)), dtype=bool)
            if v.shape != (n,) or m.shape != (n,):
                raise InvalidArgumentError(
                    f"channel {ch!r} must have shape ({n},)"
                )
            if not np.all(np.isfinite(v[m])):
                raise InvalidArgumentError(
                    f"channel {ch!r} has non-finite observed values"
                )
            v = np.where(m, v, 0.0)
            values[ch], masks[ch] = v, m
        if masks["ezz"].any() and np.any(values["ezz"][masks["ezz"]] != 0.0):
            raise InvalidArgumentError(
                "plane strain requires the ezz channel to be identically zero"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "masks", masks)

    def __len__(self) -> int:
        return self.points.shape[0]

    def observed(self, channel: str) -> int:
        return int(self.masks[channel].sum())

    def channel_scale(self, channels, fallback: float = 1.0) -> float:
        """Largest observed magnitude across ``channels`` (or ``fallback``)."""
        top = 0.0
        for ch in channels:
            m = self.masks[ch]
            if m.any():
                top = max(top, float(np.abs(self.values[ch][m]).max()))
        return top if top > 0.0 else fallback


def _dataset_from_fields(cloud: PointCloud, arrays: Dict[str, np.ndarray],
                         **kwargs) -> FieldDataset:
    n = len(cloud)
    masks = {ch: np.ones(n, dtype=bool) for ch in arrays}
    meta = kwargs.pop("meta", {})
    if cloud.is_grid:
        meta = {**meta, "nx": str(cloud.nx), "ny": str(cloud.ny),
                "width": repr(cloud.bounds[0]), "height": repr(cloud.bounds[1])}
    return FieldDataset(points=cloud.points.copy(), values=arrays, masks=masks,
                        meta=meta, **kwargs)


def generate_elastic_manufactured(cloud: PointCloud, kind: str,
                                  amplitude: float,
                                  material: MaterialParams,
                                  coeffs=None) -> FieldDataset:
    """Closed-form elastic fields on a cloud; stresses satisfy equilibrium.

    ``constant_strain``: ``u = (a x + b y, c x + d y)`` with
    ``(a, b, c, d) = coeffs`` (default ``amplitude * (1, 0.3, -0.2, 0.6)``) —
    uniform strain and stress.

    ``harmonic_quadratic``: ``u = k (x^2 - y^2), -2 k x y`` with
    ``k = amplitude`` — divergence-free, componentwise harmonic, linearly
    varying stress with zero trace.
    """
    x, y = cloud.points[:, 0], cloud.points[:, 1]
    n = len(cloud)
    if kind == "constant_strain":
        if coeffs is None:
            coeffs = (amplitude, 0.3 * amplitude, -0.2 * amplitude,
                      0.6 * amplitude)
        a, b, c, d = (float(v) for v in coeffs)
        ux, uy = a * x + b * y, c * x + d * y
        exx = np.full(n, a)
        eyy = np.full(n, d)
        exy = np.full(n, 0.5 * (b + c))
    elif kind == "harmonic_quadratic":
        k = float(amplitude)
        ux, uy = k * (x * x - y * y), -2.0 * k * x * y
        exx, eyy, exy = 2.0 * k * x, -2.0 * k * x, -2.0 * k * y
    else:
        raise InvalidArgumentError(f"unknown elastic kind {kind!r}")
    strain = Tensor2D(exx, eyy, np.zeros(n), exy)
    stress, state = stress_response(material, strain)
    if np.any(state.ebar_p > 0.0):
        raise InvalidArgumentError(
            f"amplitude {amplitude:g} drives {kind!r} past yield; lower it or "
            f"use the plastic generator"
        )
    arrays = {"ux": ux, "uy": uy, "exx": exx, "eyy": eyy,
              "ezz": np.zeros(n), "exy": exy,
              "sxx": np.asarray(stress.xx), "syy": np.asarray(stress.yy),
              "szz": np.asarray(stress.zz), "sxy": np.asarray(stress.xy)}
    provenance = (f"manufactured elastic kind={kind} amplitude={amplitude!r} "
                  f"lam={material.lam!r} mu={material.mu!r}")
    return _dataset_from_fields(cloud, arrays, equilibrium_terms=True,
                                plastic_mode=False, provenance=provenance)


def plastic_profile(points: np.ndarray, bounds, depth: float,
                    punch_width: float, front_width: float) -> dict:
    """Displacement profile with a localized plastic front, plus exact gradients.

    ``uy = -depth * s(x) * (y / H)^2`` where ``s`` is a smoothed indicator of
    the band ``|x - W/2| < punch_width / 2`` with transition width
    ``front_width``; ``ux = 0``. Returns ``ux, uy, dux_dx, dux_dy, duy_dx,
    duy_dy`` evaluated analytically.
    """
    width, height = bounds
    x, y = points[:, 0], points[:, 1]
    xl = 0.5 * (width - punch_width)
    xr = 0.5 * (width + punch_width)
    tl = np.tanh((x - xl) / front_width)
    tr = np.tanh((x - xr) / front_width)
    s = 0.25 * (1.0 + tl) * (1.0 - tr)
    ds = 0.25 * ((1.0 - tl * tl) * (1.0 - tr)
                 - (1.0 + tl) * (1.0 - tr * tr)) / front_width
    q = (y / height) ** 2
    dq = 2.0 * y / height ** 2
    zeros = np.zeros_like(x)
    return {"ux": zeros, "uy": -depth * s * q,
            "dux_dx": zeros, "dux_dy": zeros,
            "duy_dx": -depth * ds * q, "duy_dy": -depth * s * dq}


def generate_plastic_manufactured(cloud: PointCloud, material: MaterialParams,
                                  depth: float, punch_width: float = 0.3,
                                  front_width: float = 0.05) -> FieldDataset:
    """Manufactured elastoplastic fields with a sharp yield front.

    Displacements follow :func:`plastic_profile`; strains are its exact
    gradients and stresses come from the deformation-theory closure, so all
    constitutive relations hold pointwise. The fields do *not* satisfy
    momentum balance — ``equilibrium_terms`` is off. The fraction of points
    past yield is recorded in ``meta['plastic_fraction']``; a dataset with no
    yielded points triggers a warning.
    """
    prof = plastic_profile(cloud.points, cloud.bounds, depth, punch_width,
                           front_width)
    n = len(cloud)
    exx = prof["dux_dx"]
    eyy = prof["duy_dy"]
    exy = 0.5 * (prof["dux_dy"] + prof["duy_dx"])
    strain = Tensor2D(exx, eyy, np.zeros(n), exy)
    stress, state = stress_response(material, strain)
    fraction = float(np.mean(state.ebar_p > 0.0))
    if fraction == 0.0:
        warnings.warn("plastic generator produced no yielded points; "
                      "increase depth or sharpen the front", stacklevel=2)
    arrays = {"ux": prof["ux"], "uy": prof["uy"], "exx": exx, "eyy": eyy,
              "ezz": np.zeros(n), "exy": exy,
              "sxx": np.asarray(stress.xx), "syy": np.asarray(stress.yy),
              "szz": np.asarray(stress.zz), "sxy": np.asarray(stress.xy)}
    provenance = (f"manufactured plastic depth={depth!r} "
                  f"punch_width={punch_width!r} front_width={front_width!r} "
                  f"sigma_y0={material.sigma_y0!r} hp={material.hp!r}")
    return _dataset_from_fields(
        cloud, arrays, equilibrium_terms=False, plastic_mode=True,
        provenance=provenance, meta={"plastic_fraction": repr(fraction)})


def sample_index_sets(dataset: FieldDataset, counts: Dict[str, int],
                      seed: int) -> FieldDataset:
    """Thin observation masks: keep ``counts[ch]`` points per channel.

    Sampling is uniform without replacement among the currently observed
    points of each channel, deterministic in ``seed`` (channels are processed
    in sorted order). Channels not named keep their masks.
    """
    rng = np.random.default_rng(seed)
    masks = dict(dataset.masks)
    for ch in sorted(counts):
        if ch not in CHANNELS:
            raise InvalidArgumentError(f"unknown channel {ch!r}")
        want = int(counts[ch])
        observed = np.flatnonzero(masks[ch])
        if want < 0 or want > observed.size:
            raise InvalidArgumentError(
                f"cannot keep {want} of {observed.size} observed points "
                f"for channel {ch!r}"
            )
        keep = rng.choice(observed, size=want, replace=False)
        mask = np.zeros(len(dataset), dtype=bool)
        mask[keep] = True
        masks[ch] = mask
    return replace(dataset, masks=masks)


# -- text round-trip ----------------------------------------------------------

def save_fields(dataset: FieldDataset, path) -> None:
    """Write a dataset in the documented delimited-text format."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {FIELDS_MAGIC}\n")
        fh.write(f"# equilibrium_terms={'on' if dataset.equilibrium_terms else 'off'}\n")
        fh.write(f"# plastic_mode={'on' if dataset.plastic_mode else 'off'}\n")
        if dataset.provenance:
            fh.write(f"# provenance={dataset.provenance}\n")
        for key in sorted(dataset.meta):
            fh.write(f"# {key}={dataset.meta[key]}\n")
        fh.write("x,y," + ",".join(CHANNELS) + "\n")
        for i in range(len(dataset)):
            cells = [repr(float(dataset.points[i, 0])),
                     repr(float(dataset.points[i, 1]))]
            for ch in CHANNELS:
                cells.append(repr(float(dataset.values[ch][i]))
                             if dataset.masks[ch][i] else "")
            fh.write(",".join(cells) + "\n")


def load_fields(path) -> FieldDataset:
    """Read a file written by :func:`save_fields`.

    Raises :class:`DatasetFormatError` naming the first malformed line.
    """
    header = "x,y," + ",".join(CHANNELS)
    points, columns = [], {ch: ([], []) for ch in CHANNELS}
    flags = {"equilibrium_terms": True, "plastic_mode": False}
    provenance, meta = "", {}
    saw_magic = saw_header = False
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DatasetFormatError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body == FIELDS_MAGIC:
                    saw_magic = True
                elif "=" in body:
                    key, value = body.split("=", 1)
                    if key == "equilibrium_terms":
                        flags["equilibrium_terms"] = value == "on"
                    elif key == "plastic_mode":
                        flags["plastic_mode"] = value == "on"
                    elif key == "provenance":
                        provenance = value
                    else:
                        meta[key] = value
                continue
            if not saw_header:
                if line != header:
                    raise DatasetFormatError(
                        f"{path}: line {lineno}: expected header {header!r}, "
                        f"got {line!r}"
                    )
                saw_header = True
                continue
            cells = line.split(",")
            if len(cells) != 2 + len(CHANNELS):
                raise DatasetFormatError(
                    f"{path}: line {lineno}: expected {2 + len(CHANNELS)} "
                    f"cells, got {len(cells)}"
                )
            try:
                points.append((float(cells[0]), float(cells[1])))
                for ch, cell in zip(CHANNELS, cells[2:]):
                    vals, mask = columns[ch]
                    stripped = cell.strip()
                    vals.append(float(stripped) if stripped else 0.0)
                    mask.append(bool(stripped))
            except ValueError as exc:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: {exc}"
                ) from None
    if not saw_magic:
        raise DatasetFormatError(f"{path}: missing '# {FIELDS_MAGIC}' marker")
    if not saw_header or not points:
        raise DatasetFormatError(f"{path}: no data rows found")
    values = {ch: np.array(vals) for ch, (vals, _) in columns.items()}
    masks = {ch: np.array(mask, dtype=bool) for ch, (_, mask) in columns.items()}
    return FieldDataset(points=np.array(points), values=values, masks=masks,
                        provenance=provenance, meta=meta, **flags)


def grid_from_meta(dataset: FieldDataset) -> Optional[tuple]:
    """Recover ``(nx, ny)`` recorded by the generators, if present."""
    try:
        return int(dataset.meta["nx"]), int(dataset.meta["ny"])
    except (KeyError, ValueError):
        return None


# -- heatmaps -----------------------------------------------------------------

def write_heatmap(values, shape: tuple, path) -> None:
    """Render one channel as an ASCII portable graymap (P2).

    ``values`` are grid-ordered (x fastest, rows bottom to top, as produced
    by :func:`pdpinn.mesh.build_grid`); the raster is flipped so image rows
    run top to bottom. Values map linearly onto 0..255 with the observed min
    and max recorded in a comment; a constant field renders mid-gray (128)
    and is flagged in the comment.
    """
    nx, ny = int(shape[0]), int(shape[1])
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size != nx * ny:
        raise InvalidArgumentError(
            f"expected {nx * ny} values for a {nx}x{ny} grid, got {values.size}"
        )
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("heatmap values must be finite")
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        pixels = np.floor(255.0 * (values - lo) / (hi - lo) + 0.5).astype(int)
        comment = f"# {HEATMAP_MAGIC} min={lo!r} max={hi!r}"
    else:
        pixels = np.full(values.size, 128, dtype=int)
        comment = f"# {HEATMAP_MAGIC} min={lo!r} max={hi!r} constant=1"
    rows = pixels.reshape(ny, nx)[::-1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("P2\n")
        fh.write(comment + "\n")
        fh.write(f"{nx} {ny}\n255\n")
        for row in rows:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")
