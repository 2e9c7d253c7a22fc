"""Adam training loop over field networks and material thetas.

One epoch shuffles the collocation indices with a seeded generator, walks
them in mini-batches (the remainder forms a short final batch), and for each
batch rebuilds the loss graph, backpropagates, and applies one Adam update
to every trainable leaf. Per-term epoch means are aggregated count-weighted
across batches so the logged numbers do not depend on the batch split.

The run is deterministic for a fixed config: same shuffles, same updates,
same history bytes. A non-finite loss or a poisoned gradient aborts the run
and restores the last state that finished an epoch cleanly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import InvalidArgumentError, PoisonedGradientError
from .models import FieldModel, MaterialModel
from .residuals import assemble_loss
from .tape import zero_grads

HISTORY_MAGIC = "pdpinn-history 1"

#: material columns appended to every history row
MATERIAL_COLUMNS = ("lam", "mu", "sigma_y0", "hp")


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 0          # 0 = full batch
    lr_start: float = 1e-2
    lr_end: float = 1e-4
    seed: int = 0
    patience: int = 0            # 0 = disabled
    weights: Optional[dict] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr_start <= 0 or self.lr_end <= 0:
            raise InvalidArgumentError("learning rates must be positive")
        if self.batch_size < 0:
            raise InvalidArgumentError("batch_size must be >= 0")
        if self.patience < 0:
            raise InvalidArgumentError("patience must be >= 0")


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Geometric decay from ``lr_start`` (epoch 0) to ``lr_end`` (last epoch)."""
    if cfg.epochs == 1:
        return cfg.lr_start
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


class Adam:
    """Standard Adam with bias correction; state is kept per leaf position."""

    def __init__(self, leaves, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.leaves = list(leaves)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(l.value) for l in self.leaves]
        self.v = [np.zeros_like(l.value) for l in self.leaves]

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, leaf in enumerate(self.leaves):
            g = leaf.grad
            if g is None:
                g = np.zeros_like(leaf.value)
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            leaf.value = leaf.value - lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class ParamReport:
    name: str
    value: float
    generating: float
    relative_error: float


@dataclass
class TrainResult:
    history: List[dict]
    report: List[ParamReport]
    best_epoch: int
    best_total: float
    stopped_early: bool = False
    aborted: Optional[str] = None
    term_names: tuple = ()

    def history_text(self) -> str:
        """Reproducible text table; identical runs give identical bytes."""
        cols = ["epoch", "lr", "total", *self.term_names, *MATERIAL_COLUMNS]
        lines = [HISTORY_MAGIC, " ".join(cols)]
        for row in self.history:
            cells = [str(row["epoch"])]
            cells += [repr(float(row[c])) for c in cols[1:]]
            lines.append(" ".join(cells))
        return "\n".join(lines) + "\n"

    def report_text(self) -> str:
        if not self.report:
            return "no trainable material constants\n"
        lines = ["identified material constants",
                 f"{'name':<10} {'value':>14} {'generating':>14} {'rel error':>10}"]
        for r in self.report:
            lines.append(f"{r.name:<10} {r.value:>14.6e} {r.generating:>14.6e} "
                         f"{r.relative_error:>10.3e}")
        return "\n".join(lines) + "\n"


def _material_row(material: MaterialModel) -> Dict[str, float]:
    cur = material.current()
    return {c: getattr(cur, c) for c in MATERIAL_COLUMNS}


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    if batch_size <= 0 or batch_size >= n:
        yield perm
        return
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def train(model: FieldModel, material: MaterialModel, dataset,
          cfg: TrainConfig,
          progress: Optional[Callable[[int, float, dict], None]] = None,
          progress_every: int = 100) -> TrainResult:
    """Fit the field networks (and any trainable material thetas) to a dataset."""
    n = len(dataset.points)
    span = dataset.points.max(axis=0) - dataset.points.min(axis=0)
    length = float(span.max()) if span.max() > 0 else 1.0
    leaves = model.leaves() + material.leaves()
    adam = Adam(leaves)
    rng = np.random.default_rng(cfg.seed)

    history: List[dict] = []
    term_names: tuple = ()
    best_total = np.inf
    best_epoch = -1
    stall = 0
    stopped_early = False
    aborted = None
    good_model = model.snapshot()
    good_material = material.snapshot()

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        sums: Dict[str, float] = {}
        counts: Dict[str, int] = {}
        weights_seen: Dict[str, float] = {}
        try:
            for idx in _batches(n, cfg.batch_size, rng):
                zero_grads(leaves)
                breakdown = assemble_loss(
                    model.eval_batch(idx), material.nodes(), dataset, idx,
                    scales=model.scales, length_scale=length,
                    weights=cfg.weights)
                total = float(breakdown.total.value)
                if not np.isfinite(total):
                    raise PoisonedGradientError(
                        f"loss became non-finite ({total}) at epoch {epoch}")
                breakdown.total.backward()
                breakdown.total.check_gradients()
                adam.step(lr)
                for name, value in breakdown.terms.items():
                    c = breakdown.counts[name]
                    sums[name] = sums.get(name, 0.0) + value * c
                    counts[name] = counts.get(name, 0) + c
                    weights_seen[name] = breakdown.weights[name]
        except PoisonedGradientError as exc:
            model.restore(good_model)
            material.restore(good_material)
            aborted = str(exc)
            break

        term_means = {name: (sums[name] / counts[name] if counts[name] else 0.0)
                      for name in sums}
        epoch_total = sum(weights_seen[name] * term_means[name]
                          for name in term_means)
        if not term_names:
            term_names = tuple(sorted(term_means))
        row = {"epoch": epoch, "lr": lr, "total": epoch_total}
        row.update({name: term_means.get(name, 0.0) for name in term_names})
        row.update(_material_row(material))
        history.append(row)
        good_model = model.snapshot()
        good_material = material.snapshot()

        if progress is not None and (epoch % progress_every == 0
                                     or epoch == cfg.epochs - 1):
            progress(epoch, epoch_total, dict(row))

        if epoch_total < best_total:
            best_total = epoch_total
            best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if cfg.patience and stall >= cfg.patience:
                stopped_early = True
                break

    cur = material.current()
    gen = material.params
    report = []
    for name, trained in (("lam", gen.train_lam), ("mu", gen.train_mu),
                          ("sigma_y0", gen.train_sigma_y0),
                          ("hp", gen.train_hp)):
        if not trained:
            continue
        value = getattr(cur, name)
        target = getattr(gen, name)
        rel = abs(value - target) / abs(target) if target != 0 else abs(value)
        report.append(ParamReport(name=name, value=value, generating=target,
                                  relative_error=rel))

    return TrainResult(history=history, report=report, best_epoch=best_epoch,
                       best_total=best_total, stopped_early=stopped_early,
                       aborted=aborted, term_names=term_names)
