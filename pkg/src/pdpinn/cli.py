"""``pdpinn`` command line.

Every subcommand takes ``-c/--config FILE`` plus ``section.key=value``
overrides, resolves the full configuration, and echoes it into the outputs
directory (``config-<command>.yaml``) so runs can be reproduced verbatim.

Exit codes: 0 success, 1 runtime failure (singular operators, aborted
training, missing artifacts), 2 configuration or data-format errors (also
used by argparse for bad usage).

Numerical modules are imported inside the handlers on purpose: the
``threads`` config key pins the BLAS pool sizes via environment variables,
which only works if it happens before numpy first loads.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from . import config as config_mod
from .errors import ConfigError, DatasetFormatError, PdpinnError

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _set_threads(count: int) -> None:
    if count > 0:
        for var in _THREAD_VARS:
            os.environ[var] = str(count)


def _outputs_dir(cfg: dict) -> str:
    path = str(cfg["outputs"]["dir"])
    os.makedirs(path, exist_ok=True)
    return path


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _echo_config(cfg: dict, command: str) -> str:
    out = _outputs_dir(cfg)
    path = os.path.join(out, f"config-{command}.yaml")
    _write_text(path, config_mod.dump_config(cfg))
    return out


def _load_dataset(cfg: dict):
    from .dataio import load_fields
    path = cfg["data"]["path"]
    if not path:
        raise ConfigError("data.path must point at a fields file")
    return load_fields(path)


def _matching_cloud(cfg: dict, dataset):
    import numpy as np
    cloud = config_mod.build_cloud(cfg)
    if len(cloud) != len(dataset.points) or not np.allclose(
            cloud.points, dataset.points, rtol=0.0, atol=1e-9):
        raise ConfigError(
            "the configured grid does not reproduce the dataset's points; "
            "fix the grid section or regenerate the data")
    return cloud


def _needs_opset(cfg: dict) -> bool:
    return cfg["network"]["architecture"] != "local"


def cmd_gen_data(cfg: dict) -> int:
    from .dataio import (generate_elastic_manufactured,
                         generate_plastic_manufactured, sample_index_sets,
                         save_fields)
    out = _echo_config(cfg, "gen-data")
    cloud = config_mod.build_cloud(cfg)
    params, _ = config_mod.build_material(cfg)
    d = cfg["data"]
    kind = str(d["kind"])
    if kind in ("constant_strain", "harmonic_quadratic"):
        coeffs = d["coeffs"]
        dataset = generate_elastic_manufactured(
            cloud, kind, float(d["amplitude"]), params,
            coeffs=tuple(float(c) for c in coeffs) if coeffs else None)
    elif kind == "plastic":
        dataset = generate_plastic_manufactured(
            cloud, params, depth=float(d["depth"]),
            punch_width=float(d["punch_width"]),
            front_width=float(d["front_width"]))
    else:
        raise ConfigError(
            f"data.kind must be constant_strain, harmonic_quadratic or "
            f"plastic, got {kind!r}")
    counts = {str(k): int(v) for k, v in (d["sample"] or {}).items()}
    if counts:
        dataset = sample_index_sets(dataset, counts, int(d["sample_seed"]))
    path = d["path"] or os.path.join(out, "fields.txt")
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_fields(dataset, path)
    print(f"wrote {path}: {len(dataset.points)} points, kind {kind}")
    if "plastic_fraction" in dataset.meta:
        print(f"plastic fraction: {dataset.meta['plastic_fraction']}")
    return 0


def cmd_check_pddo(cfg: dict) -> int:
    import numpy as np
    from .pddo import (TAGS, apply_operator, save_operator_set,
                       worst_orthogonality_residual)
    out = _echo_config(cfg, "check-pddo")
    cloud = config_mod.build_cloud(cfg)
    opset = config_mod.build_operator_set_from(cfg, cloud)
    worst = worst_orthogonality_residual(opset)
    x, y = cloud.points[:, 0], cloud.points[:, 1]
    probe = 1.0 + x + 2.0 * y + 0.5 * x * x + 1.5 * y * y + 0.25 * x * y
    exact = {(0, 0): probe, (1, 0): 1.0 + x + 0.25 * y,
             (0, 1): 2.0 + 3.0 * y + 0.25 * x,
             (2, 0): np.ones_like(x), (0, 2): 3.0 * np.ones_like(x),
             (1, 1): 0.25 * np.ones_like(x)}
    worst_quad = max(np.max(np.abs(apply_operator(opset, probe, tag) - exact[tag]))
                     for tag in TAGS)
    table = os.path.join(out, "operators.txt")
    save_operator_set(opset, table)
    print(f"families: {len(opset.families)} "
          f"(sizes {min(len(f.member_indices) for f in opset.families)}"
          f"..{max(len(f.member_indices) for f in opset.families)})")
    print(f"worst orthogonality residual: {worst:.3e}")
    print(f"worst quadratic reconstruction error: {worst_quad:.3e}")
    print(f"wrote {table}")
    return 0


def _run_training(cfg: dict, command: str) -> int:
    from .models import MaterialModel, save_model
    from .trainer import train

    dataset = _load_dataset(cfg)
    out = _echo_config(cfg, command)
    cloud = _matching_cloud(cfg, dataset)
    params, guesses = config_mod.build_material(cfg)
    trainable = any((params.train_lam, params.train_mu,
                     params.train_sigma_y0, params.train_hp))
    if command == "identify" and not trainable:
        raise ConfigError("identify requires a non-empty material.trainable")
    if command == "train" and trainable:
        raise ConfigError("train keeps the material fixed; use identify "
                          "for material.trainable runs")
    opset = config_mod.build_operator_set_from(cfg, cloud) if _needs_opset(cfg) else None
    model = config_mod.build_field_model(cfg, cloud, dataset, opset)
    material = MaterialModel(params, guesses)
    tcfg = config_mod.build_train_config(cfg)
    log_every = max(1, int(cfg["train"]["log_every"]))

    def progress(epoch, total, row):
        line = f"epoch {epoch:>6d}  lr {row['lr']:.3e}  loss {total:.6e}"
        if trainable:
            line += ("  lam {lam:.4e}  mu {mu:.4e}  sigma_y0 {sigma_y0:.4e}"
                     "  hp {hp:.4e}").format(**row)
        print(line)

    result = train(model, material, dataset, tcfg,
                   progress=progress, progress_every=log_every)

    save_model(model, os.path.join(out, "model"))
    _write_text(os.path.join(out, "history.txt"), result.history_text())
    cur = material.current()
    _write_text(os.path.join(out, "material.txt"),
                "".join(f"{name} {getattr(cur, name)!r}\n"
                        for name in ("lam", "mu", "sigma_y0", "hp")))
    if command == "identify":
        _write_text(os.path.join(out, "report.txt"), result.report_text())
        print(result.report_text(), end="")
    if result.aborted:
        print(f"error: training aborted: {result.aborted}", file=sys.stderr)
        return 1
    print(f"finished: best loss {result.best_total:.6e} at epoch "
          f"{result.best_epoch} ({len(result.history)} epochs run)")
    print(f"artifacts in {out}")
    return 0


def cmd_train(cfg: dict) -> int:
    return _run_training(cfg, "train")


def cmd_identify(cfg: dict) -> int:
    return _run_training(cfg, "identify")


def cmd_evaluate(cfg: dict) -> int:
    import numpy as np
    from .models import load_model
    from .residuals import assemble_loss

    dataset = _load_dataset(cfg)
    out = _echo_config(cfg, "evaluate")
    cloud = _matching_cloud(cfg, dataset)
    opset = config_mod.build_operator_set_from(cfg, cloud) if _needs_opset(cfg) else None
    model = load_model(os.path.join(out, "model"), cloud, opset)
    params, _ = config_mod.build_material(cfg)
    idx = np.arange(len(cloud))
    scales = model.scales
    span = dataset.points.max(axis=0) - dataset.points.min(axis=0)
    breakdown = assemble_loss(model.eval_batch(idx), params, dataset, idx,
                              scales=scales, length_scale=float(span.max()),
                              weights=(cfg["loss"]["weights"] or None))
    lines = [f"total {float(breakdown.total.value)!r}"]
    for name in sorted(breakdown.terms):
        lines.append(f"{name} {breakdown.terms[name]!r} "
                     f"count {breakdown.counts[name]}")
    if breakdown.flow_skipped:
        lines.append(f"flow_skipped {breakdown.flow_skipped}")
    lines.extend(f"notice: {n}" for n in breakdown.notices)
    text = "\n".join(lines) + "\n"
    _write_text(os.path.join(out, "evaluation.txt"), text)
    print(text, end="")
    return 0


def cmd_export_fields(cfg: dict) -> int:
    import numpy as np
    from .constitutive import plane_strain_szz
    from .dataio import CHANNELS, FieldDataset, save_fields, write_heatmap
    from .models import load_model

    out = _echo_config(cfg, "export-fields")
    cloud = config_mod.build_cloud(cfg)
    opset = config_mod.build_operator_set_from(cfg, cloud) if _needs_opset(cfg) else None
    model = load_model(os.path.join(out, "model"), cloud, opset)
    params, _ = config_mod.build_material(cfg)

    n = len(cloud)
    arrays = {ch: np.zeros(n) for ch in CHANNELS}
    for start in range(0, n, 1024):
        idx = np.arange(start, min(start + 1024, n))
        ev = model.eval_batch(idx)
        for field in model.fields:
            arrays[field][idx] = ev.value(field).value
        dux_dx = ev.deriv("ux", (1, 0)).value
        dux_dy = ev.deriv("ux", (0, 1)).value
        duy_dx = ev.deriv("uy", (1, 0)).value
        duy_dy = ev.deriv("uy", (0, 1)).value
        arrays["exx"][idx] = dux_dx
        arrays["eyy"][idx] = duy_dy
        arrays["exy"][idx] = 0.5 * (dux_dy + duy_dx)
        if not model.plastic:
            arrays["szz"][idx] = plane_strain_szz(
                params, arrays["sxx"][idx], arrays["syy"][idx])
    masks = {ch: np.ones(n, dtype=bool) for ch in CHANNELS}
    dataset = FieldDataset(points=cloud.points, values=arrays, masks=masks,
                           equilibrium_terms=False,
                           plastic_mode=model.plastic,
                           provenance=f"export:{model.architecture}",
                           meta={"nx": cloud.nx, "ny": cloud.ny})
    fields_path = os.path.join(out, "predicted-fields.txt")
    save_fields(dataset, fields_path)
    heat_dir = os.path.join(out, "heatmaps")
    os.makedirs(heat_dir, exist_ok=True)
    for ch in CHANNELS:
        write_heatmap(arrays[ch], (cloud.nx, cloud.ny),
                      os.path.join(heat_dir, f"{ch}.pgm"))
    print(f"wrote {fields_path} and {len(CHANNELS)} heatmaps under {heat_dir}")
    return 0


_COMMANDS = {
    "gen-data": (cmd_gen_data, "generate a manufactured dataset"),
    "check-pddo": (cmd_check_pddo,
                   "verify the reconstruction operators on the grid"),
    "train": (cmd_train, "fit field networks with the material fixed"),
    "identify": (cmd_identify,
                 "fit field networks and trainable material constants"),
    "evaluate": (cmd_evaluate, "grade a saved model against a dataset"),
    "export-fields": (cmd_export_fields,
                      "write predicted fields and heatmaps"),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdpinn",
        description="plane-strain elastoplastic field networks with "
                    "nonlocal derivatives")
    parser.add_argument("--version", action="version",
                        version=f"pdpinn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("-c", "--config", default=None,
                         help="YAML configuration file")
        cmd.add_argument("overrides", nargs="*", metavar="key=value",
                         help="config overrides, e.g. train.epochs=500")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = config_mod.load_config(args.config, args.overrides)
        _set_threads(config_mod.thread_count(cfg))
        handler, _ = _COMMANDS[args.command]
        return handler(cfg)
    except (ConfigError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PdpinnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
