"""YAML run configuration: strict schema, overrides, object wiring.

A config file holds plain sections (``grid``, ``pddo``, ``material``,
``network``, ``loss``, ``train``, ``data``, ``outputs``, ``threads``).
Parsing is strict: unknown keys anywhere are rejected, duplicate keys are a
hard error, and command-line ``section.key=value`` overrides must name keys
the schema knows. The fully resolved mapping (defaults + file + overrides)
can be echoed back out so a run's inputs are always reconstructible.

Material constants take either the Lamé pair (``lambda``/``mu``) or the
engineering pair (``e``/``nu``), in ``Pa`` or ``GPa``. When no yield stress
is given it defaults to ``mu`` — far beyond any small-strain state, so
purely elastic runs need not name one. ``trainable`` lists constants to
identify; ``initial_guess`` optionally seeds them (same units, default half
the configured value).

This module imports nothing numerical at the top level on purpose: the CLI
must be able to read ``threads`` and pin the BLAS pool sizes before numpy
loads. The ``build_*`` wiring helpers import what they need lazily.
"""

from __future__ import annotations

import copy
from typing import Dict, List, Optional, Tuple

import yaml

from .errors import ConfigError

DEFAULTS: dict = {
    "grid": {"nx": 21, "ny": 21, "width": 1.0, "height": 1.0, "layout": "nodes"},
    "pddo": {"stencil_halfwidth": 3, "delta_factor": 3.5},
    "material": {"units": "Pa", "lambda": None, "mu": None, "e": None,
                 "nu": None, "sigma_y0": None, "hp": 0.0,
                 "trainable": [], "initial_guess": {}},
    "network": {"architecture": "local", "hidden": [20, 20],
                "activation": "tanh", "seed": 0, "center_only": False},
    "loss": {"weights": {}, "scales": {}},
    "train": {"epochs": 1000, "batch_size": 0, "lr_start": 1e-2,
              "lr_end": 1e-4, "seed": 0, "patience": 0, "log_every": 100},
    "data": {"path": None, "kind": "harmonic_quadratic", "amplitude": 2e-4,
             "coeffs": None, "depth": 0.05, "punch_width": 0.3,
             "front_width": 0.05, "sample": {}, "sample_seed": 0},
    "outputs": {"dir": "out"},
    "threads": 0,
}

#: sections whose sub-dicts carry free-form keys (validated at wiring time)
_OPEN_MAPPINGS = {("material", "initial_guess"), ("loss", "weights"),
                  ("loss", "scales"), ("data", "sample")}

_MATERIAL_NAMES = ("lambda", "mu", "sigma_y0", "hp")


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that refuses duplicate mapping keys."""


def _mapping_no_duplicates(loader, node, deep=False):
    seen = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise ConfigError(
                f"duplicate key {key!r} (line {key_node.start_mark.line + 1})")
        seen[key] = loader.construct_object(value_node, deep=deep)
    return seen


_StrictLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _mapping_no_duplicates)


def _check_keys(user: dict, allowed: dict, path: Tuple[str, ...]) -> None:
    for key, value in user.items():
        here = path + (str(key),)
        if key not in allowed:
            raise ConfigError(f"unknown config key '{'.'.join(here)}'")
        if isinstance(allowed[key], dict):
            if value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"'{'.'.join(here)}' must be a mapping")
            if here not in _OPEN_MAPPINGS:
                _check_keys(value, allowed[key], here)


def _merge(base: dict, user: dict) -> dict:
    for key, value in user.items():
        if (isinstance(value, dict) and isinstance(base.get(key), dict)):
            _merge(base[key], value)
        elif value is not None or base.get(key) is None:
            base[key] = value
    return base


def apply_override(cfg: dict, text: str) -> None:
    """Apply one ``section.key=value`` override; the value is parsed as YAML."""
    key_path, sep, raw = text.partition("=")
    if not sep or not key_path:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    keys = key_path.split(".")
    node, allowed = cfg, DEFAULTS
    for depth, key in enumerate(keys[:-1]):
        if not isinstance(allowed, dict) or key not in allowed:
            raise ConfigError(f"unknown config key '{key_path}'")
        open_mapping = tuple(keys[:depth + 1]) in _OPEN_MAPPINGS
        node = node.setdefault(key, {})
        allowed = allowed[key] if not open_mapping else None
    last = keys[-1]
    if allowed is not None:
        if last not in allowed:
            raise ConfigError(f"unknown config key '{key_path}'")
        if isinstance(allowed[last], dict) and tuple(keys) not in _OPEN_MAPPINGS:
            raise ConfigError(f"'{key_path}' is a section, not a value")
    try:
        value = yaml.load(raw, Loader=_StrictLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: bad value ({exc})") from exc
    node[last] = value


def load_config(path: Optional[str] = None,
                overrides: Optional[List[str]] = None) -> dict:
    """Defaults, then the YAML file, then ``key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = yaml.load(fh, Loader=_StrictLoader)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _check_keys(user, DEFAULTS, ())
        _merge(cfg, user)
    for text in overrides or []:
        apply_override(cfg, text)
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)


# -- wiring (lazy imports; see module docstring) ------------------------------

def build_cloud(cfg: dict):
    from .mesh import build_grid
    g = cfg["grid"]
    return build_grid(int(g["nx"]), int(g["ny"]), float(g["width"]),
                      float(g["height"]), layout=str(g["layout"]))


def build_operator_set_from(cfg: dict, cloud):
    from .mesh import build_families
    from .pddo import build_operator_set
    p = cfg["pddo"]
    families = build_families(cloud,
                              stencil_halfwidth=int(p["stencil_halfwidth"]),
                              delta_factor=float(p["delta_factor"]))
    return build_operator_set(cloud, families)


def _unit_scale(units) -> float:
    text = str(units).lower()
    if text == "pa":
        return 1.0
    if text == "gpa":
        return 1e9
    raise ConfigError(f"material.units must be Pa or GPa, got {units!r}")


def build_material(cfg: dict):
    """Material constants plus identification guesses from the config.

    Returns ``(params, guesses)`` ready for ``MaterialModel``; ``guesses``
    maps internal names (``lam``/``mu``/``sigma_y0``/``hp``) in SI units.
    """
    from .constitutive import MaterialParams, lame_from_engineering
    m = cfg["material"]
    scale = _unit_scale(m["units"])
    has_lame = m["lambda"] is not None or m["mu"] is not None
    has_eng = m["e"] is not None or m["nu"] is not None
    if has_lame and has_eng:
        raise ConfigError("material: give lambda/mu or e/nu, not both")
    if has_lame:
        if m["lambda"] is None or m["mu"] is None:
            raise ConfigError("material: lambda and mu must be given together")
        lam, mu = float(m["lambda"]) * scale, float(m["mu"]) * scale
    elif has_eng:
        if m["e"] is None or m["nu"] is None:
            raise ConfigError("material: e and nu must be given together")
        lam, mu = lame_from_engineering(float(m["e"]) * scale, float(m["nu"]))
    else:
        raise ConfigError("material: no elastic constants configured")
    sigma_y0 = float(m["sigma_y0"]) * scale if m["sigma_y0"] is not None else mu
    hp = float(m["hp"]) * scale

    trainable = m["trainable"] or []
    bad = [t for t in trainable if t not in _MATERIAL_NAMES]
    if bad:
        raise ConfigError(
            f"material.trainable: unknown name(s) {bad}; "
            f"choose from {list(_MATERIAL_NAMES)}")
    params = MaterialParams(
        lam=lam, mu=mu, sigma_y0=sigma_y0, hp=hp,
        train_lam="lambda" in trainable, train_mu="mu" in trainable,
        train_sigma_y0="sigma_y0" in trainable, train_hp="hp" in trainable)

    guesses = {}
    for name, value in (m["initial_guess"] or {}).items():
        if name not in _MATERIAL_NAMES:
            raise ConfigError(f"material.initial_guess: unknown name {name!r}")
        guesses["lam" if name == "lambda" else name] = float(value) * scale
    return params, guesses


def build_train_config(cfg: dict):
    from .trainer import TrainConfig
    t = cfg["train"]
    weights = {str(k): float(v) for k, v in (cfg["loss"]["weights"] or {}).items()}
    return TrainConfig(epochs=int(t["epochs"]), batch_size=int(t["batch_size"]),
                       lr_start=float(t["lr_start"]), lr_end=float(t["lr_end"]),
                       seed=int(t["seed"]), patience=int(t["patience"]),
                       weights=weights or None)


def build_field_model(cfg: dict, cloud, dataset, opset=None):
    from .models import FieldModel, ScaleSet
    net = cfg["network"]
    scales = ScaleSet.from_dataset(dataset, overrides=cfg["loss"]["scales"])
    return FieldModel(cloud, str(net["architecture"]),
                      plastic=dataset.plastic_mode, scales=scales,
                      hidden=tuple(int(h) for h in net["hidden"]),
                      activation=str(net["activation"]), seed=int(net["seed"]),
                      opset=opset, center_only=bool(net["center_only"]))


def thread_count(cfg: dict) -> int:
    try:
        return max(0, int(cfg.get("threads", 0)))
    except (TypeError, ValueError):
        raise ConfigError(f"threads must be an integer, got {cfg.get('threads')!r}")
