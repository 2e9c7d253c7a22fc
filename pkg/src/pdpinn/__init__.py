"""Nonlocal physics-informed networks for plane-strain elastoplasticity.

The package solves and identifies J2 deformation-plasticity boundary-value
fields from scattered field data, with spatial derivatives supplied either by
automatic differentiation or by peridynamic-style nonlocal reconstruction
weights (or a hybrid of the two).

Layering, bottom up: :mod:`~pdpinn.tape` (array autodiff),
:mod:`~pdpinn.mesh`/:mod:`~pdpinn.pddo` (point families and reconstruction
weights), :mod:`~pdpinn.constitutive` (material model), :mod:`~pdpinn.network`
(dense nets on the tape), :mod:`~pdpinn.dataio` (datasets, generators, file
formats), :mod:`~pdpinn.models`/:mod:`~pdpinn.residuals` (field evaluation and
loss assembly), :mod:`~pdpinn.trainer` (optimization loop), and on top the
:mod:`~pdpinn.estimators` facade and the ``pdpinn`` command line.

The re-exports below resolve lazily so that importing the package (e.g. for
the command line) stays cheap and lets the CLI pin BLAS thread counts before
numpy first loads.
"""

import importlib

_EXPORTS = {
    "MaterialParams": "constitutive", "PlasticState": "constitutive",
    "Tensor2D": "constitutive", "lame_from_engineering": "constitutive",
    "stress_response": "constitutive",
    "PointCloud": "mesh", "PointFamily": "mesh", "build_families": "mesh",
    "build_grid": "mesh", "weight_of": "mesh",
    "TAGS": "pddo", "PdOperatorSet": "pddo", "apply_operator": "pddo",
    "build_operator_set": "pddo", "orthogonality_residual": "pddo",
    "FieldDataset": "dataio", "load_fields": "dataio", "save_fields": "dataio",
    "FieldModel": "models", "MaterialModel": "models", "ScaleSet": "models",
    "assemble_loss": "residuals", "dataset_residuals": "residuals",
    "TrainConfig": "trainer", "train": "trainer",
    "PddoDerivatives": "estimators", "ElastoplasticPinn": "estimators",
}

__all__ = sorted(_EXPORTS)

__version__ = "0.1.0"


def __getattr__(name):
    module_name = _EXPORTS.get(name)
    if module_name is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    module = importlib.import_module(f".{module_name}", __name__)
    return getattr(module, name)


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
