"""Dense feed-forward networks recorded on the autodiff tape.

One network approximates one scalar field (or, for the nonlocal input layout,
one vector of family-slot samples of a field). Hidden layers share a single
activation; the output layer is always affine — an activation there would
needlessly constrain the output range, so ``widths[-1]`` is produced linear
regardless of the configured activation.

:func:`input_cotangent` is the workhorse for physics terms: given a weighting
of the outputs it returns d(weighted sum)/d(inputs) *as graph nodes*, so a
loss built from field derivatives still yields exact parameter gradients
(second-order terms included). For ``relu`` the input derivative uses the
almost-everywhere convention (slope 0 at exactly 0).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import tape
from .errors import InvalidArgumentError
from .tape import Var, as_var

ACTIVATIONS = ("tanh", "relu", "linear")

CHECKPOINT_MAGIC = "pdpinn-net 1"


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths (inputs first, outputs last), activation name, init seed."""

    widths: tuple
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise InvalidArgumentError(
                f"a network needs input and output widths, got {self.widths}"
            )
        if any(w < 1 for w in self.widths):
            raise InvalidArgumentError(f"layer widths must be >= 1: {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(
                f"activation must be one of {ACTIVATIONS}, got {self.activation!r}"
            )

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    @property
    def n_outputs(self) -> int:
        return self.widths[-1]


class NetworkParams:
    """Weight/bias leaves of one network, in layer order."""

    def __init__(self, spec: NetworkSpec, weights: List[Var], biases: List[Var]):
        self.spec = spec
        self.weights = weights
        self.biases = biases

    def leaves(self) -> List[Var]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def snapshot(self) -> List[np.ndarray]:
        return [leaf.value.copy() for leaf in self.leaves()]

    def restore(self, snapshot: List[np.ndarray]) -> None:
        for leaf, saved in zip(self.leaves(), snapshot):
            leaf.value = saved.copy()


def init_params(spec: NetworkSpec) -> NetworkParams:
    """Glorot-uniform weights, zero biases; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Var(rng.uniform(-limit, limit, size=(fan_in, fan_out)),
                           op="weight"))
        biases.append(Var(np.zeros(fan_out), op="bias"))
    return NetworkParams(spec, weights, biases)


@dataclass
class EvalRecord:
    """Everything one forward pass produced, kept for derivative passes."""

    params: NetworkParams
    inputs: np.ndarray            # (batch, n_in), constants
    pre: List[Var]                # affine results, one per layer
    post: List[Var]               # activated hidden outputs (len = layers - 1)
    outputs: Var                  # (batch, n_out)


def forward(params: NetworkParams, inputs) -> EvalRecord:
    """Run the network on a batch of rows; records the graph."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.n_inputs:
        raise InvalidArgumentError(
            f"inputs must have shape (batch, {params.spec.n_inputs}), got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("network inputs contain non-finite values")
    act = params.spec.activation
    z: Var = as_var(x)
    pre, post = [], []
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        p = z @ w + b
        pre.append(p)
        if k == last:
            z = p
        else:
            if act == "tanh":
                z = tape.tanh(p)
            elif act == "relu":
                z = tape.relu(p)
            else:
                z = p
            post.append(z)
    return EvalRecord(params=params, inputs=x, pre=pre, post=post, outputs=z)


def _activation_slope(record: EvalRecord, layer: int) -> Optional[Var]:
    """d(activation)/d(pre) of hidden layer ``layer`` as a graph node.

    Returns ``None`` for identity slopes. The relu slope is a constant (its
    own derivative vanishes almost everywhere), the tanh slope is expressed
    through the recorded activation node so parameter gradients flow.
    """
    act = record.params.spec.activation
    if act == "linear":
        return None
    if act == "relu":
        return as_var((record.pre[layer].value > 0.0).astype(np.float64))
    t = record.post[layer]
    return 1.0 - t * t


def input_cotangent(record: EvalRecord, cotangent) -> Var:
    """d(sum_k cotangent_k * output_k)/d(inputs) as a (batch, n_in) node.

    ``cotangent`` has shape (batch, n_out) and may be a constant array or a
    graph node. This is one reverse sweep through the recorded layers, so its
    cost does not grow with the input width.
    """
    u = as_var(cotangent)
    if u.value.shape != record.outputs.value.shape:
        raise InvalidArgumentError(
            f"cotangent shape {u.value.shape} does not match outputs "
            f"{record.outputs.value.shape}"
        )
    n_layers = len(record.params.weights)
    for layer in range(n_layers - 1, -1, -1):
        if layer < n_layers - 1:
            slope = _activation_slope(record, layer)
            if slope is not None:
                u = u * slope
        u = u @ record.params.weights[layer].T
    return u


def input_derivatives(record: EvalRecord) -> List[Var]:
    """First derivative of every output w.r.t. the inputs.

    Returns one (batch, n_in) node per output unit (ordered by output index).
    Needs one sweep per output, so prefer :func:`input_cotangent` when only a
    weighted combination is required.
    """
    batch, n_out = record.outputs.value.shape
    rows = []
    for k in range(n_out):
        basis = np.zeros((batch, n_out))
        basis[:, k] = 1.0
        rows.append(input_cotangent(record, basis))
    return rows


# -- checkpoints --------------------------------------------------------------

def save_network(params: NetworkParams, path, field: str = "") -> None:
    """Write one network to a binary checkpoint with a text header.

    Layout: six header lines (magic/version, field name, widths, activation,
    seed, payload description) followed by the raw parameter payload — each
    layer's weight matrix (row-major) then its bias vector, all little-endian
    float64.
    """
    payload = io.BytesIO()
    for w, b in zip(params.weights, params.biases):
        payload.write(np.ascontiguousarray(w.value, dtype="<f8").tobytes())
        payload.write(np.ascontiguousarray(b.value, dtype="<f8").tobytes())
    blob = payload.getvalue()
    spec = params.spec
    header = (
        f"{CHECKPOINT_MAGIC}\n"
        f"field {field}\n"
        f"widths {' '.join(str(w) for w in spec.widths)}\n"
        f"activation {spec.activation}\n"
        f"seed {spec.seed}\n"
        f"data float64 little-endian {len(blob)}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(blob)


def load_network(path) -> tuple:
    """Read a checkpoint written by :func:`save_network` -> (params, field)."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read checkpoint {path}: {exc}") from exc
    with fh:
        lines = [fh.readline().decode("ascii").rstrip("\n") for _ in range(6)]
        blob = fh.read()
    if lines[0] != CHECKPOINT_MAGIC:
        raise InvalidArgumentError(f"{path}: unrecognized checkpoint header {lines[0]!r}")
    field = lines[1].split(" ", 1)[1] if " " in lines[1] else ""
    widths = tuple(int(v) for v in lines[2].split()[1:])
    activation = lines[3].split()[1]
    seed = int(lines[4].split()[1])
    declared = int(lines[5].split()[-1])
    if declared != len(blob):
        raise InvalidArgumentError(
            f"{path}: payload is {len(blob)} bytes but header declares {declared}"
        )
    spec = NetworkSpec(widths=widths, activation=activation, seed=seed)
    weights, biases, offset = [], [], 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out,
                          offset=offset).reshape(fan_in, fan_out).copy()
        offset += w.nbytes
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset).copy()
        offset += b.nbytes
        weights.append(Var(w, op="weight"))
        biases.append(Var(b, op="bias"))
    return NetworkParams(spec, weights, biases), field
