"""Fully-connected networks over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from . import tape as T

LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a small fully-connected network.

    With ``residual=True`` the hidden layers are grouped in consecutive
    pairs forming skip blocks (all hidden widths must match); the first
    and last layers stay plain projections.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation_slope: float = LEAKY_SLOPE
    final_layer_zero_init: bool = False
    residual: bool = False

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d <= 0 for d in dims):
            raise ShapeError(f"all dimensions must be positive, got {dims}")
        if self.residual:
            if len(self.hidden_dims) % 2 != 0 or not self.hidden_dims:
                raise ShapeError("residual blocks need an even number of hidden layers")
            if len(set(self.hidden_dims)) != 1:
                raise ShapeError("residual blocks need equal hidden widths")

    def layer_dims(self) -> list[tuple[int, int]]:
        if self.residual:
            # input projection + the in-block layers + output projection
            w = self.hidden_dims[0]
            return (
                [(self.input_dim, w)]
                + [(w, w)] * len(self.hidden_dims)
                + [(w, self.output_dim)]
            )
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation_slope": self.activation_slope,
            "final_layer_zero_init": self.final_layer_zero_init,
            "residual": self.residual,
        }

    @staticmethod
    def from_dict(d: dict) -> "MlpSpec":
        return MlpSpec(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(int(h) for h in d["hidden_dims"]),
            output_dim=int(d["output_dim"]),
            activation_slope=float(d.get("activation_slope", LEAKY_SLOPE)),
            final_layer_zero_init=bool(d.get("final_layer_zero_init", False)),
            residual=bool(d.get("residual", False)),
        )


@dataclass
class ParamStore:
    """Flat float64 parameter vector plus a named segment layout."""

    values: np.ndarray
    layout: list[tuple[str, int, tuple[int, ...]]] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        covered = 0
        for name, offset, shape in self.layout:
            if offset != covered:
                raise ShapeError(f"segment {name} at offset {offset}, expected {covered}")
            covered += int(np.prod(shape))
        if covered != self.values.size:
            raise ShapeError(
                f"layout covers {covered} values, store holds {self.values.size}"
            )
        self._index = {name: (offset, shape) for name, offset, shape in self.layout}

    def names(self) -> list[str]:
        return [name for name, _, _ in self.layout]

    def segment(self, name: str) -> np.ndarray:
        offset, shape = self._index[name]
        return self.values[offset : offset + int(np.prod(shape))].reshape(shape)

    def set_segment(self, name: str, value: np.ndarray) -> None:
        offset, shape = self._index[name]
        self.values[offset : offset + int(np.prod(shape))] = np.ravel(value)

    def copy(self) -> "ParamStore":
        return ParamStore(self.values.copy(), list(self.layout))

    def to_dict(self) -> dict:
        return {
            "layout": [
                {"name": n, "offset": o, "shape": list(s)} for n, o, s in self.layout
            ],
            "values": self.values.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ParamStore":
        layout = [
            (seg["name"], int(seg["offset"]), tuple(int(x) for x in seg["shape"]))
            for seg in d["layout"]
        ]
        return ParamStore(np.asarray(d["values"], dtype=np.float64), layout)


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamStore:
    """Kaiming-uniform weights for the leaky-relu hidden stack, zero biases.

    The output layer is zeroed when the spec asks for it, which makes a
    freshly initialized network the constant-zero map.
    """
    gain = np.sqrt(2.0 / (1.0 + spec.activation_slope**2))
    layer_dims = spec.layer_dims()
    layout = []
    chunks = []
    offset = 0
    for i, (fan_in, fan_out) in enumerate(layer_dims):
        last = i == len(layer_dims) - 1
        if last and spec.final_layer_zero_init:
            w = np.zeros((fan_in, fan_out))
        else:
            bound = gain * np.sqrt(3.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        for name, arr in ((f"W{i}", w), (f"b{i}", b)):
            layout.append((name, offset, arr.shape))
            chunks.append(np.ravel(arr))
            offset += arr.size
    return ParamStore(np.concatenate(chunks), layout)


def mlp_forward(spec: MlpSpec, params, x, tape: T.Tape | None = None):
    """Run the network on a batch (B, input_dim) or single vector.

    ``params`` is a ParamStore (bound onto the tape when one is given) or a
    dict of already-bound leaf nodes / raw segment arrays. Recording only
    happens when the tape or the inputs carry nodes.
    """
    single = len(T._shape_of(x)) == 1
    if T._shape_of(x)[-1] != spec.input_dim:
        raise ShapeError(
            f"input dim {T._shape_of(x)[-1]} != spec input_dim {spec.input_dim}"
        )
    if single:
        x = T.reshape(x, (1, spec.input_dim))

    if isinstance(params, ParamStore):
        if tape is not None:
            weights = tape.bind(params)
        else:
            weights = {name: params.segment(name) for name in params.names()}
    else:
        weights = params

    n_layers = len(spec.layer_dims())
    h = T.matmul(x, weights["W0"]) + weights["b0"]
    if n_layers > 1:
        h = T.leaky_relu(h, spec.activation_slope)
    layer = 1
    if spec.residual:
        n_blocks = len(spec.hidden_dims) // 2
        for _ in range(n_blocks):
            z = T.matmul(h, weights[f"W{layer}"]) + weights[f"b{layer}"]
            z = T.leaky_relu(z, spec.activation_slope)
            z = T.matmul(z, weights[f"W{layer + 1}"]) + weights[f"b{layer + 1}"]
            z = T.leaky_relu(z, spec.activation_slope)
            h = h + z
            layer += 2
    else:
        for _ in range(len(spec.hidden_dims) - 1):
            h = T.matmul(h, weights[f"W{layer}"]) + weights[f"b{layer}"]
            h = T.leaky_relu(h, spec.activation_slope)
            layer += 1
    if n_layers > 1:
        h = T.matmul(h, weights[f"W{layer}"]) + weights[f"b{layer}"]

    if single:
        h = T.reshape(h, (spec.output_dim,))
    return h


def param_gradient(loss, store: ParamStore, tape: T.Tape) -> np.ndarray:
    """Flat gradient vector of a scalar loss over a bound ParamStore."""
    bound = tape.bind(store)
    leaves = [bound[name] for name in store.names()]
    grads = T.backward(loss, leaves)
    return np.concatenate([np.ravel(T.raw(g)) for g in grads])
