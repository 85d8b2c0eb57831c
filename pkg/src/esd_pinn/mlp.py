"""Fully connected tanh network mapping time ``t`` to the four ESD states.

Hidden layers compute ``z = a @ W + b`` followed by ``a = tanh(z)``; the
output layer is linear. ``W`` for layer ``v`` has shape
``(fan_in, fan_out)``, so rows index the source nodes.

The flat parameter vector stores, layer by layer, the row-major weights
followed by the biases. Checkpoints depend on this order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INPUT_DIM = 1
OUTPUT_DIM = 4


@dataclass(frozen=True)
class LayerShape:
    fan_in: int
    fan_out: int

    def __post_init__(self):
        if self.fan_in < 1 or self.fan_out < 1:
            raise ValueError(f"layer dimensions must be >= 1, got {self.fan_in}x{self.fan_out}")

    @property
    def size(self) -> int:
        return self.fan_in * self.fan_out + self.fan_out


@dataclass(frozen=True, eq=False)
class MlpNetwork:
    """Immutable network. Arrays are marked read-only on construction.

    ``input_scale`` and ``input_shift`` apply the fixed affine map
    ``u = input_scale * t + input_shift`` before the first layer. They are
    not trainable.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    input_scale: float = 1.0
    input_shift: float = 0.0
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix and at least one layer")
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        prev = INPUT_DIM
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or w.shape[0] != prev:
                raise ValueError(f"layer {i}: weight shape {w.shape} does not chain from width {prev}")
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias length {b.shape[0]} != fan_out {w.shape[1]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")
            w.flags.writeable = False
            b.flags.writeable = False
            prev = w.shape[1]
        if prev != OUTPUT_DIM:
            raise ValueError(f"last layer must have {OUTPUT_DIM} outputs, got {prev}")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def shapes(self) -> list[LayerShape]:
        return [LayerShape(*w.shape) for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(s.size for s in self.shapes)

    def __eq__(self, other):
        if not isinstance(other, MlpNetwork):
            return NotImplemented
        return (
            self.input_scale == other.input_scale
            and self.input_shift == other.input_shift
            and len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


def tanh_activation(x, out=None):
    """Hyperbolic tangent, saturating to +-1 without overflow."""
    return np.tanh(x, out=out)


def input_scaling(t_span: tuple[float, float]) -> tuple[float, float]:
    """Affine coefficients mapping ``t_span`` onto ``[-1, 1]``."""
    a, b = float(t_span[0]), float(t_span[1])
    scale = 2.0 / (b - a)
    return scale, -1.0 - scale * a


def init_network(
    hidden_layers: int,
    hidden_width: int,
    seed: int,
    input_scale: float = 1.0,
    input_shift: float = 0.0,
) -> MlpNetwork:
    """Glorot-uniform weights, zero biases, fully determined by ``seed``."""
    if hidden_layers < 1 or hidden_width < 1:
        raise ValueError("hidden_layers and hidden_width must both be >= 1")
    rng = np.random.default_rng(seed)
    dims = [INPUT_DIM] + [hidden_width] * hidden_layers + [OUTPUT_DIM]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(tuple(weights), tuple(biases), input_scale, input_shift, seed=seed)


def forward(net: MlpNetwork, t):
    """Network output at ``t``.

    A scalar ``t`` gives a 4-vector, a 1-D array of length n gives ``(n, 4)``.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    a = (net.input_scale * t_arr.reshape(-1, 1)) + net.input_shift
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        a = z if i == last else tanh_activation(z)
    return a[0] if t_arr.ndim == 0 else a


def flatten(net: MlpNetwork) -> np.ndarray:
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(template: MlpNetwork, v) -> MlpNetwork:
    """Rebuild a network with ``template``'s shapes from a flat vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != template.n_params:
        raise ValueError(f"parameter vector has length {v.size}, expected {template.n_params}")
    weights, biases = [], []
    pos = 0
    for s in template.shapes:
        n_w = s.fan_in * s.fan_out
        weights.append(v[pos:pos + n_w].reshape(s.fan_in, s.fan_out))
        pos += n_w
        biases.append(v[pos:pos + s.fan_out])
        pos += s.fan_out
    return MlpNetwork(tuple(weights), tuple(biases), template.input_scale,
                      template.input_shift, seed=template.seed)


def checkpoint_dict(net: MlpNetwork) -> dict:
    return {
        "layers": [[s.fan_in, s.fan_out] for s in net.shapes],
        "seed": net.seed,
        "input_scale": net.input_scale,
        "input_shift": net.input_shift,
        "params": flatten(net).tolist(),
    }


def network_from_dict(data: dict) -> MlpNetwork:
    weights, biases = [], []
    for fan_in, fan_out in data["layers"]:
        weights.append(np.zeros((fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    template = MlpNetwork(tuple(weights), tuple(biases), float(data.get("input_scale", 1.0)),
                          float(data.get("input_shift", 0.0)), seed=data.get("seed"))
    return unflatten(template, np.array(data["params"], dtype=np.float64))


def save_network(net: MlpNetwork, path) -> None:
    # json writes floats via repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(checkpoint_dict(net)))


def load_network(path) -> MlpNetwork:
    return network_from_dict(json.loads(Path(path).read_text()))
