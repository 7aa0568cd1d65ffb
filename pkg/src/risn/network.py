"""Fully connected networks with optional identity skip connections.

The residual variant adds the previous layer's activations to each hidden
layer's output; the plain variant (the classical PINN baseline) shares the
exact same parameter layout so that comparisons differ only in the skips.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

ACTIVATIONS = {"tanh": ad.tanh, "sin": ad.sin}


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_width: int = 20
    hidden_layers: int = 7
    output_dim: int = 1
    activation: str = "tanh"
    residual: bool = True

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_width < 1 or self.output_dim < 1:
            raise ValueError("network dimensions must be positive")
        if self.hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"unknown activation '{self.activation}'; choose from {sorted(ACTIVATIONS)}"
            )

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class MlpParams:
    """Per-layer weights/biases as autodiff leaves, plus the init seed."""

    config: MlpConfig
    seed: int
    weights: list[ad.Tensor] = field(default_factory=list)
    biases: list[ad.Tensor] = field(default_factory=list)

    def leaves(self) -> list[ad.Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def num_params(self) -> int:
        return sum(t.data.size for t in self.leaves())


def init_params(config: MlpConfig, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    params = MlpParams(config=config, seed=int(seed))
    for fan_in, fan_out in config.layer_shapes():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params.weights.append(ad.parameter(w))
        params.biases.append(ad.parameter(np.zeros((1, fan_out))))
    return params


def forward(params: MlpParams, x):
    """Network output at the rows of x; accepts Tensor, Dual, or ndarray.

    With residual=True each hidden layer computes sigma(a W + b) + a; the skip
    at the first hidden layer is applied only when input_dim == hidden_width
    (otherwise the shapes cannot be added and the first layer is skip-free).
    The output layer is affine with no skip.
    """
    cfg = params.config
    act = ACTIVATIONS[cfg.activation]
    if isinstance(x, np.ndarray):
        x = ad.Tensor(x)
    a = x
    n_hidden = cfg.hidden_layers
    for i in range(n_hidden):
        z = ad.add(ad.matmul(a, params.weights[i]), params.biases[i])
        h = act(z)
        if cfg.residual and (i > 0 or cfg.input_dim == cfg.hidden_width):
            a = ad.add(h, a)
        else:
            a = h
    return ad.add(ad.matmul(a, params.weights[n_hidden]), params.biases[n_hidden])


def flatten_params(nets: list[MlpParams]) -> np.ndarray:
    return np.concatenate([t.data.reshape(-1) for net in nets for t in net.leaves()])


def unflatten_params(vector: np.ndarray, nets: list[MlpParams]) -> list[MlpParams]:
    """Fresh parameter structs (new autodiff leaves) holding the given values."""
    out = []
    offset = 0
    for net in nets:
        fresh = MlpParams(config=net.config, seed=net.seed)
        for w, b in zip(net.weights, net.biases):
            for src, dest in ((w, fresh.weights), (b, fresh.biases)):
                n = src.data.size
                chunk = vector[offset:offset + n].reshape(src.data.shape)
                dest.append(ad.parameter(chunk))
                offset += n
        out.append(fresh)
    if offset != vector.size:
        raise ValueError(f"parameter vector length {vector.size}, expected {offset}")
    return out


def save_params(path, nets: list[MlpParams]) -> None:
    """JSON snapshot of one or more networks (one per unknown function)."""
    payload = []
    for net in nets:
        cfg = net.config
        payload.append(
            {
                "config": {
                    "input_dim": cfg.input_dim,
                    "hidden_width": cfg.hidden_width,
                    "hidden_layers": cfg.hidden_layers,
                    "output_dim": cfg.output_dim,
                    "activation": cfg.activation,
                    "residual": cfg.residual,
                },
                "seed": net.seed,
                "layers": [
                    {"weight": w.data.tolist(), "bias": b.data.reshape(-1).tolist()}
                    for w, b in zip(net.weights, net.biases)
                ],
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"networks": payload}, fh)


def load_params(path) -> list[MlpParams]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    nets = []
    for entry in payload["networks"]:
        cfg = MlpConfig(**entry["config"])
        net = MlpParams(config=cfg, seed=int(entry["seed"]))
        shapes = cfg.layer_shapes()
        if len(entry["layers"]) != len(shapes):
            raise ValueError("layer count does not match config")
        for layer, (fan_in, fan_out) in zip(entry["layers"], shapes):
            w = np.asarray(layer["weight"], dtype=np.float64)
            b = np.asarray(layer["bias"], dtype=np.float64).reshape(1, -1)
            if w.shape != (fan_in, fan_out) or b.shape != (1, fan_out):
                raise ValueError(f"layer shape mismatch: got {w.shape}, want {(fan_in, fan_out)}")
            net.weights.append(ad.parameter(w))
            net.biases.append(ad.parameter(b))
        nets.append(net)
    return nets
