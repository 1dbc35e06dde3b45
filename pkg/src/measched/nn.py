"""Small float64 MLP with hand-written backprop and an Adam optimizer."""
from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .simulator import ConfigError

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_FORMAT = "measched-mlp"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError("layer dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


def layer_specs(in_dim: int, hidden: Sequence[int], out_dim: int) -> list[LayerSpec]:
    """Relu hidden layers followed by a linear output layer."""
    dims = [in_dim, *hidden, out_dim]
    return [
        LayerSpec(dims[i], dims[i + 1], "relu" if i < len(hidden) else "identity")
        for i in range(len(dims) - 1)
    ]


@dataclass
class ForwardCache:
    inputs: list  # input to each layer
    preacts: list  # pre-activation of each layer
    version: int


class MLP:
    """Feed-forward network; weights are stored (in_dim, out_dim) and act on row batches."""

    def __init__(self, specs: Sequence[LayerSpec], seed: Optional[int] = 0, init: bool = True):
        specs = list(specs)
        for a, b in zip(specs, specs[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigError(f"layer dims do not chain: {a} -> {b}")
        self.specs = specs
        self.version = 0
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for s in specs:
            if init:
                limit = np.sqrt(6.0 / (s.in_dim + s.out_dim))
                w = rng.uniform(-limit, limit, size=(s.in_dim, s.out_dim))
            else:
                w = np.zeros((s.in_dim, s.out_dim))
            self.weights.append(w)
            self.biases.append(np.zeros(s.out_dim))

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, arrays: Sequence[np.ndarray]) -> None:
        arrays = list(arrays)
        for i in range(len(self.specs)):
            w, b = np.asarray(arrays[2 * i], dtype=np.float64), np.asarray(arrays[2 * i + 1], dtype=np.float64)
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ConfigError(f"parameter shape mismatch in layer {i}")
            self.weights[i] = w.copy()
            self.biases[i] = b.copy()
        self.touch()

    def touch(self) -> None:
        """Mark parameters as changed; outstanding caches become stale."""
        self.version += 1

    def copy(self) -> "MLP":
        other = MLP(self.specs, init=False)
        other.set_params(self.params())
        return other

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def forward(self, x) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[-1] != self.in_dim:
            raise ConfigError(f"input dim {h.shape[-1]} != {self.in_dim}")
        inputs, preacts = [], []
        for spec, w, b in zip(self.specs, self.weights, self.biases):
            inputs.append(h)
            z = h @ w + b
            preacts.append(z)
            h = np.maximum(z, 0.0) if spec.activation == "relu" else z
        if not np.all(np.isfinite(h)):
            raise TrainingError("non-finite activation in forward pass")
        return (h[0] if single else h), ForwardCache(inputs, preacts, self.version)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, output_grad, return_input_grad: bool = False):
        """Parameter gradients ``[dW0, db0, dW1, ...]`` of a scalar loss whose
        gradient w.r.t. the network output is ``output_grad``. Batch gradients
        are summed over rows."""
        if cache.version != self.version:
            raise StaleCacheError("forward cache predates the latest parameter update")
        g = np.asarray(output_grad, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        grads = [None] * (2 * len(self.specs))
        for i in reversed(range(len(self.specs))):
            if self.specs[i].activation == "relu":
                g = g * (cache.preacts[i] > 0)
            grads[2 * i] = cache.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        if return_input_grad:
            return grads, g
        return grads

    # checkpoints

    def to_dict(self) -> dict:
        flat = np.concatenate([p.ravel() for p in self.params()]).astype("<f8")
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layers": [asdict(s) for s in self.specs],
            "params_f64le_b64": base64.b64encode(flat.tobytes()).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ConfigError("unrecognised network checkpoint format")
        specs = [LayerSpec(**s) for s in d["layers"]]
        net = cls(specs, init=False)
        flat = np.frombuffer(base64.b64decode(d["params_f64le_b64"]), dtype="<f8")
        if flat.size != net.n_params():
            raise ConfigError("checkpoint parameter count does not match layer specs")
        arrays, pos = [], 0
        for p in net.params():
            arrays.append(flat[pos : pos + p.size].reshape(p.shape))
            pos += p.size
        net.set_params(arrays)
        return net


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise ConfigError("invalid Adam hyperparameters")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
            raise ConfigError("gradient shapes do not match parameters")
        for i, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                bad = int(np.sum(~np.isfinite(g)))
                raise TrainingError(
                    f"non-finite gradient in tensor {i} (shape {g.shape}, {bad} bad entries) at step {self.t + 1}"
                )
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        for p in params:
            if not np.all(np.isfinite(p)):
                raise TrainingError(f"non-finite parameter after step {self.t}")


def optimizer_step(net: MLP, grads: list[np.ndarray], opt: Adam) -> None:
    opt.step(net.params(), grads)
    net.touch()


def save_checkpoint(path, net: MLP, meta: Optional[dict] = None) -> None:
    d = {"network": net.to_dict(), "meta": meta or {}}
    with open(path, "w") as fh:
        fh.write(json.dumps(d, sort_keys=True, indent=1))
        fh.write("\n")


def load_checkpoint(path) -> tuple[MLP, dict]:
    with open(path) as fh:
        d = json.load(fh)
    return MLP.from_dict(d["network"]), d.get("meta", {})
