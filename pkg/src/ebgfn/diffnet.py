"""Feed-forward MLPs with hand-written reverse mode, plus Adam.

Parameters live in a flat ``dict[str, np.ndarray]`` (float64). Layer ``i``
owns ``{prefix}{i}.W`` (fan_in x fan_out), ``{prefix}{i}.b`` and, when
normalization is enabled for it, ``{prefix}{i}.gain`` / ``{prefix}{i}.shift``.
Each hidden layer is affine -> (layer norm) -> activation; the last layer is
affine only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("elu", "swish", "identity")
LN_EPS = 1e-5

Params = dict[str, np.ndarray]


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    activations: tuple[str, ...]
    layernorm: tuple[bool, ...]
    prefix: str = "L"

    def __post_init__(self):
        n = len(self.widths) - 1
        if n < 1 or any(w <= 0 for w in self.widths):
            raise ValueError(f"bad widths {self.widths}")
        if len(self.activations) != n or len(self.layernorm) != n:
            raise ValueError("need one activation and one layernorm flag per layer")
        if any(a not in ACTIVATIONS for a in self.activations):
            raise ValueError(f"unknown activation in {self.activations}")
        if self.activations[-1] != "identity" or self.layernorm[-1]:
            raise ValueError("last layer must be affine only")

    @classmethod
    def build(cls, in_dim: int, hidden: list[int] | tuple[int, ...], out_dim: int,
              activation: str = "elu", layernorm: bool = False, prefix: str = "L") -> "MlpSpec":
        widths = (in_dim, *hidden, out_dim)
        n = len(widths) - 1
        acts = tuple([activation] * (n - 1) + ["identity"])
        norms = tuple([layernorm] * (n - 1) + [False])
        return cls(widths, acts, norms, prefix)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def names(self, i: int) -> tuple[str, str, str, str]:
        p = f"{self.prefix}{i}."
        return p + "W", p + "b", p + "gain", p + "shift"

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i in range(self.n_layers):
            w, b, g, s = self.names(i)
            shapes[w] = (self.widths[i], self.widths[i + 1])
            shapes[b] = (self.widths[i + 1],)
            if self.layernorm[i]:
                shapes[g] = (self.widths[i + 1],)
                shapes[s] = (self.widths[i + 1],)
        return shapes


def init_params(spec: MlpSpec, rng: np.random.Generator) -> Params:
    """Glorot-uniform weights, zero biases, unit gains."""
    params: Params = {}
    for i in range(spec.n_layers):
        w, b, g, s = spec.names(i)
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[w] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[b] = np.zeros(fan_out)
        if spec.layernorm[i]:
            params[g] = np.ones(fan_out)
            params[s] = np.zeros(fan_out)
    return params


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "elu":
        # expm1(z) >= z everywhere, so the max picks z on the positive side
        return np.maximum(z, np.expm1(np.minimum(z, 0.0)))
    if kind == "swish":
        return z * expit(z)
    return z


def _activate_grad(kind: str, z: np.ndarray, h: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Backprop through the activation given its input z and output h."""
    if kind == "elu":
        d = np.minimum(h, 0.0)
        d += 1.0
        d *= g
        return d
    if kind == "swish":
        sig = expit(z)
        return g * (sig + z * sig * (1.0 - sig))
    return g


@dataclass
class Tape:
    spec: MlpSpec
    params: Mapping[str, np.ndarray]
    squeeze: bool
    layers: list[dict] = field(default_factory=list)


def mlp_apply(spec: MlpSpec, params: Mapping[str, np.ndarray], x: np.ndarray) -> tuple[np.ndarray, Tape]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.widths[0]:
        raise ShapeError(f"expected input width {spec.widths[0]}, got shape {x.shape}")
    tape = Tape(spec, params, squeeze)
    h = x
    for i in range(spec.n_layers):
        w, b, g, s = spec.names(i)
        rec = {"input": h}
        z = h @ params[w] + params[b]
        if spec.layernorm[i]:
            mu = z.mean(axis=1, keepdims=True)
            inv_std = 1.0 / np.sqrt(z.var(axis=1, keepdims=True) + LN_EPS)
            zhat = (z - mu) * inv_std
            rec["zhat"], rec["inv_std"] = zhat, inv_std
            z = zhat * params[g] + params[s]
        rec["pre"] = z
        h = _activate(spec.activations[i], z)
        rec["out"] = h
        tape.layers.append(rec)
    return (h[0] if squeeze else h), tape


def mlp_grad(tape: Tape, cotangent: np.ndarray) -> tuple[Params, np.ndarray]:
    """Gradients of <output, cotangent> w.r.t. parameters and input."""
    spec, params = tape.spec, tape.params
    g_out = np.asarray(cotangent, dtype=np.float64)
    if tape.squeeze:
        g_out = g_out[None, :]
    grads: Params = {}
    for i in reversed(range(spec.n_layers)):
        rec = tape.layers[i]
        w, b, g, s = spec.names(i)
        g_out = _activate_grad(spec.activations[i], rec["pre"], rec["out"], g_out)
        if spec.layernorm[i]:
            zhat, inv_std = rec["zhat"], rec["inv_std"]
            grads[g] = np.einsum("ij,ij->j", g_out, zhat)
            grads[s] = g_out.sum(axis=0)
            gz = g_out * params[g]
            n = zhat.shape[1]
            g_out = inv_std * (gz - gz.mean(axis=1, keepdims=True)
                               - zhat * (gz * zhat).sum(axis=1, keepdims=True) / n)
        grads[w] = rec["input"].T @ g_out
        grads[b] = g_out.sum(axis=0)
        g_out = g_out @ params[w].T
    return grads, (g_out[0] if tape.squeeze else g_out)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(v * v)) for v in grads.values())))


def clip_by_global_norm(grads: Params, max_norm: float) -> tuple[Params, float]:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: v * scale for k, v in grads.items()}
    return grads, norm


class Adam:
    """Bias-corrected Adam over a parameter dict, updated in place.

    ``lr_overrides`` maps parameter names to their own learning rate.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, lr_overrides: Mapping[str, float] | None = None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lr_overrides = dict(lr_overrides or {})
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Mapping[str, np.ndarray]) -> Params:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ShapeError(f"{name}: grad {g.shape} vs param {p.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            lr = self.lr_overrides.get(name, self.lr)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params
