"""Training data: lattice Ising samples and Gray-coded 2D toy distributions."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .energy import IsingEnergy, gibbs_chain
from .state_space import State, as_state_array

BITS = 16
LEVELS = 1 << BITS
BOX = (-4.0, 4.0)
PLANE_DATASETS = ("2spirals", "8gaussians", "circles", "moons", "pinwheel", "swissroll", "checkerboard")


class OutOfBoxError(ValueError):
    pass


def torus_adjacency(n: int) -> np.ndarray:
    """Adjacency of the n x n grid with wrap-around; node (r, c) has index r*n + c."""
    A = np.zeros((n * n, n * n))
    for r in range(n):
        for c in range(n):
            i = r * n + c
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                j = ((r + dr) % n) * n + (c + dc) % n
                if j != i:
                    A[i, j] = 1.0
    return A


@dataclass(frozen=True)
class IsingSpec:
    grid_n: int
    sigma: float
    n_samples: int = 2000
    burn_in: int = 10_000
    thin: int = 10
    seed: int = 0
    n_chains: int = 100

    def __post_init__(self):
        if self.grid_n < 2 or not math.isfinite(self.sigma) or self.n_samples < 1:
            raise ValueError(f"invalid Ising spec {self}")

    @property
    def D(self) -> int:
        return self.grid_n ** 2

    @property
    def J(self) -> np.ndarray:
        return self.sigma * torus_adjacency(self.grid_n)


def ising_generate(spec: IsingSpec) -> np.ndarray:
    """Samples from exp(-E_J) with J = sigma * A_N by long-run Gibbs.

    ``n_chains`` independent chains each burn in, then emit one state every
    ``thin`` sweeps; rows are ordered round by round.
    """
    rng = np.random.default_rng(spec.seed)
    model = IsingEnergy(spec.D, J=spec.J)
    chains = min(spec.n_chains, spec.n_samples)
    rounds = -(-spec.n_samples // chains)
    x = rng.integers(0, 2, size=(chains, spec.D), dtype=np.int8)
    x = gibbs_chain(model, x, spec.burn_in, rng)
    out = []
    for _ in range(rounds):
        x = gibbs_chain(model, x, spec.thin, rng)
        out.append(x)
    return np.concatenate(out)[:spec.n_samples]


# --- planar toy distributions -------------------------------------------------

def _two_spirals(n, rng):
    t = np.sqrt(rng.random(n)) * 3 * np.pi
    sign = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    x = -np.cos(t) * t + rng.random(n) * 0.5
    y = np.sin(t) * t + rng.random(n) * 0.5
    pts = sign[:, None] * np.stack([x, y], axis=1) / 3
    return pts + rng.standard_normal((n, 2)) * 0.1


def _eight_gaussians(n, rng):
    angles = rng.integers(0, 8, size=n) * (np.pi / 4)
    radius = 4 / math.sqrt(2)
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centers + 0.2 * rng.standard_normal((n, 2))


def _circles(n, rng):
    radius = np.where(rng.random(n) < 0.5, 2.0, 4.0)
    theta = rng.random(n) * 2 * np.pi
    pts = radius[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return pts + 0.08 * 3 * rng.standard_normal((n, 2))


def _moons(n, rng):
    upper = rng.random(n) < 0.5
    t = rng.random(n) * np.pi
    x = np.where(upper, np.cos(t), 1 - np.cos(t))
    y = np.where(upper, np.sin(t), 1 - np.sin(t) - 0.5)
    pts = np.stack([x, y], axis=1) + 0.1 * rng.standard_normal((n, 2))
    return pts * 2 + np.array([-1.0, -0.2])


def _pinwheel(n, rng, arms=5, radial_std=0.3, tangential_std=0.1, rate=0.25):
    labels = rng.integers(0, arms, size=n)
    feats = rng.standard_normal((n, 2)) * np.array([radial_std, tangential_std])
    feats[:, 0] += 1.0
    angles = labels * (2 * np.pi / arms) + rate * np.exp(feats[:, 0])
    c, s = np.cos(angles), np.sin(angles)
    return 2 * np.stack([feats[:, 0] * c - feats[:, 1] * s, feats[:, 0] * s + feats[:, 1] * c], axis=1)


def _swissroll(n, rng):
    t = 1.5 * np.pi * (1 + 2 * rng.random(n))
    pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) + rng.standard_normal((n, 2))
    return pts / 5


def _checkerboard(n, rng):
    # 4x4 board of unit squares on [-2, 2]^2, uniform over the 8 squares with even (col + row)
    x = rng.random(n) * 4 - 2
    y = rng.random(n) - rng.integers(0, 2, size=n) * 2 + np.floor(x) % 2
    return np.stack([x, y], axis=1)


_SAMPLERS = {
    "2spirals": _two_spirals, "8gaussians": _eight_gaussians, "circles": _circles, "moons": _moons,
    "pinwheel": _pinwheel, "swissroll": _swissroll, "checkerboard": _checkerboard,
}


def plane_samples(name: str, n: int, rng: np.random.Generator, box=BOX) -> np.ndarray:
    if name not in _SAMPLERS:
        raise ValueError(f"unknown dataset {name!r}; choose from {', '.join(PLANE_DATASETS)}")
    return np.clip(_SAMPLERS[name](n, rng), box[0], box[1])


def plane_sample(name: str, rng: np.random.Generator, box=BOX) -> tuple[float, float]:
    x, y = plane_samples(name, 1, rng, box)[0]
    return float(x), float(y)


# --- Gray-code quantization ---------------------------------------------------

def gray_encode(b):
    b = np.asarray(b, dtype=np.int64)
    return b ^ (b >> 1)


def gray_decode(g):
    b = np.asarray(g, dtype=np.int64).copy()
    shift = 1
    while shift < 64:
        b ^= b >> shift
        shift <<= 1
    return b


def bucket(v: np.ndarray, box=BOX) -> np.ndarray:
    lo, hi = box
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < lo) or np.any(v > hi) or np.any(~np.isfinite(v)):
        raise OutOfBoxError(f"coordinates must lie in [{lo}, {hi}]")
    idx = np.floor((v - lo) / (hi - lo) * LEVELS).astype(np.int64)
    return np.minimum(idx, LEVELS - 1)


def bucket_center(idx: np.ndarray, box=BOX) -> np.ndarray:
    lo, hi = box
    return lo + (np.asarray(idx, dtype=np.float64) + 0.5) * (hi - lo) / LEVELS


def int_to_bits(v: np.ndarray, width: int = BITS) -> np.ndarray:
    """Most significant bit first."""
    v = np.asarray(v, dtype=np.int64)
    return ((v[..., None] >> np.arange(width - 1, -1, -1)) & 1).astype(np.int8)


def bits_to_int(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    return (bits << np.arange(bits.shape[-1] - 1, -1, -1)).sum(axis=-1)


def gray_quantize_batch(points: np.ndarray, box=BOX) -> np.ndarray:
    """(n, 2) real points -> (n, 32) bits: Gray code of x's bucket, then y's."""
    points = np.asarray(points, dtype=np.float64)
    g = gray_encode(bucket(points, box))
    return np.concatenate([int_to_bits(g[:, 0]), int_to_bits(g[:, 1])], axis=1)


def gray_dequantize_batch(bits: np.ndarray, box=BOX) -> np.ndarray:
    bits = as_state_array(bits)
    gx, gy = bits_to_int(bits[:, :BITS]), bits_to_int(bits[:, BITS:])
    return np.stack([bucket_center(gray_decode(gx), box), bucket_center(gray_decode(gy), box)], axis=1)


def gray_quantize(x: float, y: float, box=BOX) -> State:
    return State(tuple(int(b) for b in gray_quantize_batch(np.array([[x, y]]), box)[0]))


def gray_dequantize(s: State, box=BOX) -> tuple[float, float]:
    if not s.is_terminal or s.D != 2 * BITS:
        raise ValueError("need a terminal state with D = 32")
    x, y = gray_dequantize_batch(s.as_array()[None, :], box)[0]
    return float(x), float(y)


def plane_dataset(name: str, n: int, seed: int, box=BOX) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return gray_quantize_batch(plane_samples(name, n, rng, box), box)


# --- dataset files --------------------------------------------------------------

def dataset_header(D: int, name: str, seed: int) -> str:
    return f"# ebgfn-dataset D={D} name={name} seed={seed}"


def write_dataset(path: str | os.PathLike, data: np.ndarray, name: str, seed: int) -> None:
    data = as_state_array(data)
    lines = [dataset_header(data.shape[1], name, seed)]
    lines += [",".join("1" if b else "0" for b in row) for row in data]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_dataset(path: str | os.PathLike) -> tuple[np.ndarray, dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# ebgfn-dataset"):
        raise ValueError(f"{path}: missing dataset header")
    meta = dict(field.split("=", 1) for field in lines[0].split()[2:])
    D = int(meta["D"])
    rows = [line.split(",") for line in lines[1:] if line.strip()]
    data = np.array(rows, dtype=np.int8).reshape(len(rows), D)
    if np.any((data != 0) & (data != 1)):
        raise ValueError(f"{path}: entries must be 0 or 1")
    return data, meta
