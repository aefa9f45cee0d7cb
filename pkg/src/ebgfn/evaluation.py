"""Likelihood, MMD and Ising coupling-recovery metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .gfn import Policy, estimate_log_pt
from .state_space import as_state_array

SCORE_CAP = 20.0
CSV_HEADER = "metric,value,stderr,n,M,seed"


@dataclass
class MetricReport:
    metric: str
    value: float
    stderr: float = 0.0
    n: int = 0
    M: int = 0
    reps: int = 1
    seed: int | None = None

    def __post_init__(self):
        if self.n <= 0 or self.reps <= 0:
            raise ValueError("sample counts must be positive")
        if not self.stderr >= 0:
            raise ValueError("standard error must be non-negative")

    def csv_row(self) -> str:
        seed = "" if self.seed is None else str(self.seed)
        return f"{self.metric},{self.value!r},{self.stderr!r},{self.n},{self.M},{seed}"


def nll(policy: Policy, test_set: np.ndarray, M: int, rng: np.random.Generator,
        seed: int | None = None) -> MetricReport:
    """Mean negative log-likelihood of ``test_set`` under the sampler's terminating distribution."""
    test_set = as_state_array(test_set)
    if len(test_set) == 0:
        raise ValueError("empty test set")
    values = -estimate_log_pt(policy, test_set, M, rng)
    stderr = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return MetricReport("nll", float(values.mean()), stderr, len(values), M, seed=seed)


def hamming_matrix(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    return X @ (1.0 - Y).T + (1.0 - X) @ Y.T


def kernel_matrix(X: np.ndarray, Y: np.ndarray, kernel: str = "exp_hamming", bandwidth: float = 0.1) -> np.ndarray:
    if kernel == "exp_hamming":
        return np.exp(-bandwidth * hamming_matrix(X, Y))
    if kernel == "linear":
        sx = 2.0 * np.asarray(X, dtype=np.float64) - 1.0
        sy = 2.0 * np.asarray(Y, dtype=np.float64) - 1.0
        return sx @ sy.T / sx.shape[1]
    raise ValueError(f"unknown kernel {kernel!r}")


def mmd2(X: np.ndarray, Y: np.ndarray, kernel: str = "exp_hamming", bandwidth: float = 0.1) -> float:
    """Biased (V-statistic) squared MMD; never negative for a positive-definite kernel."""
    if len(X) < 2 or len(Y) < 2:
        raise ValueError("MMD needs at least two samples per set")
    kxx = kernel_matrix(X, X, kernel, bandwidth).mean()
    kyy = kernel_matrix(Y, Y, kernel, bandwidth).mean()
    kxy = kernel_matrix(X, Y, kernel, bandwidth).mean()
    return float(kxx + kyy - 2.0 * kxy)


def mmd(X: np.ndarray, Y: np.ndarray, kernel: str = "exp_hamming", bandwidth: float = 0.1,
        seed: int | None = None) -> MetricReport:
    name = "mmd-exp" if kernel == "exp_hamming" else "mmd-linear"
    return MetricReport(name, mmd2(X, Y, kernel, bandwidth), 0.0, min(len(X), len(Y)), seed=seed)


def mmd_repeated(sample_model: Callable[[int], np.ndarray], sample_truth: Callable[[int], np.ndarray],
                 kernel: str = "exp_hamming", bandwidth: float = 0.1, reps: int = 10, n: int = 4000,
                 seed: int | None = None) -> MetricReport:
    """Average of ``reps`` independent n-vs-n MMD² estimates, with the standard error of the mean."""
    vals = np.array([mmd2(sample_model(n), sample_truth(n), kernel, bandwidth) for _ in range(reps)])
    stderr = float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    name = "mmd-exp" if kernel == "exp_hamming" else "mmd-linear"
    return MetricReport(name, float(vals.mean()), stderr, n, reps=reps, seed=seed)


def upper_entries(J: np.ndarray) -> np.ndarray:
    J = np.asarray(J)
    return J[np.triu_indices(J.shape[0], k=1)]


def j_rmse(J_true: np.ndarray, J_learned: np.ndarray) -> float:
    J_true, J_learned = np.asarray(J_true), np.asarray(J_learned)
    if J_true.shape != J_learned.shape or J_true.ndim != 2 or J_true.shape[0] != J_true.shape[1]:
        raise ValueError(f"shape mismatch: {J_true.shape} vs {J_learned.shape}")
    return float(np.sqrt(np.mean((upper_entries(J_true) - upper_entries(J_learned)) ** 2)))


def j_recovery_score(J_true: np.ndarray, J_learned: np.ndarray) -> float:
    """Negative log-RMSE over strictly upper-triangular entries, capped at 20."""
    rmse = j_rmse(J_true, J_learned)
    if rmse == 0.0:
        return SCORE_CAP
    return min(-math.log(rmse), SCORE_CAP)
