"""Exact flows over the full state DAG for small D.

Every one of the 3^D states gets a dense index: entry values -1/0/1 become
base-3 digits 0/1/2, least significant digit at position 0. Terminal
vectors are ordered by their binary value read most-significant-bit first,
so ``terminal_states(D)[t]`` is the binary expansion of ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .gfn import Policy, TrajectoryBatch, masked_log_softmax, path_log_probs
from .state_space import VOID, action_masks, as_state_array

MAX_D = 10
ZERO_FLOW = 1e-300


class DimensionTooLargeError(ValueError):
    pass


def _check_dim(D: int) -> None:
    if not 1 <= D <= MAX_D:
        raise DimensionTooLargeError(f"exact tables need 1 <= D <= {MAX_D}, got {D}")


@dataclass(frozen=True)
class StateTable:
    D: int
    states: np.ndarray        # (3^D, D) int8
    level: np.ndarray         # number of set entries per state
    child: np.ndarray         # (3^D, 2D) child index per forward action, -1 if invalid
    parent: np.ndarray        # (3^D, D) parent index per erased position, -1 if invalid
    by_level: tuple[np.ndarray, ...]
    terminal_index: np.ndarray  # (2^D,) state index of terminal t


@lru_cache(maxsize=None)
def state_table(D: int) -> StateTable:
    _check_dim(D)
    N = 3 ** D
    pow3 = 3 ** np.arange(D)
    idx = np.arange(N)
    digits = (idx[:, None] // pow3) % 3
    states = (digits - 1).astype(np.int8)
    level = np.count_nonzero(states != VOID, axis=1)
    a = np.arange(2 * D)
    child = idx[:, None] + (a % 2 + 1) * pow3[a // 2]
    child = np.where(np.repeat(states == VOID, 2, axis=1), child, -1)
    parent = np.where(states != VOID, idx[:, None] - digits * pow3, -1)
    by_level = tuple(np.flatnonzero(level == k) for k in range(D + 1))
    bits = terminal_states(D)
    term = ((bits + 1) * pow3).sum(axis=1)
    return StateTable(D, states, level, child, parent, by_level, term)


def terminal_states(D: int) -> np.ndarray:
    t = np.arange(2 ** D)
    return ((t[:, None] >> np.arange(D - 1, -1, -1)) & 1).astype(np.int8)


def terminal_index(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits)
    D = bits.shape[-1]
    return (bits.astype(np.int64) << np.arange(D - 1, -1, -1)).sum(axis=-1)


def state_index(states: np.ndarray) -> np.ndarray:
    states = np.asarray(states)
    D = states.shape[-1]
    return ((states.astype(np.int64) + 1) * 3 ** np.arange(D)).sum(axis=-1)


class TabularPolicy:
    """Policy backed by dense log-probability tables indexed by state."""

    def __init__(self, D: int, log_pf: np.ndarray, log_pb: np.ndarray, log_Z: float = 0.0):
        self.D = D
        self.log_pf_table = log_pf
        self.log_pb_table = log_pb
        self.log_Z = log_Z

    def log_probs(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        i = state_index(states)
        return self.log_pf_table[i], self.log_pb_table[i]

    @classmethod
    def from_probs(cls, D: int, pf: np.ndarray, pb: np.ndarray, log_Z: float = 0.0) -> "TabularPolicy":
        table = state_table(D)
        fmask, bmask = action_masks(table.states)
        with np.errstate(divide="ignore"):
            log_pf = np.where(fmask, np.log(pf), -np.inf)
            log_pb = np.where(bmask, np.log(pb), -np.inf)
        return cls(D, log_pf, log_pb, log_Z)


def policy_tables(policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Forward and backward log-probabilities of ``policy`` at every state."""
    if isinstance(policy, TabularPolicy):
        return policy.log_pf_table, policy.log_pb_table
    return policy.log_probs(state_table(policy.D).states)


def uniform_pb_table(D: int) -> np.ndarray:
    _, bmask = action_masks(state_table(D).states)
    k = bmask.sum(axis=1, keepdims=True)
    return np.where(bmask, 1.0 / np.maximum(k, 1), 0.0)


def random_pb_table(D: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    _, bmask = action_masks(state_table(D).states)
    logits = scale * rng.standard_normal(bmask.shape)
    return np.exp(masked_log_softmax(logits, bmask))


def random_pf_table(D: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    fmask, _ = action_masks(state_table(D).states)
    logits = scale * rng.standard_normal(fmask.shape)
    return np.exp(masked_log_softmax(logits, fmask))


def exact_pt(policy: Policy, D: int | None = None) -> np.ndarray:
    """Terminating distribution of the forward policy, by a DP over levels."""
    D = policy.D if D is None else D
    table = state_table(D)
    log_pf, _ = policy_tables(policy)
    pf = np.exp(log_pf)
    mass = np.zeros(3 ** D)
    mass[0] = 1.0
    for k in range(D):
        idx = table.by_level[k]
        ch = table.child[idx]
        valid = ch >= 0
        np.add.at(mass, ch[valid], (mass[idx, None] * pf[idx])[valid])
    return mass[table.terminal_index]


@dataclass
class ExactFlow:
    D: int
    state_flow: np.ndarray  # (3^D,)
    edge_flow: np.ndarray   # (3^D, 2D), indexed by parent state and forward action

    @property
    def Z(self) -> float:
        return float(self.state_flow[0])

    @property
    def terminal_flow(self) -> np.ndarray:
        return self.state_flow[state_table(self.D).terminal_index]

    def pf_table(self) -> np.ndarray:
        table = state_table(self.D)
        fmask, _ = action_masks(table.states)
        F = self.state_flow[:, None]
        uniform = fmask / np.maximum(fmask.sum(axis=1, keepdims=True), 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            pf = np.where(F > ZERO_FLOW, self.edge_flow / F, uniform)
        return np.where(fmask, pf, 0.0)

    def pb_table(self) -> np.ndarray:
        table = state_table(self.D)
        states = table.states
        _, bmask = action_masks(states)
        par = np.where(table.parent >= 0, table.parent, 0)
        act = 2 * np.arange(self.D) + np.where(states == VOID, 0, states)
        into = self.edge_flow[par, act]
        uniform = bmask / np.maximum(bmask.sum(axis=1, keepdims=True), 1)
        F = self.state_flow[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            pb = np.where(F > ZERO_FLOW, into / F, uniform)
        return np.where(bmask, pb, 0.0)

    def as_policy(self) -> TabularPolicy:
        return TabularPolicy.from_probs(self.D, self.pf_table(), self.pb_table(), float(np.log(self.Z)))

    def conservation_error(self) -> float:
        """Largest |inflow - F(s)| or |outflow - F(s)| over interior states, relative to Z."""
        table = state_table(self.D)
        inflow = np.zeros_like(self.state_flow)
        valid = table.child >= 0
        np.add.at(inflow, table.child[valid], self.edge_flow[valid])
        interior = (table.level > 0) & (table.level < self.D)
        out = self.edge_flow.sum(axis=1)
        err_in = np.abs(inflow - self.state_flow)[interior]
        err_out = np.abs(out - self.state_flow)[interior]
        return float(max(err_in.max(initial=0.0), err_out.max(initial=0.0)) / self.Z)


def flow_from_pb_and_reward(R: np.ndarray, pb, D: int) -> ExactFlow:
    """The unique Markovian flow with terminal flows R and backward policy ``pb``.

    ``pb`` is a (3^D, D) probability table or any policy (its backward side
    is used).
    """
    table = state_table(D)
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (2 ** D,) or np.any(R < 0) or not np.any(R > 0):
        raise ValueError("R must be a non-negative, not identically zero vector of length 2^D")
    if not isinstance(pb, np.ndarray):
        pb = np.exp(policy_tables(pb)[1])
    F = np.zeros(3 ** D)
    F[table.terminal_index] = R
    edge = np.zeros((3 ** D, 2 * D))
    pos = np.arange(2 * D) // 2
    for k in range(D - 1, -1, -1):
        idx = table.by_level[k]
        ch = table.child[idx]
        valid = ch >= 0
        chs = np.where(valid, ch, 0)
        e = np.where(valid, F[chs] * pb[chs, pos], 0.0)
        edge[idx] = e
        F[idx] = e.sum(axis=1)
    return ExactFlow(D, F, edge)


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)


def flow_entropy(flow: ExactFlow) -> float:
    """Expected total forward-policy entropy along a complete trajectory."""
    table = state_table(flow.D)
    nonterminal = table.level < flow.D
    h = _entropy_rows(flow.pf_table())
    return float(np.sum(flow.state_flow[nonterminal] / flow.Z * h[nonterminal]))


def flow_entropy_mc(flow: ExactFlow, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of the flow entropy from sampled trajectories."""
    from .gfn import sample_forward

    policy = flow.as_policy()
    h = _entropy_rows(flow.pf_table())
    batch = sample_forward(policy, n, rng)
    totals = h[state_index(batch.states[:, :-1])].sum(axis=1)
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(n))


def mh_accept_exact_check(flow: ExactFlow, x, x2, tau: TrajectoryBatch, tau2: TrajectoryBatch,
                          policy: Policy | None = None) -> np.ndarray:
    """Un-clamped MH ratio for back-and-forth pairs, with log R taken from the flow.

    Path probabilities are recomputed under ``policy`` (default: the flow's
    own induced policies).
    """
    policy = flow.as_policy() if policy is None else policy
    table = state_table(flow.D)
    log_R = np.log(flow.state_flow[table.terminal_index])
    t1 = terminal_index(as_state_array(x))
    t2 = terminal_index(as_state_array(x2))
    pf1, pb1 = path_log_probs(policy, tau)
    pf2, pb2 = path_log_probs(policy, tau2)
    return np.exp(log_R[t2] - log_R[t1] + pb2 + pf1 - pb1 - pf2)


def boltzmann(energies: np.ndarray) -> np.ndarray:
    """Normalized exp(-E) over an enumerated support."""
    w = -np.asarray(energies, dtype=np.float64)
    w = np.exp(w - w.max())
    return w / w.sum()


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def empirical_distribution(samples: np.ndarray) -> np.ndarray:
    samples = as_state_array(samples)
    D = samples.shape[1]
    return np.bincount(terminal_index(samples), minlength=2 ** D) / len(samples)
