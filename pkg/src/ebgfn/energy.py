"""Energy functions on {0,1}^D and the updates that fit them to data.

Energies take terminal states as int arrays of bits, shape (B, D). The
Ising model is defined on spins; the bit-to-spin map ``s = 2b - 1`` lives
only in :class:`IsingEnergy`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import diffnet
from .diffnet import Adam, MlpSpec
from .gfn import Policy, TrajectoryBatch, path_log_probs, sample_backward, sample_forward
from .state_space import State, as_state_array


def spins(x: np.ndarray) -> np.ndarray:
    return 2.0 * np.asarray(x, dtype=np.float64) - 1.0


class IsingEnergy:
    """E(x) = -s^T J s with s the spin vector of x and J symmetric, zero diagonal."""

    kind = "ising"
    J_NAME = "energy.J"

    def __init__(self, D: int, l1_coeff: float = 0.0, J: np.ndarray | None = None):
        self.D = D
        self.l1_coeff = l1_coeff
        J = np.zeros((D, D)) if J is None else np.array(J, dtype=np.float64)
        if J.shape != (D, D):
            raise ValueError(f"J must be {D}x{D}")
        self.params = {self.J_NAME: J}

    @property
    def J(self) -> np.ndarray:
        return self.params[self.J_NAME]

    def energy(self, x: np.ndarray) -> np.ndarray:
        s = spins(np.atleast_2d(x))
        return -np.einsum("bi,ij,bj->b", s, self.J, s)

    def mean_grad(self, x: np.ndarray) -> diffnet.Params:
        """Gradient of the batch-mean energy w.r.t. J."""
        s = spins(np.atleast_2d(x))
        return {self.J_NAME: -(s.T @ s) / len(s)}

    def flip_logit(self, x: np.ndarray, i: int) -> np.ndarray:
        """E(x with bit i = 0) - E(x with bit i = 1), i.e. the logit of p(bit i = 1 | rest)."""
        s = spins(x)
        row = self.J[i] + self.J[:, i]
        field = s @ row - 2.0 * self.J[i, i] * s[:, i]
        return 2.0 * field

    def regularizer_grad(self) -> diffnet.Params:
        g = self.l1_coeff * np.sign(self.J)
        np.fill_diagonal(g, 0.0)
        return {self.J_NAME: g}

    def project(self) -> None:
        J = self.J
        J[:] = 0.5 * (J + J.T)
        np.fill_diagonal(J, 0.0)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"energy.meta.kind": np.array(0.0), "energy.meta.D": np.array(float(self.D)),
                "energy.meta.l1": np.array(self.l1_coeff), **self.params}


class MlpEnergy:
    """Scalar MLP on the bit vector read as 0.0 / 1.0."""

    kind = "mlp"

    def __init__(self, D: int, hidden: Sequence[int] = (256, 256, 256), activation: str = "elu",
                 rng: np.random.Generator | None = None, params: diffnet.Params | None = None,
                 spec: MlpSpec | None = None):
        self.D = D
        self.l1_coeff = 0.0
        self.spec = spec or MlpSpec.build(D, list(hidden), 1, activation, prefix="energy.L")
        if params is None:
            params = diffnet.init_params(self.spec, rng if rng is not None else np.random.default_rng(0))
        self.params = params

    def energy(self, x: np.ndarray) -> np.ndarray:
        out, _ = diffnet.mlp_apply(self.spec, self.params, np.atleast_2d(x).astype(np.float64))
        return out[:, 0]

    def mean_grad(self, x: np.ndarray) -> diffnet.Params:
        x = np.atleast_2d(x).astype(np.float64)
        _, tape = diffnet.mlp_apply(self.spec, self.params, x)
        grads, _ = diffnet.mlp_grad(tape, np.full((len(x), 1), 1.0 / len(x)))
        return grads

    def flip_logit(self, x: np.ndarray, i: int) -> np.ndarray:
        x0, x1 = x.copy(), x.copy()
        x0[:, i] = 0
        x1[:, i] = 1
        e = self.energy(np.concatenate([x0, x1]))
        return e[:len(x)] - e[len(x):]

    def regularizer_grad(self) -> diffnet.Params:
        return {}

    def project(self) -> None:
        pass

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"energy.meta.kind": np.array(1.0), "energy.meta.D": np.array(float(self.D)),
                "energy.meta.hidden": np.array(self.spec.widths[1:-1], dtype=float),
                "energy.meta.activation": np.array(float(diffnet.ACTIVATIONS.index(self.spec.activations[0]))),
                **self.params}


Energy = IsingEnergy | MlpEnergy


def energy_from_state_dict(tensors: dict[str, np.ndarray]) -> Energy:
    D = int(tensors["energy.meta.D"])
    if int(tensors["energy.meta.kind"]) == 0:
        return IsingEnergy(D, float(tensors["energy.meta.l1"]), tensors[IsingEnergy.J_NAME].copy())
    hidden = [int(h) for h in np.atleast_1d(tensors["energy.meta.hidden"])]
    act = diffnet.ACTIVATIONS[int(tensors["energy.meta.activation"])]
    params = {k: v.copy() for k, v in tensors.items() if k.startswith("energy.L")}
    return MlpEnergy(D, hidden, act, params=params)


def energy_value(model: Energy, x: State | np.ndarray) -> float | np.ndarray:
    if isinstance(x, State):
        return float(model.energy(x.as_array()[None, :])[0])
    return model.energy(as_state_array(x))


def energy_param_grad(model: Energy, x: State | np.ndarray) -> diffnet.Params:
    """Gradient of the energy (batch mean for an array of states) w.r.t. the model parameters."""
    arr = x.as_array()[None, :] if isinstance(x, State) else np.atleast_2d(as_state_array(x))
    return model.mean_grad(arr)


def ebm_update(model: Energy, positives: np.ndarray, negatives: np.ndarray, opt: Adam) -> diffnet.Params:
    """One Adam step on mean grad E(positives) - mean grad E(negatives) (+ L1 on J)."""
    if len(positives) == 0 or len(negatives) == 0:
        raise ValueError("positive and negative batches must be non-empty")
    g_pos = model.mean_grad(positives)
    g_neg = model.mean_grad(negatives)
    grads = {k: g_pos[k] - g_neg[k] for k in g_pos}
    for k, v in model.regularizer_grad().items():
        grads[k] = grads[k] + v
    opt.step(model.params, grads)
    model.project()
    return grads


def mh_accept_logratio(policy: Policy | None, energy: Energy, x: np.ndarray, x2: np.ndarray,
                       tau: TrajectoryBatch, tau2: TrajectoryBatch) -> np.ndarray:
    """Log MH ratio for the move x -> x2 along (tau, tau2).

    Reverse-move probability P_B(tau2 | x2) P_F(tau) over forward-move
    probability P_B(tau | x) P_F(tau2), times exp(E(x) - E(x2)). With
    ``policy`` given, path probabilities are recomputed under it; otherwise
    the log-probabilities cached at sampling time are used.
    """
    if policy is None:
        pf1, pb1, pf2, pb2 = tau.log_pf, tau.log_pb, tau2.log_pf, tau2.log_pb
    else:
        pf1, pb1 = path_log_probs(policy, tau)
        pf2, pb2 = path_log_probs(policy, tau2)
    return energy.energy(x) - energy.energy(x2) + pb2 + pf1 - pb1 - pf2


def acceptance_probability(log_ratio: np.ndarray) -> np.ndarray:
    return np.exp(np.minimum(log_ratio, 0.0))


def back_and_forth(policy: Policy, x: np.ndarray, K: int, rng: np.random.Generator):
    """Erase K entries with P_B, repaint with P_F. Returns (x2, tau, tau2)."""
    tau = sample_backward(policy, x, K, rng)
    tau2 = sample_forward(policy, len(x), rng, start=tau.end, steps=K)
    return tau2.end, tau, tau2


@dataclass
class MhStats:
    acceptance_rate: float
    negatives: np.ndarray


def algorithm2_step(policy: Policy, energy: Energy, data_batch: np.ndarray, K: int,
                    rng: np.random.Generator, opt: Adam) -> MhStats:
    """GFlowNet-guided energy update: MH-filtered back-and-forth negatives, then ``ebm_update``."""
    x = as_state_array(data_batch)
    if not 1 <= K <= x.shape[1]:
        raise ValueError(f"K must be in [1, D], got {K}")
    x2, tau, tau2 = back_and_forth(policy, x, K, rng)
    log_ratio = mh_accept_logratio(None, energy, x, x2, tau, tau2)
    accept = np.log(rng.random(len(x))) < log_ratio
    negatives = np.where(accept[:, None], x2, x)
    ebm_update(energy, x, negatives, opt)
    return MhStats(float(accept.mean()), negatives)


def gibbs_sweep(energy: Energy, x: np.ndarray, rng: np.random.Generator,
                order: np.ndarray | None = None) -> np.ndarray:
    """One pass over all coordinates, each resampled from its exact conditional."""
    x = as_state_array(x).copy()
    order = range(x.shape[1]) if order is None else order
    for i in order:
        p1 = expit(energy.flip_logit(x, i))
        x[:, i] = rng.random(len(x)) < p1
    return x


def gibbs_chain(energy: Energy, x: np.ndarray, sweeps: int, rng: np.random.Generator,
                random_scan: bool = False) -> np.ndarray:
    for _ in range(sweeps):
        order = rng.permutation(x.shape[1]) if random_scan else None
        x = gibbs_sweep(energy, x, rng, order)
    return x


class PcdBuffer:
    """Persistent Gibbs chains; each draw restarts a chain uniformly at random with prob ``reinit_rate``."""

    def __init__(self, D: int, capacity: int = 10_000, reinit_rate: float = 0.0,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.capacity = capacity
        self.reinit_rate = reinit_rate
        self.chains = rng.integers(0, 2, size=(capacity, D), dtype=np.int8)

    def draw(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        idx = rng.choice(self.capacity, size=n, replace=False)
        x = self.chains[idx].copy()
        restart = rng.random(n) < self.reinit_rate
        x[restart] = rng.integers(0, 2, size=(int(restart.sum()), x.shape[1]), dtype=np.int8)
        return idx, x

    def write(self, idx: np.ndarray, x: np.ndarray) -> None:
        self.chains[idx] = x


def pcd_step(energy: Energy, data_batch: np.ndarray, buffer: PcdBuffer, sweeps: int,
             rng: np.random.Generator, opt: Adam) -> np.ndarray:
    """Persistent contrastive divergence with ``sweeps`` Gibbs sweeps per update."""
    idx, chains = buffer.draw(len(data_batch), rng)
    chains = gibbs_chain(energy, chains, sweeps, rng)
    buffer.write(idx, chains)
    ebm_update(energy, as_state_array(data_batch), chains, opt)
    return chains
