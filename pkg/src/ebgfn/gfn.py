"""GFlowNet policies over the binary-vector DAG.

Anything with a ``D`` attribute and a ``log_probs(states)`` method returning
masked forward (N, 2D) and backward (N, D) log-probabilities (``-inf`` off
support) can be used as a policy: the neural :class:`GFlowNet` here, or the
tabular policies built from exact flows in :mod:`ebgfn.oracle`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.special import logsumexp

from . import diffnet
from .diffnet import MlpSpec
from .state_space import VOID, Forward, State, action_masks, as_state_array, encode, num_set

LOG_REWARD_FLOOR = -500.0


class Policy(Protocol):
    D: int

    def log_probs(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class NonFiniteLossError(ValueError):
    pass


@dataclass(frozen=True)
class ExplorationCfg:
    epsilon: float = 0.05
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


NO_EXPLORATION = ExplorationCfg(0.0, 1.0)


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax restricted to ``mask``; rows with no valid entry are all ``-inf``."""
    z = np.where(mask, logits, -np.inf)
    top = z.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lse = top + np.log(np.exp(z - top).sum(axis=-1, keepdims=True))
        out = z - lse
    return np.where(mask, out, -np.inf)


def uniform_backward_log_probs(states: np.ndarray) -> np.ndarray:
    mask = states != VOID
    k = mask.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        return np.where(mask, -np.log(np.maximum(k, 1)), -np.inf)


class GFlowNet:
    """Shared-trunk MLP policy: one network emits 2D forward and D backward logits.

    The final affine layer is the only part not shared between the two heads
    (its columns are split). ``log_Z`` is a separate scalar parameter.
    """

    def __init__(self, D: int, hidden: Sequence[int] = (256, 256), activation: str = "elu",
                 layernorm: bool = False, uniform_backward: bool = False,
                 rng: np.random.Generator | None = None, params: diffnet.Params | None = None):
        self.D = D
        self.uniform_backward = uniform_backward
        self.spec = MlpSpec.build(D, list(hidden), 3 * D, activation, layernorm, prefix="gfn.L")
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = diffnet.init_params(self.spec, rng)
            params["gfn.log_Z"] = np.array(0.0)
        self.params = params

    LOG_Z = "gfn.log_Z"

    @property
    def log_Z(self) -> float:
        return float(self.params[self.LOG_Z])

    def logits(self, states: np.ndarray):
        out, tape = diffnet.mlp_apply(self.spec, self.params, encode(states))
        return out[:, :2 * self.D], out[:, 2 * self.D:], tape

    def log_probs(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        states = np.asarray(states)
        fwd, bwd, _ = self.logits(states)
        fmask, bmask = action_masks(states)
        log_pf = masked_log_softmax(fwd, fmask)
        if self.uniform_backward:
            log_pb = uniform_backward_log_probs(states)
        else:
            log_pb = masked_log_softmax(bwd, bmask)
        return log_pf, log_pb

    def zero_output_layer(self) -> None:
        """Make both policies exactly uniform over valid actions."""
        w, b, _, _ = self.spec.names(self.spec.n_layers - 1)
        self.params[w][:] = 0.0
        self.params[b][:] = 0.0

    def copy(self) -> "GFlowNet":
        return GFlowNet(self.D, self.spec.widths[1:-1], self.spec.activations[0],
                        self.spec.layernorm[0], self.uniform_backward,
                        params={k: v.copy() for k, v in self.params.items()})

    # checkpoint round trip: architecture goes in as small metadata tensors
    def state_dict(self) -> dict[str, np.ndarray]:
        meta = {
            "gfn.meta.D": np.array(float(self.D)),
            "gfn.meta.hidden": np.array(self.spec.widths[1:-1], dtype=float),
            "gfn.meta.activation": np.array(float(diffnet.ACTIVATIONS.index(self.spec.activations[0]))),
            "gfn.meta.layernorm": np.array(float(self.spec.layernorm[0])),
            "gfn.meta.uniform_backward": np.array(float(self.uniform_backward)),
        }
        return {**meta, **self.params}

    @classmethod
    def from_state_dict(cls, tensors: dict[str, np.ndarray]) -> "GFlowNet":
        D = int(tensors["gfn.meta.D"])
        hidden = [int(h) for h in np.atleast_1d(tensors["gfn.meta.hidden"])]
        act = diffnet.ACTIVATIONS[int(tensors["gfn.meta.activation"])]
        params = {k: v.copy() for k, v in tensors.items() if k.startswith("gfn.") and ".meta." not in k}
        return cls(D, hidden, act, bool(tensors["gfn.meta.layernorm"]),
                   bool(tensors["gfn.meta.uniform_backward"]), params=params)


def policy_distributions(policy: Policy, s: State) -> tuple[np.ndarray, np.ndarray]:
    """Forward (2D) and backward (D) probabilities at a single state.

    The forward side is empty at a terminal state, the backward side empty at
    the initial state.
    """
    log_pf, log_pb = policy.log_probs(s.as_array()[None, :])
    pf = np.exp(log_pf[0]) if not s.is_terminal else np.empty(0)
    pb = np.exp(log_pb[0]) if not s.is_initial else np.empty(0)
    return pf, pb


@dataclass
class Trajectory:
    start: State
    actions: list[Forward]
    states: list[State]
    direction: str
    log_pf: float
    log_pb: float

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def end(self) -> State:
        return self.states[-1]


@dataclass
class TrajectoryBatch:
    """B trajectories of equal length n.

    ``states`` is (B, n+1, D) in the order the trajectory was sampled.
    ``actions[:, t]`` is the flat forward index of the edge between
    ``states[:, t]`` and ``states[:, t+1]`` (for backward trajectories it is
    the bit that the erasure removed). ``log_pf`` / ``log_pb`` sum the forward
    and backward policy log-probabilities of the traversed edges, without
    any exploration or tempering.
    """

    states: np.ndarray
    actions: np.ndarray
    log_pf: np.ndarray
    log_pb: np.ndarray
    direction: str
    n_forward_source: int = field(default=0)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def end(self) -> np.ndarray:
        return self.states[:, -1]

    def __getitem__(self, i: int) -> Trajectory:
        states = [State(tuple(int(v) for v in row)) for row in self.states[i]]
        return Trajectory(states[0], [Forward.from_index(a) for a in self.actions[i]], states,
                          self.direction, float(self.log_pf[i]), float(self.log_pb[i]))

    def forward_order(self) -> tuple[np.ndarray, np.ndarray]:
        """States and actions oriented from the less-specified end."""
        if self.direction == "forward":
            return self.states, self.actions
        return self.states[:, ::-1], self.actions[:, ::-1]

    @classmethod
    def concat(cls, batches: Sequence["TrajectoryBatch"]) -> "TrajectoryBatch":
        """Join complete trajectories of any direction, stored in forward order."""
        parts = [b.forward_order() for b in batches if len(b)]
        return cls(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
                   np.concatenate([b.log_pf for b in batches if len(b)]),
                   np.concatenate([b.log_pb for b in batches if len(b)]), "forward",
                   sum(len(b) for b in batches if b.direction == "forward"))

    @classmethod
    def from_trajectory(cls, tau: Trajectory) -> "TrajectoryBatch":
        return cls(as_state_array(tau.states)[None], np.array([[a.index for a in tau.actions]]),
                   np.array([tau.log_pf]), np.array([tau.log_pb]), tau.direction)


def _gumbel_argmax(log_p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.argmax(log_p + rng.gumbel(size=log_p.shape), axis=-1)


def _exploration_log_probs(log_pf: np.ndarray, explore: ExplorationCfg) -> np.ndarray:
    if explore.epsilon == 0.0 and explore.temperature == 1.0:
        return log_pf
    valid = np.isfinite(log_pf)
    if explore.temperature == 0.0:
        greedy = np.argmax(log_pf, axis=-1)
        probs = np.zeros_like(log_pf)
        probs[np.arange(len(log_pf)), greedy] = 1.0
    else:
        probs = np.exp(masked_log_softmax(log_pf / explore.temperature, valid))
    uniform = valid / valid.sum(axis=-1, keepdims=True)
    mixed = (1.0 - explore.epsilon) * probs + explore.epsilon * uniform
    with np.errstate(divide="ignore"):
        return np.where(valid, np.log(mixed), -np.inf)


def sample_forward(policy: Policy, n: int, rng: np.random.Generator,
                   explore: ExplorationCfg = NO_EXPLORATION, start: np.ndarray | None = None,
                   steps: int | None = None) -> TrajectoryBatch:
    """Roll out ``steps`` forward actions from ``start`` (default: the all-void state, to completion)."""
    D = policy.D
    cur = np.full((n, D), VOID, dtype=np.int8) if start is None else as_state_array(start).copy()
    depth = num_set(cur)
    if len(cur) and np.any(depth != depth[0]):
        raise ValueError("all start states must have the same number of set entries")
    remaining = D - (int(depth[0]) if len(cur) else 0)
    steps = remaining if steps is None else steps
    if not 0 <= steps <= remaining:
        raise ValueError(f"cannot take {steps} forward steps with {remaining} void entries")
    rows = np.arange(len(cur))
    states, actions = [cur], []
    log_pf = np.zeros(len(cur))
    log_pb = np.zeros(len(cur))
    lpf, _ = policy.log_probs(cur)
    for _ in range(steps):
        a = _gumbel_argmax(_exploration_log_probs(lpf, explore), rng)
        log_pf += lpf[rows, a]
        nxt = cur.copy()
        nxt[rows, a // 2] = a % 2
        lpf, lpb = policy.log_probs(nxt)
        log_pb += lpb[rows, a // 2]
        states.append(nxt)
        actions.append(a)
        cur = nxt
    return TrajectoryBatch(np.stack(states, axis=1),
                           np.stack(actions, axis=1) if actions else np.zeros((len(cur), 0), dtype=np.int64),
                           log_pf, log_pb, "forward", len(cur))


def sample_forward_trajectory(policy: Policy, rng: np.random.Generator,
                              explore: ExplorationCfg = NO_EXPLORATION) -> Trajectory:
    return sample_forward(policy, 1, rng, explore)[0]


def sample_backward(policy: Policy, x: np.ndarray, steps: int, rng: np.random.Generator) -> TrajectoryBatch:
    """Erase ``steps`` entries of each row of ``x`` with the backward policy."""
    cur = as_state_array(x).copy()
    depth = num_set(cur)
    if steps < 1 or np.any(steps > depth):
        raise ValueError(f"backward steps must be in [1, |x|], got {steps}")
    rows = np.arange(len(cur))
    states, actions = [cur], []
    log_pf = np.zeros(len(cur))
    log_pb = np.zeros(len(cur))
    _, lpb = policy.log_probs(cur)
    for _ in range(steps):
        pos = _gumbel_argmax(lpb, rng)
        log_pb += lpb[rows, pos]
        a = 2 * pos + cur[rows, pos]
        nxt = cur.copy()
        nxt[rows, pos] = VOID
        lpf, lpb = policy.log_probs(nxt)
        log_pf += lpf[rows, a]
        states.append(nxt)
        actions.append(a.astype(np.int64))
        cur = nxt
    return TrajectoryBatch(np.stack(states, axis=1), np.stack(actions, axis=1), log_pf, log_pb, "backward")


def sample_backward_trajectory(policy: Policy, x: State, steps: int, rng: np.random.Generator) -> Trajectory:
    return sample_backward(policy, x.as_array()[None, :], steps, rng)[0]


def clamp_log_reward(log_reward) -> np.ndarray:
    log_reward = np.asarray(log_reward, dtype=np.float64)
    if not np.all(np.isfinite(log_reward) | (log_reward == -np.inf)):
        raise NonFiniteLossError("log reward must not be NaN or +inf")
    return np.maximum(log_reward, LOG_REWARD_FLOOR)


def path_log_probs(policy: Policy, batch: TrajectoryBatch) -> tuple[np.ndarray, np.ndarray]:
    """Sum of forward and backward log-probabilities of each path's edges, recomputed under ``policy``."""
    states, actions = batch.forward_order()
    B, n1, D = states.shape
    log_pf, log_pb = policy.log_probs(states.reshape(B * n1, D))
    log_pf = log_pf.reshape(B, n1, 2 * D)[:, :-1]
    log_pb = log_pb.reshape(B, n1, D)[:, 1:]
    lpf = np.take_along_axis(log_pf, actions[:, :, None], axis=2)[:, :, 0].sum(axis=1)
    lpb = np.take_along_axis(log_pb, (actions // 2)[:, :, None], axis=2)[:, :, 0].sum(axis=1)
    return lpf, lpb


def tb_residuals(policy: Policy, batch: TrajectoryBatch, log_reward, log_Z: float) -> np.ndarray:
    """log Z + sum log P_F - log R - sum log P_B for each trajectory."""
    lpf, lpb = path_log_probs(policy, batch)
    return log_Z + lpf - clamp_log_reward(log_reward) - lpb


def tb_loss(gfn: GFlowNet, traj: Trajectory | TrajectoryBatch, log_reward) -> tuple[float, diffnet.Params]:
    """Mean trajectory-balance loss over complete trajectories and its gradient.

    Returns ``(loss, grads)`` with a gradient entry for every parameter,
    including ``gfn.log_Z``.
    """
    batch = TrajectoryBatch.from_trajectory(traj) if isinstance(traj, Trajectory) else traj
    if np.any(~np.isfinite(np.asarray(log_reward, dtype=float))):
        raise NonFiniteLossError("log reward is not finite")
    states, actions = batch.forward_order()
    B, n1, D = states.shape
    if n1 - 1 != D or np.any(states[:, 0] != VOID):
        raise ValueError("trajectory balance needs complete trajectories from the initial state")
    flat = states.reshape(B * n1, D)
    fwd, bwd, tape = gfn.logits(flat)
    fmask, bmask = action_masks(flat)
    log_pf = masked_log_softmax(fwd, fmask).reshape(B, n1, 2 * D)[:, :-1]
    pos = actions // 2
    if gfn.uniform_backward:
        log_pb = uniform_backward_log_probs(flat).reshape(B, n1, D)[:, 1:]
    else:
        log_pb = masked_log_softmax(bwd, bmask).reshape(B, n1, D)[:, 1:]
    lpf = np.take_along_axis(log_pf, actions[:, :, None], axis=2)[:, :, 0].sum(axis=1)
    lpb = np.take_along_axis(log_pb, pos[:, :, None], axis=2)[:, :, 0].sum(axis=1)
    resid = gfn.log_Z + lpf - clamp_log_reward(log_reward) - lpb
    loss = float(np.mean(resid ** 2))
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"trajectory balance loss is {loss}")

    c = 2.0 * resid / B
    cot = np.zeros((B, n1, 3 * D))
    onehot_f = np.zeros((B, n1 - 1, 2 * D))
    np.put_along_axis(onehot_f, actions[:, :, None], 1.0, axis=2)
    cot[:, :-1, :2 * D] = c[:, None, None] * (onehot_f - np.exp(log_pf))
    if not gfn.uniform_backward:
        onehot_b = np.zeros((B, n1 - 1, D))
        np.put_along_axis(onehot_b, pos[:, :, None], 1.0, axis=2)
        cot[:, 1:, 2 * D:] = -c[:, None, None] * (onehot_b - np.exp(log_pb))
    grads, _ = diffnet.mlp_grad(tape, cot.reshape(B * n1, 3 * D))
    grads[GFlowNet.LOG_Z] = np.array(c.sum())
    return loss, grads


def estimate_log_pt(policy: Policy, x, M: int, rng: np.random.Generator,
                    chunk: int = 16384) -> np.ndarray | float:
    """Importance-sampled log P_T(x) from M backward trajectories per row of ``x``."""
    if M < 1:
        raise ValueError("M must be at least 1")
    single = isinstance(x, State)
    xs = x.as_array()[None, :] if single else as_state_array(x)
    n, D = xs.shape
    log_w = np.empty(n * M)
    rep = np.repeat(xs, M, axis=0)
    for lo in range(0, n * M, chunk):
        tb = sample_backward(policy, rep[lo:lo + chunk], D, rng)
        log_w[lo:lo + chunk] = tb.log_pf - tb.log_pb
    est = logsumexp(log_w.reshape(n, M), axis=1) - np.log(M)
    return float(est[0]) if single else est
