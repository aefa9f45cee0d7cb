"""Joint training loop: alternate trajectory-balance and energy updates."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint, diffnet
from .diffnet import Adam
from .energy import Energy, IsingEnergy, MlpEnergy, PcdBuffer, algorithm2_step, energy_from_state_dict, pcd_step
from .evaluation import nll
from .gfn import ExplorationCfg, GFlowNet, TrajectoryBatch, sample_backward, sample_forward, tb_loss
from .state_space import as_state_array

LOG_COLUMNS = ("step", "tb_loss", "acceptance", "K", "nll_val")


class ConfigError(ValueError):
    pass


@dataclass
class TrainerCfg:
    alpha: float = 0.5
    steps: int = 20_000
    batch_size: int = 128
    gfn_lr: float = 1e-3
    logz_lr: float | None = 0.1       # None: 10x gfn_lr
    energy_lr: float = 1e-3
    k_mode: str = "linear"            # linear | constant
    k_const: int | None = None        # None: D
    explore_eps: float = 0.0
    explore_temp: float = 1.0
    l1: float = 0.0
    seed: int = 0
    eval_every: int = 0               # 0: only at the end
    eval_n: int = 500
    eval_M: int = 100
    ckpt_every: int = 0               # 0: only at the end
    clip_norm: float = 10.0
    energy_model: str = "mlp"         # mlp | ising
    energy_hidden: tuple[int, ...] = (256, 256, 256)
    gfn_hidden: tuple[int, ...] = (256, 256)
    activation: str = "elu"
    layernorm: bool = False
    uniform_backward: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.steps <= 0 or self.batch_size <= 0:
            raise ConfigError("steps and batch_size must be positive")
        if self.gfn_lr <= 0 or self.energy_lr <= 0 or (self.logz_lr is not None and self.logz_lr <= 0):
            raise ConfigError("learning rates must be positive")
        if self.k_mode not in ("linear", "constant"):
            raise ConfigError(f"unknown k_mode {self.k_mode!r}")
        if self.energy_model not in ("mlp", "ising"):
            raise ConfigError(f"unknown energy_model {self.energy_model!r}")

    @property
    def exploration(self) -> ExplorationCfg:
        return ExplorationCfg(self.explore_eps, self.explore_temp)

    @property
    def resolved_logz_lr(self) -> float:
        return 10.0 * self.gfn_lr if self.logz_lr is None else self.logz_lr


def _parse_value(kind: str, raw: str):
    optional = kind.endswith("| None")
    if optional and raw.lower() == "none":
        return None
    kind = kind.replace("| None", "").strip()
    if kind == "bool":
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ConfigError(f"not a boolean: {raw!r}")
        return raw.lower() in ("true", "1")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind.startswith("tuple"):
        return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    return raw


def parse_config(text: str) -> TrainerCfg:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    kinds = {f.name: f.type for f in dataclasses.fields(TrainerCfg)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(kinds[key], raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return TrainerCfg(**values)


def load_config(path: str | os.PathLike) -> TrainerCfg:
    return parse_config(Path(path).read_text())


def k_schedule(step: int, total: int, D: int, mode: str = "linear", k_const: int | None = None) -> int:
    """Back-and-forth depth: 1 at the first step rising linearly to D at the last, or a constant."""
    if not 0 <= step < total:
        raise ValueError(f"step {step} outside [0, {total})")
    if mode == "constant":
        return D if k_const is None else k_const
    if total == 1:
        return D
    k = 1 + math.floor((D - 1) * step / (total - 1) + 0.5)
    return min(max(k, 1), D)


def draw_sources(alpha: float, n: int, rng: np.random.Generator) -> int:
    """Number of forward rollouts among n when each is forward with probability alpha."""
    return int(np.count_nonzero(rng.random(n) < alpha))


@dataclass
class StepStats:
    step: int
    tb_loss: float
    acceptance: float
    K: int
    n_forward: int
    grad_norm: float


def build_models(cfg: TrainerCfg, D: int, rng: np.random.Generator) -> tuple[GFlowNet, Energy]:
    gfn = GFlowNet(D, cfg.gfn_hidden, cfg.activation, cfg.layernorm, cfg.uniform_backward, rng=rng)
    if cfg.energy_model == "ising":
        energy = IsingEnergy(D, cfg.l1)
    else:
        energy = MlpEnergy(D, cfg.energy_hidden, cfg.activation, rng=rng)
    return gfn, energy


class Trainer:
    """Owns the GFlowNet, the energy, both optimizers and the training random stream."""

    def __init__(self, cfg: TrainerCfg, D: int, gfn: GFlowNet | None = None, energy: Energy | None = None):
        self.cfg = cfg
        self.D = D
        init_seq, train_seq, self.eval_seq = np.random.SeedSequence(cfg.seed).spawn(3)
        built = build_models(cfg, D, np.random.default_rng(init_seq))
        self.gfn = gfn if gfn is not None else built[0]
        self.energy = energy if energy is not None else built[1]
        self.rng = np.random.default_rng(train_seq)
        self.gfn_opt = Adam(cfg.gfn_lr, lr_overrides={GFlowNet.LOG_Z: cfg.resolved_logz_lr})
        self.energy_opt = Adam(cfg.energy_lr)
        self.step = 0

    def gfn_batch(self, dataset) -> TrajectoryBatch:
        """Training trajectories: forward rollouts with exploration, and backward rollouts from data."""
        cfg = self.cfg
        n_fwd = draw_sources(cfg.alpha, cfg.batch_size, self.rng)
        n_bwd = cfg.batch_size - n_fwd
        parts = []
        if n_fwd:
            parts.append(sample_forward(self.gfn, n_fwd, self.rng, cfg.exploration))
        if n_bwd:
            x = as_state_array(dataset[self.rng.integers(len(dataset), size=n_bwd)])
            parts.append(sample_backward(self.gfn, x, self.D, self.rng))
        return TrajectoryBatch.concat(parts)

    def gfn_update(self, dataset) -> tuple[float, int, float]:
        batch = self.gfn_batch(dataset)
        log_reward = -self.energy.energy(batch.end)
        loss, grads = tb_loss(self.gfn, batch, log_reward)
        g_log_z = grads.pop(GFlowNet.LOG_Z)
        grads, norm = diffnet.clip_by_global_norm(grads, self.cfg.clip_norm)
        grads[GFlowNet.LOG_Z] = g_log_z
        self.gfn_opt.step(self.gfn.params, grads)
        return loss, batch.n_forward_source, norm

    def energy_update(self, dataset, K: int) -> float:
        x = as_state_array(dataset[self.rng.integers(len(dataset), size=self.cfg.batch_size)])
        return algorithm2_step(self.gfn, self.energy, x, K, self.rng, self.energy_opt).acceptance_rate

    def train_step(self, dataset) -> StepStats:
        if len(dataset) == 0:
            raise ValueError("empty dataset")
        cfg = self.cfg
        K = k_schedule(min(self.step, cfg.steps - 1), cfg.steps, self.D, cfg.k_mode, cfg.k_const)
        loss, n_fwd, norm = self.gfn_update(dataset)
        acc = self.energy_update(dataset, K)
        stats = StepStats(self.step, loss, acc, K, n_fwd, norm)
        self.step += 1
        return stats

    def state_dict(self) -> dict[str, np.ndarray]:
        return {**self.gfn.state_dict(), **self.energy.state_dict(), "trainer.step": np.array(float(self.step))}

    def validation_nll(self, val: np.ndarray) -> float:
        rng = np.random.default_rng([self.eval_seq.entropy, self.step])
        return nll(self.gfn, val[:self.cfg.eval_n], self.cfg.eval_M, rng).value

    def run(self, dataset: np.ndarray, val: np.ndarray | None = None, out_dir: str | os.PathLike | None = None,
            callback: Callable[[StepStats], None] | None = None) -> list[StepStats]:
        """Train for the configured number of steps.

        With ``out_dir``, writes ``log.csv``, periodic ``ckpt_<step>.txt``,
        ``final.ckpt`` and (given ``val``) ``best.ckpt`` chosen by validation NLL.
        """
        cfg = self.cfg
        out = Path(out_dir) if out_dir is not None else None
        writer, log_file = None, None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            log_file = open(out / "log.csv", "w", newline="")
            writer = csv.writer(log_file)
            writer.writerow(LOG_COLUMNS)
        history = []
        best = math.inf
        try:
            while self.step < cfg.steps:
                stats = self.train_step(dataset)
                history.append(stats)
                done = self.step == cfg.steps
                nll_val = ""
                if val is not None and ((cfg.eval_every and self.step % cfg.eval_every == 0) or done):
                    value = self.validation_nll(val)
                    nll_val = repr(value)
                    if out is not None and value < best:
                        checkpoint.save(out / "best.ckpt", self.state_dict())
                    best = min(best, value)
                if writer is not None:
                    writer.writerow([stats.step, repr(stats.tb_loss), repr(stats.acceptance), stats.K, nll_val])
                    if cfg.ckpt_every and self.step % cfg.ckpt_every == 0:
                        checkpoint.save(out / f"ckpt_{self.step}.txt", self.state_dict())
                if callback is not None:
                    callback(stats)
            if out is not None:
                checkpoint.save(out / "final.ckpt", self.state_dict())
        finally:
            if log_file is not None:
                log_file.close()
        return history


def train_sampler(gfn: GFlowNet, log_reward: Callable[[np.ndarray], np.ndarray], steps: int,
                  batch_size: int = 128, lr: float = 1e-3, logz_lr: float | None = None,
                  explore: ExplorationCfg | None = None, clip_norm: float = 10.0, seed: int = 0,
                  callback: Callable[[int, float], None] | None = None) -> GFlowNet:
    """Trajectory balance on forward rollouts against a fixed reward, no energy in the loop."""
    rng = np.random.default_rng(seed)
    explore = explore if explore is not None else ExplorationCfg()
    opt = Adam(lr, lr_overrides={GFlowNet.LOG_Z: 10.0 * lr if logz_lr is None else logz_lr})
    for step in range(steps):
        batch = sample_forward(gfn, batch_size, rng, explore)
        loss, grads = tb_loss(gfn, batch, log_reward(batch.end))
        g_log_z = grads.pop(GFlowNet.LOG_Z)
        grads, _ = diffnet.clip_by_global_norm(grads, clip_norm)
        grads[GFlowNet.LOG_Z] = g_log_z
        opt.step(gfn.params, grads)
        if callback is not None:
            callback(step, loss)
    return gfn


def load_models(path: str | os.PathLike) -> tuple[GFlowNet | None, Energy | None]:
    tensors = checkpoint.load(path)
    gfn = GFlowNet.from_state_dict(tensors) if "gfn.meta.D" in tensors else None
    energy = energy_from_state_dict(tensors) if "energy.meta.D" in tensors else None
    return gfn, energy


def train_pcd(energy: Energy, dataset: np.ndarray, steps: int, batch_size: int, lr: float,
              sweeps: int = 100, reinit_rate: float = 0.0, seed: int = 0, buffer_size: int = 10_000,
              callback: Callable[[int, Energy], None] | None = None) -> Energy:
    """Persistent contrastive divergence baseline with ``sweeps`` Gibbs sweeps per update."""
    rng = np.random.default_rng(seed)
    buffer = PcdBuffer(energy.D, max(buffer_size, batch_size), reinit_rate, rng)
    opt = Adam(lr)
    dataset = as_state_array(dataset)
    for step in range(steps):
        batch = dataset[rng.integers(len(dataset), size=batch_size)]
        pcd_step(energy, batch, buffer, sweeps, rng, opt)
        if callback is not None:
            callback(step, energy)
    return energy

