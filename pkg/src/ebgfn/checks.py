"""Self-checks against exact flows and finite differences.

Each suite returns a list of :class:`CheckResult`; ``oracle-check`` on the
command line prints them one per line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffnet, oracle
from .diffnet import MlpSpec
from .energy import IsingEnergy, MlpEnergy, back_and_forth
from .gfn import GFlowNet, TrajectoryBatch, estimate_log_pt, sample_backward, sample_forward, tb_loss

FD_STEP = 1e-5
FD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def random_reward(D: int, rng: np.random.Generator, low: float = 0.1, high: float = 1.0) -> np.ndarray:
    return rng.uniform(low, high, size=2 ** D)


# --- exact properties --------------------------------------------------------

def prop2_max_error(D: int, rng: np.random.Generator, pairs: int = 1000) -> float:
    """Largest |ratio - 1| of the back-and-forth MH ratio under an exact flow, over all K."""
    flow = oracle.flow_from_pb_and_reward(random_reward(D, rng), oracle.random_pb_table(D, rng), D)
    policy = flow.as_policy()
    worst = 0.0
    for K in range(1, D + 1):
        x = oracle.terminal_states(D)[rng.integers(2 ** D, size=pairs)]
        x2, tau, tau2 = back_and_forth(policy, x, K, rng)
        ratio = oracle.mh_accept_exact_check(flow, x, x2, tau, tau2, policy)
        worst = max(worst, float(np.max(np.abs(ratio - 1.0))))
    return worst


def prop1_violations(D: int, rng: np.random.Generator, rewards: int = 20, policies: int = 100) -> tuple[int, float]:
    """Count random backward policies whose flow entropy is not strictly below the uniform one.

    Also returns the smallest observed gap H(uniform) - H(random).
    """
    uniform = oracle.uniform_pb_table(D)
    bad, min_gap = 0, np.inf
    for _ in range(rewards):
        R = random_reward(D, rng)
        h_uniform = oracle.flow_entropy(oracle.flow_from_pb_and_reward(R, uniform, D))
        for _ in range(policies):
            pb = oracle.random_pb_table(D, rng)
            gap = h_uniform - oracle.flow_entropy(oracle.flow_from_pb_and_reward(R, pb, D))
            min_gap = min(min_gap, gap)
            if not gap > 0:
                bad += 1
    return bad, float(min_gap)


def props_suite(D: int = 4, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    err = prop2_max_error(D, rng)
    out.append(CheckResult(f"exact flow accepts every back-and-forth proposal (D={D})", err <= 1e-9,
                           f"max |ratio - 1| = {err:.3g}"))
    bad, gap = prop1_violations(D, rng)
    out.append(CheckResult(f"uniform backward policy maximizes flow entropy (D={D})", bad == 0,
                           f"{bad} violations, min gap = {gap:.3g}"))
    R = random_reward(D, rng)
    uniform = oracle.uniform_pb_table(D)
    h = oracle.flow_entropy(oracle.flow_from_pb_and_reward(R, uniform, D))
    h2 = oracle.flow_entropy(oracle.flow_from_pb_and_reward(R, uniform.copy(), D))
    out.append(CheckResult("entropy tie for the uniform policy itself", h == h2, f"{h!r} vs {h2!r}"))
    return out


def flows_suite(D: int = 4, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    R = random_reward(D, rng)
    pb = oracle.random_pb_table(D, rng)
    flow = oracle.flow_from_pb_and_reward(R, pb, D)
    policy = flow.as_policy()
    out = []
    cons = flow.conservation_error()
    out.append(CheckResult("flow conservation at interior states", cons <= 1e-12, f"max error / Z = {cons:.3g}"))
    z_err = abs(flow.Z - R.sum()) / R.sum()
    out.append(CheckResult("Z equals total reward", z_err <= 1e-12, f"relative error = {z_err:.3g}"))
    pt_err = float(np.max(np.abs(oracle.exact_pt(policy) - R / R.sum())))
    out.append(CheckResult("terminating distribution equals R / Z", pt_err <= 1e-12, f"max error = {pt_err:.3g}"))
    table = oracle.state_table(D)
    inner = table.level > 0
    pb_err = float(np.max(np.abs(flow.pb_table() - pb)[inner]))
    out.append(CheckResult("induced backward policy recovers the input", pb_err <= 1e-12, f"max error = {pb_err:.3g}"))
    est = estimate_log_pt(policy, oracle.terminal_states(D), 1, rng)
    est_err = float(np.max(np.abs(est - np.log(R / R.sum()))))
    out.append(CheckResult("one-sample likelihood estimate is exact", est_err <= 1e-9, f"max error = {est_err:.3g}"))
    return out


# --- finite differences ---------------------------------------------------------

def _relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    # the floor keeps exactly-zero gradients from turning roundoff into a relative error of 1
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), floor))


def fd_check(f, params: diffnet.Params, grads: diffnet.Params, rng: np.random.Generator,
             coords: int = 6, h: float = FD_STEP) -> float:
    """Compare ``grads`` with central differences of scalar ``f()`` at a few coordinates per tensor."""
    analytic, numeric = [], []
    for name, p in params.items():
        if name not in grads:
            continue
        flat = p.reshape(-1)
        for i in rng.choice(flat.size, size=min(coords, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            numeric.append((up - down) / (2 * h))
            analytic.append(grads[name].reshape(-1)[i])
    return _relative_error(np.array(analytic), np.array(numeric))


def mlp_case(rng: np.random.Generator) -> float:
    act = diffnet.ACTIVATIONS[rng.integers(len(diffnet.ACTIVATIONS))]
    ln = bool(rng.integers(2))
    din, dout = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    hidden = [int(h) for h in rng.integers(4, 12, size=rng.integers(1, 3))]
    spec = MlpSpec.build(din, hidden, dout, act, ln)
    params = diffnet.init_params(spec, rng)
    for name in params:
        params[name] += 0.1 * rng.standard_normal(params[name].shape)
    x = rng.standard_normal((int(rng.integers(1, 5)), din))
    w = rng.standard_normal((len(x), dout))

    def f():
        return float(np.sum(diffnet.mlp_apply(spec, params, x)[0] * w))

    _, tape = diffnet.mlp_apply(spec, params, x)
    grads, gx = diffnet.mlp_grad(tape, w)
    err = fd_check(f, params, grads, rng)
    inputs = {"x": x}
    return max(err, fd_check(lambda: float(np.sum(diffnet.mlp_apply(spec, params, inputs["x"])[0] * w)),
                             inputs, {"x": gx}, rng))


def tb_case(rng: np.random.Generator) -> float:
    D = int(rng.integers(2, 5))
    gfn = GFlowNet(D, [int(rng.integers(8, 17))], diffnet.ACTIVATIONS[rng.integers(2)],
                   bool(rng.integers(2)), bool(rng.integers(2)), rng=rng)
    # jitter biases and gains so layer norm never sees a near-constant row
    for name in gfn.params:
        gfn.params[name] += 0.1 * rng.standard_normal(gfn.params[name].shape)
    n = int(rng.integers(1, 5))
    parts = [sample_forward(gfn, n, rng)]
    x = rng.integers(0, 2, size=(int(rng.integers(1, 4)), D)).astype(np.int8)
    parts.append(sample_backward(gfn, x, D, rng))
    batch = TrajectoryBatch.concat(parts)
    log_r = rng.normal(size=len(batch))
    _, grads = tb_loss(gfn, batch, log_r)
    return fd_check(lambda: tb_loss(gfn, batch, log_r)[0], gfn.params, grads, rng)


def energy_case(rng: np.random.Generator) -> float:
    D = int(rng.integers(2, 7))
    x = rng.integers(0, 2, size=(int(rng.integers(1, 6)), D)).astype(np.int8)
    if rng.integers(2):
        model = IsingEnergy(D, J=rng.standard_normal((D, D)))
    else:
        model = MlpEnergy(D, [int(rng.integers(2, 8))] * int(rng.integers(1, 4)),
                          diffnet.ACTIVATIONS[rng.integers(2)], rng=rng)
        # zero biases put all-zero rows exactly on the ELU kink in the second derivative
        for name in model.params:
            model.params[name] += 0.1 * rng.standard_normal(model.params[name].shape)
    return fd_check(lambda: float(model.energy(x).mean()), model.params, model.mean_grad(x), rng)


def gradients_suite(n: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for label, case in (("MLP layers", mlp_case), ("trajectory balance loss", tb_case), ("energy models", energy_case)):
        errs = np.array([case(rng) for _ in range(n)])
        worst = float(errs.max())
        out.append(CheckResult(f"{label} finite differences ({n} configurations)", worst <= FD_TOL,
                               f"max relative error = {worst:.3g}"))
    return out


SUITES = {"props": props_suite, "flows": flows_suite, "gradients": lambda D=4, seed=0: gradients_suite(seed=seed)}
