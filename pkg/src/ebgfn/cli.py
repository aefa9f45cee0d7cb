"""Command-line entry point: ``ebgfn <command> ...``."""

from __future__ import annotations

import argparse
import os
import shutil
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import checks, evaluation, tasks
from .energy import IsingEnergy
from .gfn import sample_forward
from .trainer import Trainer, load_config, load_models

TASKS = ("ising",) + tasks.PLANE_DATASETS
METRICS = ("nll", "mmd-exp", "mmd-linear", "j-rmse")


class CliError(Exception):
    pass


def thread_limit(default: int | None):
    """Honor EBGFN_THREADS; ``default`` None leaves the BLAS pool alone."""
    raw = os.environ.get("EBGFN_THREADS")
    n = int(raw) if raw else default
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def write_matrix(path: Path, M: np.ndarray) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(",".join(repr(float(v)) for v in row) + "\n" for row in M))
    os.replace(tmp, path)


def read_matrix(path: str) -> np.ndarray:
    return np.array([[float(v) for v in line.split(",")]
                     for line in Path(path).read_text().splitlines() if line.strip()])


def _need_gfn(path):
    gfn, energy = load_models(path)
    if gfn is None:
        raise CliError(f"{path}: checkpoint has no sampler")
    return gfn, energy


# --- commands -------------------------------------------------------------------

def cmd_gen_data(args, outputs: list[Path]) -> None:
    out = Path(args.out)
    outputs.append(out)
    if args.task == "ising":
        spec = tasks.IsingSpec(args.grid_n, args.sigma, args.n, args.burn_in, seed=args.seed)
        data = tasks.ising_generate(spec)
        tasks.write_dataset(out, data, "ising", args.seed)
        if args.truth_j_out:
            truth = Path(args.truth_j_out)
            outputs.append(truth)
            write_matrix(truth, spec.J)
    else:
        tasks.write_dataset(out, tasks.plane_dataset(args.task, args.n, args.seed), args.task, args.seed)


def cmd_train(args, outputs: list[Path]) -> None:
    cfg = load_config(args.config)
    data, _ = tasks.read_dataset(args.data)
    val = tasks.read_dataset(args.val)[0] if args.val else None
    out = Path(args.out_dir)
    if not out.exists():
        outputs.append(out)
    else:
        outputs += [out / name for name in ("log.csv", "final.ckpt", "best.ckpt")]
    trainer = Trainer(cfg, data.shape[1])
    every = max(cfg.steps // 20, 1)

    def report(stats):
        if args.verbose and (stats.step + 1) % every == 0:
            print(f"step {stats.step + 1}/{cfg.steps} tb_loss={stats.tb_loss:.4f} "
                  f"acceptance={stats.acceptance:.3f} K={stats.K}", file=sys.stderr)

    with thread_limit(1):
        trainer.run(data, val, out, report)


def cmd_eval(args, outputs: list[Path]) -> None:
    gfn, energy = load_models(args.ckpt)
    data, _ = tasks.read_dataset(args.data)
    rng = np.random.default_rng(args.seed)
    if args.metric == "nll":
        if gfn is None:
            raise CliError(f"{args.ckpt}: checkpoint has no sampler")
        report = evaluation.nll(gfn, data, args.M, rng, seed=args.seed)
    elif args.metric in ("mmd-exp", "mmd-linear"):
        if gfn is None:
            raise CliError(f"{args.ckpt}: checkpoint has no sampler")
        kernel = "exp_hamming" if args.metric == "mmd-exp" else "linear"
        n = min(args.n, len(data))

        def truth(k):
            return data[rng.choice(len(data), size=k, replace=False)]

        report = evaluation.mmd_repeated(lambda k: sample_forward(gfn, k, rng).end, truth, kernel,
                                         args.bandwidth, args.reps, n, seed=args.seed)
    else:
        if not isinstance(energy, IsingEnergy):
            raise CliError("j-rmse needs a checkpoint with an Ising energy")
        if not args.truth_j:
            raise CliError("j-rmse needs --truth-j")
        J_true = read_matrix(args.truth_j)
        report = evaluation.MetricReport("j-rmse", evaluation.j_rmse(J_true, energy.J), 0.0,
                                         len(evaluation.upper_entries(J_true)), seed=args.seed)
    print(evaluation.CSV_HEADER)
    print(report.csv_row())


def cmd_sample(args, outputs: list[Path]) -> None:
    gfn, _ = _need_gfn(args.ckpt)
    out = Path(args.out)
    outputs.append(out)
    x = sample_forward(gfn, args.n, np.random.default_rng(args.seed)).end
    tasks.write_dataset(out, x, "samples", args.seed)


def cmd_oracle_check(args, outputs: list[Path]) -> int:
    results = checks.SUITES[args.suite](args.d, args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_export_plot(args, outputs: list[Path]) -> None:
    gfn, energy = _need_gfn(args.ckpt)
    if gfn.D != 2 * tasks.BITS:
        raise CliError(f"export-plot needs a D = {2 * tasks.BITS} checkpoint, got D = {gfn.D}")
    out = Path(args.out)
    outputs.append(out)
    rng = np.random.default_rng(args.seed)
    pts = tasks.gray_dequantize_batch(sample_forward(gfn, args.n, rng).end)
    lines = ["kind,x,y,value"]
    lines += [f"sample,{x!r},{y!r}," for x, y in pts.tolist()]
    if energy is not None:
        lo, hi = tasks.BOX
        centers = lo + (np.arange(args.grid) + 0.5) * (hi - lo) / args.grid
        gx, gy = np.meshgrid(centers, centers, indexing="ij")
        grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
        e = energy.energy(tasks.gray_quantize_batch(grid))
        lines += [f"energy,{x!r},{y!r},{v!r}" for (x, y), v in zip(grid.tolist(), e.tolist())]
    tmp = out.with_name(out.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ebgfn", description="Energy-based GFlowNets on binary data.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a training dataset")
    g.add_argument("--task", choices=TASKS, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sigma", type=float, default=0.25)
    g.add_argument("--grid-n", type=int, default=4)
    g.add_argument("--burn-in", type=int, default=10_000, help="Gibbs sweeps before the first Ising sample")
    g.add_argument("--truth-j-out", help="also write the generating Ising coupling matrix")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="joint training of sampler and energy")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--val", help="validation set for NLL logging and best-checkpoint selection")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--metric", choices=METRICS, required=True)
    e.add_argument("--M", type=int, default=100)
    e.add_argument("--reps", type=int, default=10)
    e.add_argument("--n", type=int, default=4000)
    e.add_argument("--bandwidth", type=float, default=0.1)
    e.add_argument("--truth-j")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sample", help="draw terminal states from the forward policy")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    o = sub.add_parser("oracle-check", help="exact-oracle and finite-difference self checks")
    o.add_argument("--suite", choices=tuple(checks.SUITES), required=True)
    o.add_argument("--d", type=int, default=4)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle_check)

    x = sub.add_parser("export-plot", help="decoded samples and an energy heatmap as CSV")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--task", choices=tasks.PLANE_DATASETS, required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--n", type=int, default=5000)
    x.add_argument("--grid", type=int, default=200)
    x.add_argument("--seed", type=int, default=0)
    x.set_defaults(func=cmd_export_plot)
    return p


def _cleanup(paths: list[Path]) -> None:
    for path in paths:
        if path.is_dir():
            shutil.rmtree(path, ignore_errors=True)
        else:
            for p in (path, path.with_name(path.name + ".tmp")):
                if p.exists():
                    p.unlink()


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    outputs: list[Path] = []
    try:
        with thread_limit(None):
            code = args.func(args, outputs)
        return code or 0
    except KeyboardInterrupt:
        _cleanup(outputs)
        print("ebgfn: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # one-line diagnostic, no traceback
        _cleanup(outputs)
        print(f"ebgfn: error: {exc}".splitlines()[0], file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
