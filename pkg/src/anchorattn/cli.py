"""``anchorattn`` command-line entry point.

Exit codes: 0 success, 1 property/gradient failure, 2 usage error,
3 capacity error, 4 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EXIT_DATA, EXIT_FAILURE, EXIT_OK, EXIT_USAGE, AnchorAttnError
from .config import ConfigError, RunConfig, build_config, load_config_file

log = logging.getLogger("anchorattn")


def _flag(parser, name, type=None, help=None, action=None):
    kwargs = dict(default=argparse.SUPPRESS, help=help, dest=name.replace("-", "_"))
    if action:
        kwargs["action"] = action
    else:
        kwargs["type"] = type
    parser.add_argument(f"--{name}", **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchorattn", description="Anchor attention toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        _flag(p, "seed", int, "random seed (default 0)")
        _flag(p, "out", str, "output directory")
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("verify", help="randomised invariant suite")
    common(p)
    _flag(p, "instances", int, "number of random instances (default 1000)")
    _flag(p, "threads", int, "worker threads (default $ANCHORATTN_THREADS or 1)")
    _flag(p, "poison-delta", help="test hook: zero one column-mass entry", action="store_true")

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    common(p)
    for name in ("n", "m", "d", "D", "heads"):
        _flag(p, name, int)
    _flag(p, "step", float, "finite-difference step (default 1e-5)")
    _flag(p, "tol", float, "relative error tolerance (default 1e-5)")
    _flag(p, "zero-init", help="all parameters zero", action="store_true")
    _flag(p, "shared-anchors", help="one anchor matrix for all heads", action="store_true")

    p = sub.add_parser("bench", help="timing sweep of exact vs anchor attention")
    common(p)
    _flag(p, "mechanisms", str, "comma list of vanilla,anchor-fast,anchor-explicit")
    _flag(p, "ns", str, "comma list of token counts")
    _flag(p, "m", int, "anchor count (default 30)")
    _flag(p, "ms", str, "comma list of anchor counts (overrides --m)")
    _flag(p, "d", int, "head dimension (default 64)")
    _flag(p, "ds", str, "comma list of head dimensions (overrides --d)")
    _flag(p, "heads", int)
    _flag(p, "reps", int, "timed repetitions per cell (>= 3)")
    _flag(p, "warmup", int, "untimed warm-up runs per cell (>= 1)")
    _flag(p, "memory-ceiling", int, "largest n x n buffer in bytes (default 2 GiB)")
    _flag(p, "float32", help="time in single precision", action="store_true")
    _flag(p, "parallel-heads", help="run heads on threads (labelled @parallel)", action="store_true")
    _flag(p, "dry-run", help="print the cell grid and exit", action="store_true")
    p.add_argument("--no-plot", dest="plot", action="store_false", default=argparse.SUPPRESS)

    p = sub.add_parser("demo-train", help="train a small anchor-attention classifier")
    common(p)
    for name, t in (("m", int), ("heads", int), ("width", int), ("lr", float), ("epochs", int),
                    ("batch-size", int), ("samples", int), ("classes", int), ("tokens", int),
                    ("D", int), ("separation", float), ("noise", float), ("holdout", float), ("patch", int)):
        _flag(p, name, t)
    _flag(p, "dataset", str, "IDX image file (synthetic task when omitted)")
    _flag(p, "labels", str, "IDX label file")
    _flag(p, "shared-anchors", action="store_true")
    p.add_argument("--no-plot", dest="plot", action="store_false", default=argparse.SUPPRESS)

    p = sub.add_parser("anchors-fit", help="fixed-point anchor fitting on a key matrix")
    common(p)
    _flag(p, "m", int, "anchor count (default 30)")
    _flag(p, "d", int, "key dimension for the synthetic key set (default 4)")
    _flag(p, "iters", int, "fixed-point iterations (default 20)")
    _flag(p, "init", str, "initializer: keys or gaussian")
    _flag(p, "keys", str, "CSV key matrix (three synthetic clusters when omitted)")
    _flag(p, "dataset", str, "IDX image file; its flattened tokens are used as keys")
    _flag(p, "patch", int)
    p.add_argument("--no-plot", dest="plot", action="store_false", default=argparse.SUPPRESS)
    return parser


def _out_dir(cfg: RunConfig, default: str | None) -> Path | None:
    path = cfg.out or default
    if path is None:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -----------------------------------------------------------------


def cmd_verify(cfg: RunConfig) -> int:
    from .verify import PROPERTIES, run_verify

    report = run_verify(instances=cfg.instances, seed=cfg.seed, poison_delta=cfg.poison_delta, threads=cfg.threads)
    lines = report.lines()
    print("\n".join(lines))
    out = _out_dir(cfg, None)
    if out is not None:
        (out / "verify.txt").write_text("\n".join(lines) + "\n")
        with open(out / "verify.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["property", "max_error", "tolerance", "checked", "passed", "description"])
            for r in report.results:
                w.writerow([r.name, repr(r.max_error), repr(r.tolerance), r.checked, r.passed, PROPERTIES[r.name][1]])
    return EXIT_OK if report.passed else EXIT_FAILURE


def gradcheck_model(cfg: RunConfig):
    """Parameters, loss and analytic gradients of one multi-head block with a seeded linear readout."""
    from .anchor import init_multi_head
    from .autograd import (
        multi_head_backward,
        multi_head_forward,
        pack_multi_head,
        pack_multi_head_grads,
        unpack_multi_head,
    )

    rng = np.random.default_rng(cfg.seed)
    template = init_multi_head(cfg.D, cfg.d, cfg.m, cfg.heads, rng, cfg.shared_anchors)
    X = rng.standard_normal((cfg.n, cfg.D))
    readout = rng.standard_normal((cfg.n, cfg.d))
    params = dict(pack_multi_head(template))
    params["X"] = X
    if cfg.zero_init:
        params = {k: np.zeros_like(v) for k, v in params.items()}

    def loss(p):
        out, _ = multi_head_forward(p["X"], unpack_multi_head(p, template))
        return float((out * readout).sum())

    mh = unpack_multi_head(params, template)
    _, cache = multi_head_forward(params["X"], mh)
    grads = multi_head_backward(params["X"], mh, cache, readout)
    explicit = multi_head_backward(params["X"], mh, cache, readout, explicit=True)
    analytic = pack_multi_head_grads(grads)
    analytic["X"] = grads.d_X
    other = pack_multi_head_grads(explicit)
    other["X"] = explicit.d_X
    path_gap = max(float(np.abs(analytic[k] - other[k]).max()) for k in analytic)
    return params, loss, analytic, path_gap


def cmd_gradcheck(cfg: RunConfig) -> int:
    from .autograd import finite_difference_check

    params, loss, analytic, path_gap = gradcheck_model(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        reports = finite_difference_check(params, loss, analytic, cfg.step)
    for w in caught:
        if "band" in str(w.message):
            print(f"warning: {w.message}", file=sys.stderr)
    ok = True
    print(f"{'parameter':<12} {'entries':>7} {'max_rel_err':>12}  status")
    for r in reports:
        passed = r.passed(cfg.tol)
        ok &= passed
        print(f"{r.param:<12} {r.count:>7} {r.max_rel_error:>12.3e}  {'PASS' if passed else 'FAIL'}")
    path_ok = path_gap <= 1e-10
    print(f"fast vs explicit backward max abs diff {path_gap:.3e}  {'PASS' if path_ok else 'FAIL'}")
    ok &= path_ok
    out = _out_dir(cfg, None)
    if out is not None:
        with open(out / "gradcheck.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["param", "entries", "max_rel_error", "step", "passed"])
            for r in reports:
                w.writerow([r.param, r.count, repr(r.max_rel_error), repr(r.step), r.passed(cfg.tol)])
    print("gradcheck: " + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_FAILURE


def sweep_config(cfg: RunConfig):
    from .bench import SweepConfig

    return SweepConfig(
        mechanisms=cfg.mechanisms,
        ns=cfg.ns,
        ms=cfg.ms or (cfg.m,),
        ds=cfg.ds if cfg.ds else (cfg.d,),
        heads=cfg.heads if cfg.heads else 1,
        reps=cfg.reps,
        warmup=cfg.warmup,
        seed=cfg.seed,
        memory_ceiling=cfg.memory_ceiling,
        dtype="float32" if cfg.float32 else "float64",
        parallel_heads=cfg.parallel_heads,
    )


def cmd_bench(cfg: RunConfig) -> int:
    from . import bench

    sweep = sweep_config(cfg)
    cells = sweep.cells()
    if cfg.dry_run:
        print(f"{len(cells)} cells (dtype {sweep.dtype}, heads {sweep.heads}, reps {sweep.reps}):")
        for mech, n, m, d in cells:
            print(f"  {mech:<16} n={n:<6} m={m:<4} d={d}")
        return EXIT_OK

    def progress(rec):
        flag = "  [m >= n]" if rec.mechanism != "vanilla" and rec.m >= rec.n else ""
        print(f"{rec.mechanism:<16} n={rec.n:<6} m={rec.m:<4} d={rec.d:<4} "
              f"{rec.wall_ns_median / 1e6:10.3f} ms  flops={rec.flops}{flag}", flush=True)

    records = bench.run_sweep(sweep, progress=progress)
    out = _out_dir(cfg, "bench-out")
    bench.write_csv(records, out / "bench.csv")
    bench.write_jsonl(records, out / "bench.jsonl")
    try:
        fits = bench.fit_scaling(records)
    except ValueError as exc:
        print(f"scaling fit skipped: {exc}")
        fits = []
    for f in fits:
        verdict = "" if f.conclusive else "  (inconclusive, r2 < 0.9)"
        print(f"slope {f.mechanism:<16} {f.slope:.3f}  r2={f.r2:.4f}  n=[{f.n_min}, {f.n_max}]{verdict}")
    (out / "fits.json").write_text(json.dumps(bench.fits_as_dicts(fits), indent=2) + "\n")
    if cfg.plot:
        from .plotting import plot_flops, plot_scaling

        plot_scaling(records, fits, out / "scaling.png")
        plot_flops(records, out / "flops.png")
    print(f"wrote {out / 'bench.csv'} and {out / 'bench.jsonl'}")
    return EXIT_OK


def _load_task(cfg: RunConfig):
    from .data import load_idx_dataset, make_synthetic_task

    if cfg.dataset:
        return load_idx_dataset(cfg.dataset, cfg.labels, patch=cfg.patch)
    return make_synthetic_task(
        samples=cfg.samples,
        classes=cfg.classes,
        tokens=cfg.tokens,
        dim=cfg.D,
        separation=cfg.separation,
        noise=cfg.noise,
        seed=cfg.seed,
    )


def cmd_demo_train(cfg: RunConfig) -> int:
    from .model import ClassifierConfig, train_classifier

    task = _load_task(cfg)
    train, holdout = task.split(cfg.holdout, seed=cfg.seed)
    model_cfg = ClassifierConfig(
        in_dim=task.X.shape[2], classes=task.classes, width=cfg.width, heads=cfg.heads,
        anchors=cfg.m, shared_anchors=cfg.shared_anchors,
    )
    n_tokens = task.X.shape[1]
    if cfg.m >= n_tokens:
        print(f"warning: m={cfg.m} anchors for {n_tokens} tokens gives no complexity advantage", file=sys.stderr)
    print(f"task: {len(train)} train / {len(holdout)} holdout samples, {n_tokens} tokens x {task.X.shape[2]}, "
          f"{task.classes} classes")
    result = train_classifier(
        train, holdout, model_cfg, epochs=cfg.epochs, lr=cfg.lr, batch_size=cfg.batch_size, seed=cfg.seed,
        on_epoch=lambda e, loss: print(f"epoch {e:3d}  loss {loss:.6f}", flush=True),
    )
    if result.diverged:
        print(f"training diverged (non-finite loss); try a smaller --lr than {cfg.lr}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"train accuracy   {result.train_accuracy:.4f}")
    print(f"holdout accuracy {result.holdout_accuracy:.4f}")
    out = _out_dir(cfg, None)
    if out is not None:
        with open(out / "train_log.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss"])
            for e, loss in enumerate(result.epoch_losses, 1):
                w.writerow([e, repr(loss)])
        (out / "metrics.json").write_text(json.dumps(
            {"train_accuracy": result.train_accuracy, "holdout_accuracy": result.holdout_accuracy,
             "epochs": cfg.epochs, "seed": cfg.seed}, indent=2) + "\n")
        if cfg.plot and result.epoch_losses:
            from .plotting import plot_training

            plot_training(result.epoch_losses, out / "loss.png")
    return EXIT_OK


def _load_keys(cfg: RunConfig):
    from .anchorfile import read_matrix_csv
    from .data import load_idx_dataset, three_cluster_keys

    if cfg.keys:
        return read_matrix_csv(cfg.keys)
    if cfg.dataset:
        task = load_idx_dataset(cfg.dataset, patch=cfg.patch)
        return task.X.reshape(-1, task.X.shape[2])
    keys, _ = three_cluster_keys(dim=cfg.d, seed=cfg.seed)
    return keys


def cmd_anchors_fit(cfg: RunConfig) -> int:
    from .anchor import AnchorCountWarning, init_anchors, is_non_increasing, refine_anchors
    from .anchorfile import write_anchors, write_anchors_csv

    K = _load_keys(cfg)
    rng = np.random.default_rng(cfg.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AnchorCountWarning)
        if cfg.init == "keys":
            W0 = init_anchors(cfg.m, K.shape[1], rng, "keys", K=K, refine_steps=0)
        else:
            W0 = init_anchors(cfg.m, K.shape[1], rng, cfg.init)
        W, trace = refine_anchors(W0, K, cfg.iters)
    for t, value in enumerate(trace):
        print(f"iter {t:3d}  objective {value:.12g}")
    out = _out_dir(cfg, "anchors-out")
    write_anchors(out / "anchors.bin", W)
    write_anchors_csv(out / "anchors.csv", W)
    with open(out / "objective.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective"])
        for t, value in enumerate(trace):
            w.writerow([t, repr(value)])
    if cfg.plot:
        from .plotting import plot_objective

        plot_objective(trace, out / "objective.png")
    print(f"wrote {cfg.m} x {K.shape[1]} anchors to {out / 'anchors.bin'}")
    if not is_non_increasing(trace):
        print("objective increased during fitting", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


COMMANDS = {
    "verify": cmd_verify,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "demo-train": cmd_demo_train,
    "anchors-fit": cmd_anchors_fit,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    cli_values = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        file_values = load_config_file(args.config) if args.config else {}
        cfg = build_config(args.command, file_values, cli_values)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"anchorattn: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AnchorAttnError as exc:
        print(f"anchorattn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"anchorattn: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"anchorattn: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
