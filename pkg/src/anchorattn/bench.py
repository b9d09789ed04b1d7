"""Timing and flop accounting for exact vs anchor attention.

Records are written as CSV with the header::

    mechanism,n,m,d,heads,reps,wall_ns_median,flops,checksum

and as JSON lines carrying the same keys in the same order. ``checksum`` is
the sum of all output entries (``repr`` of the float in both formats).
"""

from __future__ import annotations

import contextlib
import csv
import json
import math
import statistics
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .anchor import AnchorCountWarning, anchor_affinity, anchor_attention_explicit, anchor_attention_fast
from .errors import CapacityError
from .flops import SOFTMAX_FLOPS_PER_ENTRY
from .reference import AttentionInputs, vanilla_attention, vanilla_flops

MECHANISMS = ("vanilla", "anchor-fast", "anchor-explicit")
CSV_FIELDS = ("mechanism", "n", "m", "d", "heads", "reps", "wall_ns_median", "flops", "checksum")
DEFAULT_MEMORY_CEILING = 2 * 1024**3
MIN_FIT_POINTS = 4
CONCLUSIVE_R2 = 0.9


def anchor_flops(n: int, m: int, d: int) -> int:
    """Closed-form flop count of affinity + fast anchor attention for one head."""
    if min(n, m, d) < 1:
        raise ValueError(f"n, m, d must be >= 1, got {(n, m, d)}")
    affinity = 2 * n * m * d + SOFTMAX_FLOPS_PER_ENTRY * n * m
    return affinity + 2 * n * m * d + m * d + 2 * n * m * d


def explicit_flops(n: int, m: int, d: int) -> int:
    """Closed-form flop count of affinity + materialised ``S_t @ V``."""
    affinity = 2 * n * m * d + SOFTMAX_FLOPS_PER_ENTRY * n * m
    return affinity + m * n + 2 * n * m * n + 2 * n * n * d


def mechanism_flops(mechanism: str, n: int, m: int, d: int, heads: int = 1) -> int:
    if mechanism == "vanilla":
        return heads * vanilla_flops(n, d)
    if mechanism == "anchor-fast":
        return heads * anchor_flops(n, m, d)
    if mechanism == "anchor-explicit":
        return heads * explicit_flops(n, m, d)
    raise ValueError(f"unknown mechanism {mechanism!r}")


@dataclass(frozen=True)
class BenchRecord:
    mechanism: str
    n: int
    m: int
    d: int
    heads: int
    reps: int
    wall_ns_median: int
    flops: int
    checksum: float

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


@dataclass(frozen=True)
class ScalingFit:
    mechanism: str
    slope: float
    intercept: float
    r2: float
    n_min: int
    n_max: int
    points: int

    @property
    def conclusive(self) -> bool:
        return self.r2 >= CONCLUSIVE_R2


@dataclass
class SweepConfig:
    mechanisms: tuple[str, ...] = ("vanilla", "anchor-fast")
    ns: tuple[int, ...] = (512, 1024, 2048, 4096, 8192)
    ms: tuple[int, ...] = (32,)
    ds: tuple[int, ...] = (64,)
    heads: int = 1
    reps: int = 3
    warmup: int = 1
    seed: int = 0
    memory_ceiling: int = DEFAULT_MEMORY_CEILING
    dtype: str = "float64"
    parallel_heads: bool = False
    extra: dict = field(default_factory=dict)

    def cells(self) -> list[tuple[str, int, int, int]]:
        """Every (mechanism, n, m, d) cell, in output order.

        The exact baseline does not depend on m, so it gets one cell per (n, d)
        with m recorded as 0.
        """
        cells = set()
        for mech in self.mechanisms:
            if mech not in MECHANISMS:
                raise ValueError(f"unknown mechanism {mech!r}; choose from {', '.join(MECHANISMS)}")
            for n in self.ns:
                for d in self.ds:
                    if mech == "vanilla":
                        cells.add((mech, n, 0, d))
                    else:
                        cells.update((mech, n, m, d) for m in self.ms)
        return sorted(cells)


def _cell_inputs(seed, n, m, d, heads, dtype):
    # seeded by shape only, so every mechanism sees the same tensors
    rng = np.random.default_rng([seed, n, m, d])
    out = []
    for _ in range(heads):
        Q, K, V = (rng.standard_normal((n, d)).astype(dtype) for _ in range(3))
        W_S = (rng.standard_normal((max(m, 1), d)) / math.sqrt(d)).astype(dtype)
        out.append((AttentionInputs(Q, K, V), W_S))
    return out


def _kernel(mechanism):
    if mechanism == "vanilla":
        return lambda inp, W_S: vanilla_attention(inp)
    if mechanism == "anchor-fast":
        return lambda inp, W_S: anchor_attention_fast(anchor_affinity(W_S, inp.K), inp.V)
    return lambda inp, W_S: anchor_attention_explicit(anchor_affinity(W_S, inp.K), inp.V)


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def _check_capacity(mechanism, n, cfg: SweepConfig):
    if mechanism == "anchor-fast":
        return
    needed = n * n * np.dtype(cfg.dtype).itemsize
    if needed > cfg.memory_ceiling:
        raise CapacityError(
            f"cell {mechanism} n={n} needs a {n}x{n} matrix ({needed} bytes) "
            f"above the {cfg.memory_ceiling}-byte ceiling"
        )


def run_cell(mechanism: str, n: int, m: int, d: int, cfg: SweepConfig) -> BenchRecord:
    if cfg.reps < 3:
        raise ValueError(f"reps must be >= 3, got {cfg.reps}")
    if cfg.warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {cfg.warmup}")
    _check_capacity(mechanism, n, cfg)
    inputs = _cell_inputs(cfg.seed, n, m, d, cfg.heads, cfg.dtype)
    kernel = _kernel(mechanism)

    if cfg.parallel_heads and cfg.heads > 1:
        from concurrent.futures import ThreadPoolExecutor

        pool = ThreadPoolExecutor(max_workers=cfg.heads)

        def run():
            return list(pool.map(lambda a: kernel(*a), inputs))
    else:
        pool = None

        def run():
            return [kernel(*a) for a in inputs]

    times = []
    checksums = []
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AnchorCountWarning)
            ctx = contextlib.nullcontext() if pool else _single_thread()
            with ctx:
                for _ in range(cfg.warmup):
                    run()
                for _ in range(cfg.reps):
                    t0 = time.perf_counter_ns()
                    outs = run()
                    times.append(max(time.perf_counter_ns() - t0, 1))
                    checksums.append(float(sum(float(o.sum(dtype=np.float64)) for o in outs)))
    finally:
        if pool is not None:
            pool.shutdown()
    if len(set(checksums)) != 1:
        raise RuntimeError(f"cell {mechanism} n={n} m={m} d={d} produced differing checksums {checksums}")
    label = mechanism + ("@parallel" if pool is not None else "")
    return BenchRecord(
        mechanism=label,
        n=n,
        m=m,
        d=d,
        heads=cfg.heads,
        reps=cfg.reps,
        wall_ns_median=int(statistics.median(times)),
        flops=mechanism_flops(mechanism, n, max(m, 1), d, cfg.heads),
        checksum=checksums[0],
    )


def run_sweep(cfg: SweepConfig, progress=None) -> list[BenchRecord]:
    """Time every cell sequentially; capacity is checked for all cells before any timing."""
    cells = cfg.cells()
    for mech, n, m, d in cells:
        _check_capacity(mech, n, cfg)
    records = []
    for cell in cells:
        rec = run_cell(*cell, cfg)
        if progress is not None:
            progress(rec)
        records.append(rec)
    return records


def fit_scaling(records: Iterable[BenchRecord]) -> list[ScalingFit]:
    """Least-squares slope of log(wall time) against log(n), per (mechanism, m, d, heads) series."""
    groups: dict[tuple, list[BenchRecord]] = {}
    for r in records:
        groups.setdefault((r.mechanism, r.m, r.d, r.heads), []).append(r)
    fits = []
    for (mech, m, d, heads), recs in sorted(groups.items()):
        ns = np.array([r.n for r in recs], dtype=float)
        if len(set(ns)) < MIN_FIT_POINTS:
            raise ValueError(
                f"{mech} (m={m}, d={d}) has {len(set(ns))} distinct n values; at least {MIN_FIT_POINTS} needed"
            )
        x = np.log(ns)
        y = np.log(np.array([r.wall_ns_median for r in recs], dtype=float))
        slope, intercept = np.polyfit(x, y, 1)
        resid = y - (slope * x + intercept)
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
        fits.append(ScalingFit(mech, float(slope), float(intercept), r2, int(ns.min()), int(ns.max()), len(recs)))
    return fits


def write_csv(records: Iterable[BenchRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in records:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in r.row().values()])


def write_jsonl(records: Iterable[BenchRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.row()) + "\n")


def read_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            BenchRecord(
                mechanism=row["mechanism"],
                **{k: int(row[k]) for k in ("n", "m", "d", "heads", "reps", "wall_ns_median", "flops")},
                checksum=float(row["checksum"]),
            )
            for row in reader
        ]


def read_jsonl(path) -> list[BenchRecord]:
    with open(path) as fh:
        return [BenchRecord(**json.loads(line)) for line in fh if line.strip()]


def fits_as_dicts(fits: Iterable[ScalingFit]) -> list[dict]:
    return [dict(asdict(f), conclusive=f.conclusive) for f in fits]
