"""Training-time scaling and query-rate measurement on synthetic traversals.

Numbers are only comparable with other runs of this bench on the same
machine.
"""

from __future__ import annotations

import csv
import tempfile
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .dataset import synthesize_dataset
from .ensemble import Ensemble, query_ensemble, train_ensemble
from .errors import InvalidInputError


@dataclass
class BenchRow:
    places: int
    modules: int
    decode_seconds: float
    train_seconds: float
    train_ratio: float
    query_ms: float
    query_hz: float
    query_ratio: float


def measure_query_rate(ens: Ensemble, vectors: np.ndarray, reps: int = 1000, warmup: int = 50) -> float:
    """Mean seconds per single query, preprocessed vector in, MatchResult out."""
    if reps < 1:
        raise InvalidInputError("reps must be >= 1")
    vectors = np.asarray(vectors)
    n = len(vectors)
    for i in range(warmup):
        query_ensemble(ens, vectors[i % n])
    start = time.perf_counter()
    for i in range(reps):
        query_ensemble(ens, vectors[i % n])
    return (time.perf_counter() - start) / reps


def time_training(spikes: np.ndarray, cfg: RunConfig, repeats: int = 1) -> tuple[Ensemble, float]:
    """Train ``repeats`` times and keep the fastest wall-clock time."""
    best, ens = np.inf, None
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        ens = train_ensemble(
            spikes, cfg.hyperparams(), cfg.places_per_module, cfg.seed,
            cfg.feature_size or None, cfg.workers, cfg.shuffle,
        )
        best = min(best, time.perf_counter() - start)
    return ens, best


def run_bench(sizes: Sequence[int], cfg: RunConfig = RunConfig(), variants: int = 2, noise_sigma: float = 0.0,
              reps: int = 1000, repeats: int = 1, workdir: Optional[Path] = None) -> list[BenchRow]:
    """Synthesize, train and query at every size; ratios compare each row with the previous one."""
    sizes = [int(s) for s in sizes]
    if not sizes or any(s < 1 for s in sizes) or sizes != sorted(sizes):
        raise InvalidInputError(f"sizes must be positive and ascending, got {sizes}")
    rows: list[BenchRow] = []
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for n in sizes:
            ds = synthesize_dataset(Path(tmp) / f"synth_{n}", n, variants, noise_sigma, cfg.seed)
            start = time.perf_counter()
            spikes = ds.spikes([v.name for v in ds.train_variants], cfg.preprocess(), workers=cfg.workers)
            decode = time.perf_counter() - start
            ens, train_s = time_training(spikes, cfg, repeats)
            per_query = measure_query_rate(ens, spikes[0], reps)
            prev = rows[-1] if rows else None
            rows.append(BenchRow(
                places=n,
                modules=ens.assignment.module_count,
                decode_seconds=decode,
                train_seconds=train_s,
                train_ratio=train_s / prev.train_seconds if prev else float("nan"),
                query_ms=per_query * 1e3,
                query_hz=1.0 / per_query,
                query_ratio=per_query * 1e3 / prev.query_ms if prev else float("nan"),
            ))
    return rows


def write_bench_csv(rows: Sequence[BenchRow], fh) -> None:
    w = csv.writer(fh)
    w.writerow([f.name for f in fields(BenchRow)])
    for row in rows:
        w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in asdict(row).values()])
