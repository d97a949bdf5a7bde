"""Matching decisions, P@100R, R@N, precision-recall sweeps and the SAD baseline.

A similarity matrix has one row per query and one column per reference
place; higher means more similar. Every ranking here breaks ties toward the
lower column index, so ``match_place(row)`` is always the first entry of the
ranking used by :func:`recall_at_n`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import GroundTruth
from .errors import InvalidInputError
from .imaging import ProcessedImage

RECALL_NS = (1, 5, 10, 15, 20, 25)


def match_place(amplitudes) -> tuple[int, float]:
    amps = np.asarray(amplitudes)
    if amps.ndim != 1 or amps.size == 0:
        raise InvalidInputError("match_place needs a non-empty 1-D amplitude vector")
    idx = int(np.argmax(amps))  # first maximum
    return idx, float(amps[idx])


def _check_sim(sim) -> np.ndarray:
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.size == 0:
        raise InvalidInputError(f"similarity matrix must be non-empty 2-D, got shape {sim.shape}")
    if not np.all(np.isfinite(sim)):
        raise InvalidInputError("similarity matrix contains non-finite values")
    return sim


def _check_gt(sim: np.ndarray, gt: GroundTruth) -> None:
    if len(gt) != sim.shape[0]:
        raise InvalidInputError(f"{sim.shape[0]} queries but ground truth for {len(gt)}")


def precision_at_100_recall(matches: Sequence[int], gt: GroundTruth) -> float:
    """Percent of forced matches that are correct."""
    predicted = np.asarray(matches)
    if len(predicted) != len(gt):
        raise InvalidInputError("every query needs exactly one prediction")
    return 100.0 * float(np.mean(gt.correct_mask(predicted)))


def ranking(sim) -> np.ndarray:
    """Column indices of each row, most similar first, ties by lower index."""
    sim = _check_sim(sim)
    return np.argsort(-sim, axis=1, kind="stable")


def recall_at_n(sim, gt: GroundTruth, n: int, ranks: Optional[np.ndarray] = None) -> float:
    """Percent of queries whose true place is among the ``n`` best columns; ``n`` is clamped."""
    sim = _check_sim(sim)
    _check_gt(sim, gt)
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    n = min(n, sim.shape[1])
    top = (ranking(sim) if ranks is None else ranks)[:, :n]
    hit = np.abs(top - gt.true_index[:, None]) <= gt.tolerance
    return 100.0 * float(np.mean(hit.any(axis=1)))


def recall_curve(sim, gt: GroundTruth, ns: Sequence[int] = RECALL_NS) -> dict[int, float]:
    ranks = ranking(sim)
    return {int(n): recall_at_n(sim, gt, n, ranks) for n in ns}


def pr_curve(sim, gt: GroundTruth) -> list[tuple[float, float]]:
    """Threshold sweep over best-match amplitudes, one point per distinct amplitude.

    Queries whose best amplitude is at or above the threshold count as
    retrieved. The last point always has recall 1 and precision P@100R/100.
    """
    sim = _check_sim(sim)
    _check_gt(sim, gt)
    best_idx = np.argmax(sim, axis=1)
    best = sim[np.arange(sim.shape[0]), best_idx]
    correct = gt.correct_mask(best_idx)
    order = np.argsort(-best, kind="stable")
    best, correct = best[order], correct[order]
    total = len(best)
    # a point is emitted after the last query sharing each amplitude
    last_of_group = np.append(best[1:] != best[:-1], True)
    retrieved = np.arange(1, total + 1)[last_of_group]
    hits = np.cumsum(correct)[last_of_group]
    return [(float(h / r), float(r / total)) for h, r in zip(hits, retrieved)]


def _as_matrix(images) -> np.ndarray:
    arrays = [img.data if isinstance(img, ProcessedImage) else np.asarray(img) for img in images]
    if not arrays:
        raise InvalidInputError("expected at least one image")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise InvalidInputError("all images must share one size")
    return np.stack([a.reshape(-1) for a in arrays]).astype(np.float64)


def sad_baseline(refs, queries) -> np.ndarray:
    """Negated sum of absolute differences, shape ``(len(queries), len(refs))``."""
    r, q = _as_matrix(refs), _as_matrix(queries)
    if r.shape[1] != q.shape[1]:
        raise InvalidInputError(f"reference images have {r.shape[1]} pixels, queries {q.shape[1]}")
    return -cdist(q, r, metric="cityblock")


@dataclass
class MethodResult:
    p_at_100r: float
    recall_at_n: dict[int, float]
    pr_curve: list[tuple[float, float]]
    predicted: list[int]
    amplitude: list[float]
    correct: list[bool]


def evaluate(sim, gt: GroundTruth, ns: Sequence[int] = RECALL_NS) -> MethodResult:
    sim = _check_sim(sim)
    _check_gt(sim, gt)
    predicted = np.argmax(sim, axis=1)
    return MethodResult(
        p_at_100r=precision_at_100_recall(predicted, gt),
        recall_at_n=recall_curve(sim, gt, ns),
        pr_curve=pr_curve(sim, gt),
        predicted=[int(p) for p in predicted],
        amplitude=[float(a) for a in sim[np.arange(len(predicted)), predicted]],
        correct=[bool(c) for c in gt.correct_mask(predicted)],
    )


@dataclass
class EvalReport:
    true_index: list[int]
    tolerance: int
    methods: dict[str, MethodResult]
    timing: dict[str, float] = field(default_factory=dict)
    places: int = 0

    def to_dict(self) -> dict:
        return {
            "places": self.places,
            "queries": len(self.true_index),
            "tolerance": self.tolerance,
            "true_index": self.true_index,
            "timing": self.timing,
            "methods": {
                name: {**asdict(res), "recall_at_n": {str(k): v for k, v in res.recall_at_n.items()}}
                for name, res in self.methods.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        methods = {}
        for name, res in data["methods"].items():
            methods[name] = MethodResult(
                p_at_100r=res["p_at_100r"],
                recall_at_n={int(k): v for k, v in res["recall_at_n"].items()},
                pr_curve=[tuple(p) for p in res["pr_curve"]],
                predicted=res["predicted"],
                amplitude=res["amplitude"],
                correct=res["correct"],
            )
        return cls(data["true_index"], data["tolerance"], methods, data.get("timing", {}), data.get("places", 0))


def write_similarity(path, sim) -> None:
    """Raw float32 little-endian rows plus a ``.json`` sidecar holding the shape."""
    path = Path(path)
    sim = np.ascontiguousarray(sim, dtype="<f4")
    path.write_bytes(sim.tobytes())
    header = {"shape": list(sim.shape), "dtype": "float32", "byte_order": "little", "rows": "queries"}
    path.with_suffix(".json").write_text(json.dumps(header))


def read_similarity(path) -> np.ndarray:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    return np.frombuffer(path.read_bytes(), dtype="<f4").reshape(header["shape"])


def write_report(report: EvalReport, out_dir, similarities: Optional[dict[str, np.ndarray]] = None) -> Path:
    """Write ``report.json`` plus per-method CSVs (matches, PR curve, R@N) and similarity dumps."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    for name, res in report.methods.items():
        with open(out / f"matches_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["query", "true_index", "predicted", "amplitude", "correct"])
            for q, row in enumerate(zip(report.true_index, res.predicted, res.amplitude, res.correct)):
                w.writerow([q, *row[:3], int(row[3])])
        with open(out / f"pr_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["precision", "recall"])
            w.writerows(res.pr_curve)
        with open(out / f"recall_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "recall_percent"])
            w.writerows(sorted(res.recall_at_n.items()))
    for name, sim in (similarities or {}).items():
        write_similarity(out / f"similarity_{name}.f32", sim)
    return out / "report.json"


def read_report(path) -> EvalReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return EvalReport.from_dict(json.loads(path.read_text()))
