"""Traversal ingestion: positional alignment of variants, subsampling, roles.

Layout on disk::

    <root>/<variant>/*.png|*.jpg     one image per frame, sorted by file name
    <root>/skip.txt                  optional; file names to drop (one per line)
    <root>/manifest.json             optional; variant roles, stride, limit

A skip-list line ``name.png`` drops that file from every variant, while
``variant/name.png`` drops it from one variant only.

Manifest keys (all optional)::

    {
      "variants": [{"name": "summer", "role": "train"},
                   {"name": "winter", "role": "query"}],
      "stride": 1,
      "limit": null,
      "query_exclude": [[0, 600]]
    }

Without a manifest every sub-directory is a train-role variant.
``query_exclude`` lists half-open place ranges that are trained on but left
out of evaluation.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import imaging
from .errors import DatasetError, InvalidInputError
from .imaging import PreprocessConfig

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
ROLES = ("train", "query")
MANIFEST = "manifest.json"
SKIP_LIST = "skip.txt"


@dataclass(frozen=True)
class TraversalSpec:
    name: str
    directory: Path
    role: str = "train"
    files: tuple[Path, ...] = ()

    def __post_init__(self):
        if self.role not in ROLES:
            raise DatasetError(f"variant {self.name!r}: role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class GroundTruth:
    """``true_index[q]`` is the reference place of query ``q``."""

    true_index: np.ndarray
    tolerance: int = 0

    def correct(self, query: int, predicted) -> bool:
        return abs(int(predicted) - int(self.true_index[query])) <= self.tolerance

    def correct_mask(self, predicted) -> np.ndarray:
        return np.abs(np.asarray(predicted) - self.true_index) <= self.tolerance

    def __len__(self) -> int:
        return len(self.true_index)


def ground_truth_identity(n: int, tolerance: int = 0) -> GroundTruth:
    if n < 1:
        raise InvalidInputError("ground truth needs n >= 1")
    if tolerance < 0:
        raise InvalidInputError("tolerance must be >= 0")
    return GroundTruth(np.arange(n), tolerance)


def _read_skip_list(root: Path) -> set[str]:
    path = root / SKIP_LIST
    if not path.exists():
        return set()
    lines = (line.strip() for line in path.read_text().splitlines())
    return {line for line in lines if line and not line.startswith("#")}


def scan_traversal(directory, name: Optional[str] = None, role: str = "train",
                   skip: Iterable[str] = ()) -> TraversalSpec:
    """List the images of one traversal in lexicographic order, minus skip-listed names."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"traversal directory {directory} does not exist")
    name = name or directory.name
    skip = set(skip)
    files = sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        and p.name not in skip and f"{name}/{p.name}" not in skip
    )
    if not files:
        raise DatasetError(f"traversal directory {directory} contains no images")
    return TraversalSpec(name, directory, role, tuple(files))


def _check_readable(path: Path) -> None:
    try:
        with Image.open(path) as im:
            im.verify()
    except Exception as exc:  # PIL raises a zoo of types for corrupt files
        raise DatasetError(f"unreadable image {path}: {exc}") from exc


def load_traversal(spec: TraversalSpec, stride: int = 1, limit: Optional[int] = None,
                   verify: bool = True) -> list[Path]:
    """Every ``stride``-th file of the traversal, at most ``limit`` of them."""
    if stride < 1:
        raise InvalidInputError(f"stride must be >= 1, got {stride}")
    if not spec.files:
        raise DatasetError(f"traversal {spec.name!r} has no images")
    files = list(spec.files[::stride])
    if limit is not None:
        files = files[:limit]
    if verify:
        for path in files:
            _check_readable(path)
    return files


@dataclass(frozen=True)
class TraversalDataset:
    """``variants[k].files[i]`` is place ``i`` as seen by variant ``k``."""

    places: int
    variants: tuple[TraversalSpec, ...]
    stride: int = 1
    query_exclude: tuple[tuple[int, int], ...] = ()
    root: Optional[Path] = None

    def variant(self, name: str) -> TraversalSpec:
        for v in self.variants:
            if v.name == name:
                return v
        raise DatasetError(f"no variant named {name!r}; have {[v.name for v in self.variants]}")

    @property
    def train_variants(self) -> list[TraversalSpec]:
        return [v for v in self.variants if v.role == "train"]

    @property
    def query_variants(self) -> list[TraversalSpec]:
        return [v for v in self.variants if v.role == "query"]

    def query_places(self) -> np.ndarray:
        """Place indices that take part in evaluation (exclusion ranges removed)."""
        keep = np.ones(self.places, dtype=bool)
        for start, stop in self.query_exclude:
            keep[max(0, start):max(0, min(stop, self.places))] = False
        return np.flatnonzero(keep)

    def images(self, name: str, places: Optional[Sequence[int]] = None, workers: int = 1) -> list[np.ndarray]:
        files = self.variant(name).files
        chosen = [files[i] for i in (range(self.places) if places is None else places)]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(imaging.load_image, chosen))
        return [imaging.load_image(p) for p in chosen]

    def spikes(self, names: Sequence[str], cfg: PreprocessConfig = PreprocessConfig(),
               places: Optional[Sequence[int]] = None, workers: int = 1) -> np.ndarray:
        """Preprocessed amplitudes, shape ``(len(names), places, W*H)``."""
        def encode(path: Path) -> np.ndarray:
            return imaging.preprocess(imaging.load_image(path), cfg)

        idx = list(range(self.places) if places is None else places)
        out = np.empty((len(names), len(idx), cfg.size))
        for k, name in enumerate(names):
            files = self.variant(name).files
            chosen = [files[i] for i in idx]
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    rows = list(pool.map(encode, chosen))
            else:
                rows = [encode(p) for p in chosen]
            out[k] = np.stack(rows) if rows else out[k]
        return out


def align_variants(specs: Sequence[TraversalSpec], stride: int = 1, limit: Optional[int] = None,
                   query_exclude: Sequence[Sequence[int]] = (), root: Optional[Path] = None,
                   verify: bool = True) -> TraversalDataset:
    """Subsample every variant and truncate all of them to the shortest one."""
    if not any(s.role == "train" for s in specs):
        raise DatasetError("dataset needs at least one train-role variant")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise DatasetError(f"duplicate variant names in {names}")
    loaded = [load_traversal(s, stride, limit, verify=False) for s in specs]
    n = min(len(files) for files in loaded)
    if n == 0:
        raise DatasetError("no aligned places")
    variants = []
    for spec, files in zip(specs, loaded):
        files = files[:n]
        if verify:
            for path in files:
                _check_readable(path)
        variants.append(TraversalSpec(spec.name, spec.directory, spec.role, tuple(files)))
    exclude = tuple((int(a), int(b)) for a, b in query_exclude)
    return TraversalDataset(n, tuple(variants), stride, exclude, root)


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    if not path.exists():
        return {}
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid manifest {path}: {exc}") from exc
    unknown = set(manifest) - {"variants", "stride", "limit", "query_exclude"}
    if unknown:
        raise DatasetError(f"unknown manifest keys {sorted(unknown)} in {path}")
    return manifest


def load_dataset(root, stride: Optional[int] = None, limit: Optional[int] = None,
                 verify: bool = True) -> TraversalDataset:
    """Open a dataset directory; explicit ``stride``/``limit`` override the manifest."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    manifest = read_manifest(root)
    skip = _read_skip_list(root)
    entries = manifest.get("variants")
    if entries is None:
        entries = [{"name": d.name, "role": "train"} for d in sorted(root.iterdir()) if d.is_dir()]
    if not entries:
        raise DatasetError(f"dataset root {root} has no variant directories")
    specs = [scan_traversal(root / e["name"], e["name"], e.get("role", "train"), skip) for e in entries]
    stride = stride if stride is not None else int(manifest.get("stride", 1))
    limit = limit if limit is not None else manifest.get("limit")
    return align_variants(specs, stride, limit, manifest.get("query_exclude", ()), root, verify)


def synthesize_images(n: int, variants: int, noise_sigma: float, seed: int = 0, size: int = 64,
                      smoothness: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Base places plus noisy variants, as 8-bit arrays ``(n, size, size)`` and ``(variants, n, size, size)``.

    Each base image is Gaussian-smoothed white noise stretched to [0, 255];
    every variant adds its own i.i.d. pixel noise of std ``noise_sigma``.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    seq = np.random.SeedSequence(seed)
    base_rng, *variant_seqs = seq.spawn(1 + variants)
    base_rng = np.random.default_rng(base_rng)
    base = np.empty((n, size, size))
    for i in range(n):
        field_ = gaussian_filter(base_rng.normal(size=(size, size)), smoothness, mode="wrap")
        lo, hi = field_.min(), field_.max()
        base[i] = (field_ - lo) / (hi - lo) * 255.0
    base = imaging.round_half_up(base)
    out = np.empty((variants, n, size, size), dtype=np.uint8)
    for k, vseq in enumerate(variant_seqs):
        rng = np.random.default_rng(vseq)
        noise = rng.normal(0.0, noise_sigma, base.shape) if noise_sigma > 0 else 0.0
        out[k] = np.clip(imaging.round_half_up(base + noise), 0, 255)
    return base.astype(np.uint8), out


def synthesize_dataset(root, n: int, variants: int = 2, noise_sigma: float = 0.0, seed: int = 0,
                       query_noise_sigma: Optional[float] = None, size: int = 64) -> TraversalDataset:
    """Write a synthetic traversal set in the standard layout and open it.

    Train-role variants are ``v0 .. v{variants-1}``. With ``query_noise_sigma``
    an extra query-role variant ``query`` is written, drawn from the same base
    places with its own noise.
    """
    root = Path(root)
    total = variants + (1 if query_noise_sigma is not None else 0)
    _, train = synthesize_images(n, variants, noise_sigma, seed, size)
    entries = [{"name": f"v{k}", "role": "train"} for k in range(variants)]
    stacks = list(train)
    if query_noise_sigma is not None:
        # spawn index after the train variants so adding a query keeps them unchanged
        _, query = synthesize_images(n, variants + 1, query_noise_sigma, seed, size)
        stacks.append(query[-1])
        entries.append({"name": "query", "role": "query"})
    for entry, images in zip(entries, stacks):
        vdir = root / entry["name"]
        vdir.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(images):
            imaging.save_image(vdir / f"{i:05d}.png", img)
    (root / MANIFEST).write_text(json.dumps({"variants": entries, "stride": 1, "limit": None}, indent=2))
    log.info("wrote %d places x %d variants to %s", n, total, root)
    return load_dataset(root)
