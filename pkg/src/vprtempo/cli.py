"""Command-line entry point: ``vprtempo <subcommand>``.

Exit codes: 0 success, 1 invalid input or state, 2 usage error, 3 config
error, 4 dataset error, 5 model file error, 6 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import imaging
from .bench import run_bench, write_bench_csv
from .config import RunConfig, load_config, parse_override
from .dataset import GroundTruth, load_dataset, synthesize_dataset
from .ensemble import ensemble_amplitudes, query_ensemble, train_ensemble
from .errors import IO_EXIT_CODE, ConfigError, DatasetError, InvalidInputError, VPRTempoError
from .metrics import EvalReport, evaluate, sad_baseline, write_report
from .modelfile import load_model, save_model

log = logging.getLogger("vprtempo")


def _emit(line: str = "") -> None:
    # single writer for result rows
    sys.stdout.write(line + "\n")


def _note(line: str) -> None:
    sys.stderr.write(line + "\n")


def _config(args, **flags) -> RunConfig:
    return load_config(getattr(args, "config", None), getattr(args, "set", None) or (), flags)


def _image_paths(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not files:
            raise DatasetError(f"no images in {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    return [path]


def _train_names(ds, cfg: RunConfig) -> list[str]:
    names = list(cfg.train_variants) or [v.name for v in ds.train_variants]
    for name in names:
        if ds.variant(name).role != "train":
            raise ConfigError(f"variant {name!r} has the query role and cannot be trained on")
    return names


def _open_dataset(root, cfg: RunConfig):
    ds = load_dataset(root, stride=cfg.stride or None, limit=cfg.limit or None)
    if cfg.query_exclude:
        ds = replace(ds, query_exclude=tuple(tuple(r) for r in cfg.query_exclude))
    return ds


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args) -> int:
    cfg = _config(args).preprocess()
    paths = [p for src in args.inputs for p in _image_paths(Path(src))]
    rows = np.stack([imaging.preprocess(imaging.load_image(p), cfg) for p in paths])
    out = Path(args.output)
    if args.format == "f32":
        out.write_bytes(rows.astype("<f4").tobytes())
    else:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["file"] + [f"a{i}" for i in range(rows.shape[1])])
            for p, row in zip(paths, rows):
                w.writerow([p.name] + [f"{v:.6g}" for v in row])
    _note(f"wrote {rows.shape[0]} x {rows.shape[1]} amplitudes to {out}")
    return 0


def cmd_synth(args) -> int:
    ds = synthesize_dataset(args.root, args.places, args.variants, args.noise, args.seed,
                            args.query_noise, args.size)
    _note(f"synthesized {ds.places} places x {len(ds.variants)} variants in {args.root}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _open_dataset(args.dataset, cfg)
    names = _train_names(ds, cfg)
    _emit("# effective config")
    for line in cfg.to_toml().splitlines():
        _emit("# " + line)

    start = time.perf_counter()
    spikes = ds.spikes(names, cfg.preprocess(), workers=cfg.workers)
    decode_s = time.perf_counter() - start
    start = time.perf_counter()
    ens = train_ensemble(spikes, cfg.hyperparams(), cfg.places_per_module, cfg.seed,
                         cfg.feature_size or None, cfg.workers, cfg.shuffle)
    train_s = time.perf_counter() - start
    meta = cfg.to_dict()
    meta["train_variants"] = names
    checksum = save_model(args.output, ens, meta)
    # wall-clock stays out of the model so equal seeds give equal checksums
    _timing_path(args.output).write_text(json.dumps({"train_minutes": train_s / 60, "decode_seconds": decode_s}))
    _emit(f"modules={ens.assignment.module_count} places={ds.places} variants={len(names)}")
    _emit(f"decode_seconds={decode_s:.3f} train_minutes={train_s / 60:.4f} "
          f"places_per_second={ds.places * len(names) * cfg.epochs / max(train_s, 1e-12):.1f}")
    _emit(f"model={args.output} sha256={checksum}")
    return 0


def _timing_path(model) -> Path:
    return Path(str(model) + ".timing.json")


def _model_config(header: dict, args) -> RunConfig:
    stored = dict(header.get("config", {}))
    values = {k: v for k, v in stored.items() if k in RunConfig.__dataclass_fields__}
    values.update(parse_override(item) for item in getattr(args, "set", None) or ())
    return RunConfig(**values)


def cmd_query(args) -> int:
    ens, header = load_model(args.model)
    cfg = _model_config(header, args).preprocess()
    paths = _image_paths(Path(args.path))
    _emit("image,place,amplitude,modules")
    start = time.perf_counter()
    for p in paths:
        res = query_ensemble(ens, imaging.preprocess(imaging.load_image(p), cfg))
        modules = ";".join(f"{k}:{local}:{amp:.6g}" for k, local, amp in res.per_module_argmax)
        _emit(f"{p},{res.global_place},{res.amplitude:.6g},{modules}")
    elapsed = time.perf_counter() - start
    if len(paths) > 1:
        _note(f"{len(paths)} queries, {len(paths) / max(elapsed, 1e-12):.1f} queries/s")
    return 0


def cmd_eval(args) -> int:
    ens, header = load_model(args.model)
    cfg = _model_config(header, args)
    ds = _open_dataset(args.dataset, cfg)
    if ds.places != ens.total_places:
        raise InvalidInputError(f"model has {ens.total_places} places but dataset has {ds.places}")
    query_name = args.query_variant or (cfg.query_variants[0] if cfg.query_variants else None)
    if query_name is None:
        if ds.query_variants:
            query_name = ds.query_variants[0].name
        else:
            query_name = ds.train_variants[0].name
            warnings.warn(f"no query-role variant; self-matching against {query_name!r}", RuntimeWarning)
    ref_name = header.get("config", {}).get("train_variants", [ds.train_variants[0].name])[0]
    places = ds.query_places()
    gt = GroundTruth(places, args.tolerance if args.tolerance is not None else cfg.tolerance)

    pre = cfg.preprocess()
    queries = ds.spikes([query_name], pre, places, workers=cfg.workers)[0]
    start = time.perf_counter()
    sim = np.stack([ensemble_amplitudes(ens, q) for q in queries])
    query_s = time.perf_counter() - start
    results = {"vprtempo": evaluate(sim, gt, cfg.recall_ns)}
    sims = {"vprtempo": sim}
    if args.baseline == "sad":
        full = args.sad_full or cfg.sad_full_pipeline
        refs = [imaging.sad_preprocess(img, pre, full) for img in ds.images(ref_name, workers=cfg.workers)]
        qs = [imaging.sad_preprocess(img, pre, full) for img in ds.images(query_name, places, cfg.workers)]
        sims["sad"] = sad_baseline(refs, qs)
        results["sad"] = evaluate(sims["sad"], gt, cfg.recall_ns)
    timing = {"query_hz": len(places) / max(query_s, 1e-12)}
    sidecar = _timing_path(args.model)
    if sidecar.exists():
        timing["train_minutes"] = json.loads(sidecar.read_text())["train_minutes"]
    report = EvalReport([int(i) for i in places], gt.tolerance, results,
                        timing, ds.places)
    path = write_report(report, args.report, sims if args.similarity else None)
    for name, res in results.items():
        recalls = " ".join(f"R@{n}={v:.1f}" for n, v in res.recall_at_n.items())
        _emit(f"{name}: P@100R={res.p_at_100r:.2f}% {recalls}")
    _emit(f"query={query_name} reference={ref_name} queries={len(places)} report={path}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = run_bench(sizes, cfg, args.variants, args.noise, args.reps, args.repeats)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            write_bench_csv(rows, fh)
    write_bench_csv(rows, sys.stdout)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vprtempo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        return p

    p = with_config(sub.add_parser("preprocess", help="images to amplitude vectors"))
    p.add_argument("inputs", nargs="+", help="image files or directories")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--format", choices=("f32", "csv"), default="f32")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("root")
    p.add_argument("--places", type=int, default=100)
    p.add_argument("--variants", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.0, help="train-variant pixel noise sigma")
    p.add_argument("--query-noise", type=float, default=None, help="add a query variant with this sigma")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = with_config(sub.add_parser("train", help="train an ensemble"))
    p.add_argument("dataset")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("query", help="match images against a model")
    p.add_argument("model")
    p.add_argument("path", help="image file or directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="evaluate a model on a dataset")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--report", required=True, help="output directory")
    p.add_argument("--baseline", choices=("none", "sad"), default="none")
    p.add_argument("--sad-full", action="store_true", help="patch-normalise SAD inputs too")
    p.add_argument("--query-variant")
    p.add_argument("--tolerance", type=int)
    p.add_argument("--similarity", action="store_true", help="also dump similarity matrices")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = with_config(sub.add_parser("bench", help="training and query scaling table"))
    p.add_argument("--sizes", default="100,200,400")
    p.add_argument("--variants", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=1, help="training runs per size, fastest kept")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VPRTempoError as exc:
        _note(f"error: {exc}")
        return exc.exit_code
    except OSError as exc:
        _note(f"error: {exc}")
        return IO_EXIT_CODE


if __name__ == "__main__":
    sys.exit(main())
