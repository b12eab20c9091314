"""Command-line front end: synth, train, eval-filter, bench, score.

Every command writes a JSON manifest with the sha256 of each output file.
Wall-clock timings go to separate files that the digests leave out, so two
runs with the same seed produce identical digested outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import as_dict, build, check_unknown, read_config
from .errors import (
    ConfigError,
    EmptyDataset,
    FormatError,
    GenerationFailed,
    NefsacError,
    NotEnoughData,
    ShapeMismatch,
)
from .evaluate import KEEP_RATES, filter_precision, pooled_precision, run_estimate
from .labels import EXPERTS, SAMPLE_SIZE, build_dataset
from .nnfilter import TrainConfig, forward, load_weights, save_weights, train
from .ransac import PROFILES, UsacConfig
from .synth import SceneConfig, generate_scene, load_scene, save_scene, scene_seed

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


@dataclass
class DatasetOptions:
    samples_per_pair: int = 1000
    near_duplicate_fraction: float = 0.1

    def __post_init__(self):
        if self.samples_per_pair < 1:
            raise ConfigError("samples_per_pair", "must be >= 1")
        if not 0.0 <= self.near_duplicate_fraction <= 1.0:
            raise ConfigError("near_duplicate_fraction", "must lie in [0, 1]")


# ---------------------------------------------------------------------------
# output helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_csv(path, schema, columns, rows) -> None:
    """CSV with a ``# schema`` comment line followed by the column header."""
    buf = io.StringIO()
    buf.write(f"# {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c, "")) for c in columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path):
    """Parse a CSV written by :func:`write_csv`; returns ``(schema, columns, rows)``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# "):
        raise FormatError(f"{path}: missing schema line")
    reader = csv.reader(lines[1:])
    columns = next(reader)
    return lines[0][2:], columns, [dict(zip(columns, r)) for r in reader]


def write_manifest(path, command, config, seed, outputs, untracked=(), t0=None):
    root = Path(path).parent
    digests = {str(Path(p).relative_to(root)) if Path(p).is_relative_to(root) else str(p): _sha256(p) for p in outputs}
    manifest = dict(
        command=command,
        config=config,
        seed=seed,
        version=__version__,
        wall_time_s=None if t0 is None else time.perf_counter() - t0,
        outputs=digests,
        untracked=[str(p) for p in untracked],
    )
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return manifest


def _scene_files(scene_dir):
    files = sorted(Path(scene_dir).glob("scene_*.txt"))
    if not files:
        raise NotEnoughData(f"no scene files in {scene_dir}")
    return files


def _pool_map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# commands


def _synth_one(args):
    cfg, seed, index, path = args
    scene = generate_scene(cfg, np.random.default_rng(scene_seed(seed, index)))
    save_scene(scene, path)
    return str(path)


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    values = read_config(args.config)
    cfg, used = build(SceneConfig, values, seed=args.seed)
    check_unknown(values, used)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = [(cfg, cfg.seed, i, out / f"scene_{i:05d}.txt") for i in range(args.count)]
    files = _pool_map(_synth_one, items, args.jobs)
    write_manifest(out / "manifest.json", "synth", dict(as_dict(cfg), count=args.count), cfg.seed, files, t0=t0)
    return EXIT_OK


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    values = read_config(args.config)
    tcfg, u1 = build(TrainConfig, values, seed=args.seed)
    dopt, u2 = build(DatasetOptions, values)
    check_unknown(values, u1, u2)
    scenes = [load_scene(p) for p in _scene_files(args.scenes)]
    ds = build_dataset(scenes, dopt.samples_per_pair, args.expert, tcfg.seed, args.problem,
                       near_duplicate_fraction=dopt.near_duplicate_fraction)
    if len(ds) == 0:
        raise EmptyDataset("no training samples")
    net, history = train(ds, tcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(net, out)
    log = out.with_name(out.stem + "_log.csv")
    names = ["inlier", "pose", "expert"][: net.n_branches] + ["aggregate"]
    columns = ["epoch", "train_loss", "val_loss"] + [f"val_{n}" for n in names]
    rows = []
    for h in history:
        row = dict(epoch=h["epoch"], train_loss=h["train_loss"], val_loss=h["val_loss"])
        if h["val_terms"] is not None:
            row.update({f"val_{n}": float(v) for n, v in zip(names, h["val_terms"])})
        rows.append(row)
    write_csv(log, "nefsac-train-log v1", columns, rows)
    config = dict(as_dict(tcfg), **as_dict(dopt), problem=args.problem, expert=args.expert, scenes=str(args.scenes))
    write_manifest(Path(str(out) + ".manifest.json"), "train", config, tcfg.seed, [out, log], t0=t0)
    return EXIT_OK


def _eval_one(args):
    path, index, net_path, pool, rates, seed, problem = args
    net = load_weights(net_path, expected_m=SAMPLE_SIZE[problem]) if net_path else None
    rows = filter_precision([load_scene(path)], net, pool, rates, seed=0, problem=problem,
                            seeds=[np.random.SeedSequence([int(seed), index])])
    for r in rows:
        r["scene"] = index
    return rows


def cmd_eval_filter(args) -> int:
    t0 = time.perf_counter()
    values = read_config(args.config)
    check_unknown(values)
    rates = tuple(int(r) for r in args.keep_rates.split(","))
    if any(r < 1 for r in rates) or args.pool_size < 1:
        raise ConfigError("keep_rates", "keep rates and pool size must be >= 1")
    if 1 not in rates:
        rates = (1,) + rates
    files = _scene_files(args.scenes)
    # fail fast on an m mismatch before any scene work
    load_weights(args.weights, expected_m=SAMPLE_SIZE[args.problem])
    items = [(p, i, args.weights, args.pool_size, rates, args.seed, args.problem) for i, p in enumerate(files)]
    rows = [r for part in _pool_map(_eval_one, items, args.jobs) for r in part]
    for r in rates:
        sel = [x for x in rows if x["keep_rate"] == r]
        kept = sum(x["kept"] for x in sel)
        good = sum(x["good"] for x in sel)
        rows.append(dict(scene="all", keep_rate=r, kept=kept, good=good, precision=pooled_precision(sel, r)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, "nefsac-eval-filter v1", ["scene", "keep_rate", "kept", "good", "precision"], rows)
    config = dict(pool_size=args.pool_size, keep_rates=list(rates), problem=args.problem, weights=str(args.weights))
    write_manifest(Path(str(out) + ".manifest.json"), "eval-filter", config, args.seed, [out], t0=t0)
    return EXIT_OK


BENCH_FIELDS = ("ok", "rot_deg", "trans_deg", "max_err", "models_tested", "samples_scored", "inliers", "error")


def _bench_one(args):
    path, index, cfg_on, cfg_off, net_path, oracle, modes = args
    scene = load_scene(path)
    net = load_weights(net_path, expected_m=cfg_on.m) if net_path else None
    out = {}
    for mode in modes:
        cfg = cfg_on if mode == "on" else cfg_off
        out[mode] = run_estimate(scene, cfg, net if mode == "on" else None, oracle, index, mode)
    return out


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    values = read_config(args.config)
    base, used = build(UsacConfig, values, problem=args.problem, seed=args.seed)
    check_unknown(values, used)
    base = base.with_profile(args.profile)
    modes = ["off"]
    if args.filter == "on":
        if not args.weights:
            raise ConfigError("filter", "--filter on requires --weights")
        modes.append("on")
    cfg_off = UsacConfig(**{**as_dict(base), "filter": "off"})
    cfg_on = UsacConfig(**{**as_dict(base), "filter": "on"})
    files = _scene_files(args.scenes)
    if "on" in modes:
        load_weights(args.weights, expected_m=base.m)
    items = [(p, i, cfg_on, cfg_off, args.weights if "on" in modes else None, args.oracle, modes) for i, p in enumerate(files)]
    results = _pool_map(_bench_one, items, args.jobs)

    columns = ["scene"] + [f"{m}_{f}" for m in modes for f in BENCH_FIELDS]
    rows, timing = [], []
    for i, res in enumerate(results):
        row = dict(scene=i)
        trow = dict(scene=i)
        for m in modes:
            r = res[m]
            row.update({f"{m}_{f}": getattr(r, f) for f in BENCH_FIELDS})
            trow[f"{m}_wall_ms"] = r.wall_ms
        rows.append(row)
        timing.append(trow)
    for name, fn in (("median", np.median), ("mean", np.mean)):
        row = dict(scene=name)
        for m in modes:
            ok = [res[m] for res in results if res[m].ok]
            row[f"{m}_ok"] = len(ok)
            for f in ("rot_deg", "trans_deg", "max_err", "models_tested", "samples_scored", "inliers"):
                row[f"{m}_{f}"] = float(fn([getattr(r, f) for r in ok])) if ok else float("nan")
        rows.append(row)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, "nefsac-bench v1", columns, rows)
    tpath = Path(str(out) + ".timing.csv")
    write_csv(tpath, "nefsac-bench-timing v1", ["scene"] + [f"{m}_wall_ms" for m in modes], timing)
    config = dict(as_dict(base), profile=args.profile, oracle=args.oracle, weights=str(args.weights), modes=modes)
    write_manifest(Path(str(out) + ".manifest.json"), "bench", config, base.seed, [out], untracked=[tpath], t0=t0)
    if not any(res[m].ok for res in results for m in modes):
        return EXIT_DATA
    return EXIT_OK


def read_samples(path, m):
    """Rows of ``4m`` comma-separated numbers; ``#`` lines are skipped.

    Extra trailing columns (for instance labels in a dataset file) are ignored.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                vals = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise FormatError(f"{path}:{no}: {exc}") from exc
            if len(vals) < 4 * m:
                raise FormatError(f"{path}:{no}: expected {4 * m} coordinates, found {len(vals)}")
            rows.append(vals[: 4 * m])
    return np.array(rows, dtype=float).reshape(-1, m, 4)


def cmd_score(args) -> int:
    t0 = time.perf_counter()
    net = load_weights(args.weights)
    X = read_samples(args.samples, net.m)
    names = [f"b{i + 1}" for i in range(net.n_branches)]
    rows = []
    if len(X):
        outp = forward(net, X)
        for i in range(len(X)):
            row = dict(row=i, aggregate=float(outp.aggregate[i]))
            row.update({n: float(v) for n, v in zip(names, outp.branches[i])})
            rows.append(row)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, "nefsac-score v1", ["row"] + names + ["aggregate"], rows)
    write_manifest(Path(str(out) + ".manifest.json"), "score", dict(weights=str(args.weights), samples=str(args.samples)), None, [out], t0=t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nefsac", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--out", required=True)
        sp.add_argument("--jobs", type=int, default=1)
        if seed:
            sp.add_argument("--seed", type=int, default=None)

    s = sub.add_parser("synth", help="generate synthetic scenes")
    common(s)
    s.add_argument("--count", type=int, default=10)
    s.set_defaults(fn=cmd_synth)

    t = sub.add_parser("train", help="train a filter network")
    common(t)
    t.add_argument("--scenes", required=True)
    t.add_argument("--problem", choices=sorted(SAMPLE_SIZE), default="essential")
    t.add_argument("--expert", choices=EXPERTS, default="none")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval-filter", help="pool precision per keep rate")
    common(e)
    e.add_argument("--scenes", required=True)
    e.add_argument("--weights", required=True)
    e.add_argument("--problem", choices=sorted(SAMPLE_SIZE), default="essential")
    e.add_argument("--pool-size", type=int, default=2**16)
    e.add_argument("--keep-rates", default=",".join(map(str, KEEP_RATES)))
    e.set_defaults(fn=cmd_eval_filter)

    b = sub.add_parser("bench", help="paired RANSAC runs with and without the filter")
    common(b)
    b.add_argument("--scenes", required=True)
    b.add_argument("--weights")
    b.add_argument("--problem", choices=sorted(SAMPLE_SIZE), default="essential")
    b.add_argument("--filter", choices=("on", "off"), default=None)
    b.add_argument("--profile", choices=sorted(PROFILES), default="large")
    b.add_argument("--oracle", action="store_true", help="use ground-truth inlier flags as quality")
    b.set_defaults(fn=cmd_bench)

    c = sub.add_parser("score", help="score minimal samples from a file")
    common(c, seed=False)
    c.add_argument("--weights", required=True)
    c.add_argument("--samples", required=True)
    c.set_defaults(fn=cmd_score)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if getattr(args, "seed", 0) is None and args.command != "synth":
        args.seed = 0
    if args.command == "bench" and args.filter is None:
        args.filter = "on" if args.weights else "off"
    if getattr(args, "jobs", 1) < 1:
        print("error: jobs: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, EmptyDataset, NotEnoughData, ShapeMismatch, GenerationFailed, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NefsacError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - mapped to the internal-error exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
