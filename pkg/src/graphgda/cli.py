"""Command-line interface.

Subcommands: ``csbm-gen``, ``fgw-dist``, ``generate-path``, ``adapt``,
``path-quality`` and ``replay``. Every command writes ``manifest.json`` next to
its outputs; ``replay`` re-runs a command from such a manifest.

Exit codes: 0 success, 2 usage, 3 I/O, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .csbm import SHIFT_KINDS, csbm_shift_pair, csbm_shift_preset, generate_csbm
from .errors import InvalidArgument, InvalidState, NumericalFailure, Unsupported
from .fgw import FgwConfig, fgw_distance_cg
from .gda import EvalLabels, run_direct, run_gradual, write_reports
from .geodesic import generate_path, load_path, path_quality, save_path
from .gnn import TrainConfig
from .graph import Graph, load_graph_dir, save_graph
from .lowrank import LowRankConfig

logger = logging.getLogger("graphgda")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

THREADS_ENV = "GRAPHGDA_THREADS"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dir_digests(directory) -> dict:
    d = Path(directory)
    return {str(p): file_digest(p) for p in sorted(d.rglob("*")) if p.is_file()}


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict
    seed: object
    version: str = __version__
    argv: list = dataclasses.field(default_factory=list)

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, default=_json_default)
        return path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _config_of(args) -> dict:
    skip = {"func", "config", "verbose", "argv"}
    return {k: v for k, v in vars(args).items() if k not in skip}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _load(directory) -> Graph:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"graph directory not found: {d}")
    return load_graph_dir(d)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, default=_json_default)


def _lowrank_cfg(args, n0: int, n1: int) -> LowRankConfig:
    rank = args.rank
    if rank is not None and rank > n0 * n1:
        logger.warning("rank %d exceeds n0*n1 = %d; clamped", rank, n0 * n1)
        rank = n0 * n1
    return LowRankConfig(rank=rank, step_size=args.step_size, max_iters=args.max_iters,
                         seed=args.seed)


def _train_cfg(args, seed) -> TrainConfig:
    return TrainConfig(hidden=args.hidden, layers=args.layers, learning_rate=args.lr,
                       epochs=args.epochs, seed=seed)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_csbm_gen(args) -> int:
    out = _out_dir(args)
    if args.level is not None:
        pair = csbm_shift_pair(args.kind, args.level, args.seed, args.n, args.d)
        specs = {"source": pair[0], "target": pair[1]}
    elif args.side == "both":
        specs = {"source": csbm_shift_preset(args.kind, "source", args.seed),
                 "target": csbm_shift_preset(args.kind, "target", args.seed + 1)}
    else:
        specs = {args.side: csbm_shift_preset(args.kind, args.side, args.seed)}
    written = {}
    for side, spec in specs.items():
        target = out if len(specs) == 1 else out / side
        save_graph(generate_csbm(spec), target)
        _write_json(target / "spec.json", spec.to_dict())
        written[side] = str(target)
    RunManifest("csbm-gen", _config_of(args), {}, args.seed, argv=args.argv).write(out)
    print(json.dumps(written))
    return EXIT_OK


def cmd_fgw_dist(args) -> int:
    g0, g1 = _load(args.source), _load(args.target)
    t0 = time.perf_counter()
    res = fgw_distance_cg(g0, g1, FgwConfig(alpha=args.alpha, restarts=args.restarts,
                                            seed=args.seed))
    result = {"distance": res.distance, "alpha": args.alpha, "converged": res.converged,
              "iterations": res.iterations, "wall_time": time.perf_counter() - t0}
    print(repr(res.distance))
    if args.out:
        out = _out_dir(args)
        _write_json(out / "distance.json", result)
        inputs = {**_dir_digests(args.source), **_dir_digests(args.target)}
        RunManifest("fgw-dist", _config_of(args), inputs, args.seed, argv=args.argv).write(out)
    return EXIT_OK


def cmd_generate_path(args) -> int:
    g0, g1 = _load(args.source), _load(args.target)
    cfg = _lowrank_cfg(args, g0.n, g1.n)
    path = generate_path(g0.without_labels(), g1.without_labels(), args.T, args.alpha, cfg,
                         measure_distance=not args.no_distance)
    out = _out_dir(args)
    save_path(path, out)
    inputs = {**_dir_digests(args.source), **_dir_digests(args.target)}
    config = _config_of(args)
    config["lowrank"] = dataclasses.asdict(cfg.resolve(g0.n, g1.n))
    RunManifest("generate-path", config, inputs, args.seed, argv=args.argv).write(out)
    print(json.dumps({"graphs": len(path), "rank": path.rank,
                      "source_target_distance": path.source_target_distance}))
    return EXIT_OK


def _seed_list(args):
    return list(range(args.seed, args.seed + args.seeds))


def cmd_adapt(args) -> int:
    out = _out_dir(args)
    reports, rows = [], []
    inputs = {}
    if args.preset is None and (args.source is None or args.target is None):
        raise UsageError("adapt needs --preset or both --source and --target")
    if args.preset is None:
        inputs = {**_dir_digests(args.source), **_dir_digests(args.target)}
    for seed in _seed_list(args):
        if args.preset is not None:
            src = generate_csbm(csbm_shift_preset(args.preset, "source", seed))
            tgt = generate_csbm(csbm_shift_preset(args.preset, "target", seed + 1))
        else:
            src, tgt = _load(args.source), _load(args.target)
        if src.labels is None:
            raise InvalidArgument("source graph has no labels.txt")
        ev = EvalLabels(tgt.labels) if tgt.labels is not None else None
        tcfg = _train_cfg(args, seed)
        if args.mode == "direct":
            rep, _ = run_direct(src, tgt.without_labels(), ev, tcfg)
        else:
            lcfg = dataclasses.replace(_lowrank_cfg(args, src.n, tgt.n), seed=seed)
            rep, _, _ = run_gradual(src, tgt.without_labels(), ev, args.T, lcfg, tcfg,
                                    args.alpha, measure_distance=args.measure_distance)
        rep.seeds["run"] = seed
        reports.append(rep.to_dict())
        rows.append({"kind": args.preset or "files", "level": None, "seed": seed,
                     "method": args.mode, "accuracy": rep.final_target_accuracy,
                     "wall_time": float(sum(rep.wall_times.values()))})
    write_reports(out, reports, rows)
    RunManifest("adapt", _config_of(args), inputs, _seed_list(args), argv=args.argv).write(out)
    accs = [r["accuracy"] for r in rows if r["accuracy"] is not None]
    if accs:
        print(json.dumps({"mode": args.mode, "mean": float(np.mean(accs)),
                          "std": float(np.std(accs)), "seeds": len(accs)}))
    else:
        print(json.dumps({"mode": args.mode, "note": "target has no labels; nothing scored"}))
    return EXIT_OK


def cmd_path_quality(args) -> int:
    inputs = {}
    if args.path is not None:
        path = load_path(args.path)
        inputs = _dir_digests(args.path)
    elif args.source is not None and args.target is not None:
        g0, g1 = _load(args.source), _load(args.target)
        path = generate_path(g0.without_labels(), g1.without_labels(), args.T, args.alpha,
                             _lowrank_cfg(args, g0.n, g1.n))
        inputs = {**_dir_digests(args.source), **_dir_digests(args.target)}
    else:
        raise UsageError("path-quality needs --path or both --source and --target")
    q = path_quality(path, args.alpha, samples=args.samples, seed=args.seed)
    report = q.to_dict()
    print(json.dumps({"pearson": q.pearson, "degenerate": q.degenerate}))
    if args.out:
        out = _out_dir(args)
        _write_json(out / "quality.json", report)
        RunManifest("path-quality", _config_of(args), inputs, args.seed,
                    argv=args.argv).write(out)
    return EXIT_OK


def cmd_replay(args) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    argv = manifest.get("argv")
    if not argv:
        raise UsageError(f"{args.manifest} does not record a command line")
    if manifest.get("version") != __version__:
        logger.warning("manifest written by version %s, running %s",
                       manifest.get("version"), __version__)
    return main(argv)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_lowrank(p):
    p.add_argument("--T", type=int, default=3, help="number of adaptation steps")
    p.add_argument("--rank", type=int, default=None, help="low-rank plan rank (default min(n0, n1))")
    p.add_argument("--step-size", type=float, default=10.0)
    p.add_argument("--max-iters", type=int, default=200)


def _add_train(p):
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--lr", type=float, default=5e-2)
    p.add_argument("--epochs", type=int, default=1000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphgda", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="key=value file with defaults; flags override it")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("csbm-gen", help="sample CSBM graphs from the shift presets")
    p.add_argument("--kind", required=True, choices=SHIFT_KINDS)
    p.add_argument("--side", default="source", choices=("source", "target", "both"))
    p.add_argument("--level", type=float, default=None,
                   help="write a source/target pair at this shift level instead of a preset")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_csbm_gen)

    p = sub.add_parser("fgw-dist", help="FGW distance between two graph directories")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--restarts", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fgw_dist)

    p = sub.add_parser("generate-path", help="write intermediate graphs H_0..H_T")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    _add_lowrank(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-distance", action="store_true",
                   help="skip measuring d_FGW(source, target)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_path)

    p = sub.add_parser("adapt", help="direct or gradual adaptation with accuracy reports")
    p.add_argument("--mode", required=True, choices=("direct", "gradual"))
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--preset", choices=SHIFT_KINDS, default=None,
                   help="generate the preset pair per seed instead of reading files")
    p.add_argument("--alpha", type=float, default=0.5)
    _add_lowrank(p)
    _add_train(p)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    p.add_argument("--measure-distance", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("path-quality", help="linearity of distances along a path")
    p.add_argument("--path", help="directory written by generate-path")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--alpha", type=float, default=0.5)
    _add_lowrank(p)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_path_quality)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _apply_config(parser, argv, config):
    """Install config values as subcommand defaults so explicit flags still win."""
    subparsers = parser._subparsers._group_actions[0].choices
    sub_name = next((a for a in argv if a in subparsers), None)
    if sub_name is None:
        raise UsageError("no subcommand given")
    known = {a.dest: a for a in subparsers[sub_name]._actions}
    defaults = {}
    for key, value in config.items():
        if key not in known or key in ("help", "func"):
            raise UsageError(f"unknown config key {key!r} for {sub_name}")
        action = known[key]
        if action.type is not None:
            try:
                value = action.type(value)
            except ValueError:
                raise UsageError(f"config {key}={value!r} is not a valid value")
        elif isinstance(action, argparse._StoreTrueAction):
            value = value.lower() in ("1", "true", "yes", "on")
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config {key}={value!r} not in {sorted(action.choices)}")
        defaults[key] = value
        action.required = False
    subparsers[sub_name].set_defaults(**defaults)


def _limit_threads():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    try:
        k = int(n)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {n!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=k)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    try:
        config_path = pre.parse_known_args(argv)[0].config
        if config_path:
            _apply_config(parser, argv, read_config_file(config_path))
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"graphgda: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"graphgda: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    args.argv = argv
    try:
        limiter = _limit_threads()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except (UsageError, InvalidArgument, Unsupported) as exc:
        print(f"graphgda: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"graphgda: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalFailure, InvalidState, FloatingPointError) as exc:
        print(f"graphgda: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
