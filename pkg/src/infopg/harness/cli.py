"""Command-line interface: train, eval, mi-audit, grad-check and sweep.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ..errors import ConfigError, ContractError, InfoPGError
from .audit import grad_check, mi_audit, write_bound_samples
from .config import load_config
from .run import evaluate, run_training

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="infopg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    t.add_argument("--epochs", type=int, default=None, help="override the configured epoch budget")
    t.add_argument("--timing", action="store_true", help="record wall-clock seconds per epoch")
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="evaluate a checkpoint in MAP mode")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int, default=None)

    m = sub.add_parser("mi-audit", help="check the MI bound and Bayesian-expansion properties")
    m.add_argument("--trials", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--csv", default="mi_audit_bounds.csv", help="where to write the sampled bounds")

    g = sub.add_parser("grad-check", help="finite-difference audit of k-level gradients")
    g.add_argument("--trials", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("sweep", help="train every config in a directory over a seed range")
    s.add_argument("--configs", required=True)
    s.add_argument("--seeds", required=True, help="inclusive range a..b")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--force", action="store_true")
    return p


def parse_seed_range(text: str) -> list[int]:
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", text)
    if not m:
        raise ConfigError(f"seed range must look like a..b, got {text!r}")
    a, b = int(m.group(1)), int(m.group(2))
    if b < a:
        raise ConfigError(f"empty seed range {text!r}")
    return list(range(a, b + 1))


def _train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.timing:
        cfg.timing = True

    def progress(m):
        if not args.quiet and (m.epoch % 50 == 0 or m.epoch == cfg.epochs - 1):
            print(f"epoch {m.epoch:5d}  team {m.team_reward:+.4f}  len {m.episode_length:7.2f}", flush=True)

    try:
        result = run_training(cfg, args.out, force=args.force, progress=progress)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {len(result.metrics)} epochs to {result.out_dir}")
    return EXIT_OK


def _eval(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if not Path(args.checkpoint).exists():
        print(f"error: no checkpoint at {args.checkpoint}", file=sys.stderr)
        return EXIT_USAGE
    summary = evaluate(args.checkpoint, cfg, args.episodes)
    print(json.dumps(summary.to_dict(), indent=2))
    return EXIT_OK


def _mi_audit(args) -> int:
    report = mi_audit(args.trials, args.seed)
    write_bound_samples(report, args.csv)
    print(f"sandwich      {'PASS' if report.sandwich_failures == 0 else 'FAIL'}  failures {report.sandwich_failures}/{report.trials}")
    print(f"average MI    {'PASS' if report.avg_failures == 0 else 'FAIL'}  failures {report.avg_failures}/{report.trials}")
    ok = report.oracle_max_error <= 1e-12
    print(f"chain oracle  {'PASS' if ok else 'FAIL'}  max error {report.oracle_max_error:.3e} over {report.oracle_trials}")
    print(f"bounds written to {args.csv}")
    return EXIT_OK if report.passed else EXIT_RUNTIME


def _grad_check(args) -> int:
    report = grad_check(args.trials, args.seed)
    status = "PASS" if report.passed else "FAIL"
    print(f"grad-check {status}: max relative error {report.max_rel_error:.3e} over {report.coordinates} coordinates in {report.trials} networks")
    if not report.passed:
        print(f"worst: {report.worst}")
    return EXIT_OK if report.passed else EXIT_RUNTIME


def _sweep_one(job):
    config_path, seed, out, force = job
    cfg = load_config(config_path).with_seed(seed)
    result = run_training(cfg, out, force=force)
    last = result.metrics[-1].team_reward if result.metrics else None
    return str(config_path), seed, last


def _sweep(args) -> int:
    seeds = parse_seed_range(args.seeds)
    configs = sorted(Path(args.configs).glob("*.cfg")) + sorted(Path(args.configs).glob("*.ini"))
    if not configs:
        print(f"error: no .cfg or .ini files in {args.configs}", file=sys.stderr)
        return EXIT_USAGE
    for c in configs:
        load_config(c)  # fail fast on bad configs
    jobs = [(str(c), s, str(Path(args.out) / c.stem / f"seed{s}"), args.force) for c in configs for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    for cfg, seed, last in results:
        print(f"{cfg} seed {seed}: final team reward {last}")
    return EXIT_OK


COMMANDS = {"train": _train, "eval": _eval, "mi-audit": _mi_audit, "grad-check": _grad_check, "sweep": _sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfoPGError, ContractError, OSError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
