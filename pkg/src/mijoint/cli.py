"""Command-line entry point: ``mijoint synth|run|report``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import RunConfig, derive_seed, dump_config, load_config, with_overrides
from .dsp import preprocess
from .errors import DataError, MijointError
from .experiments import FoldResult, TaskSpec, run_task
from .ingest import FS, generate_synthetic, load_dataset, reject_artifacts, write_dataset
from .reports import folds_csv, format_table, read_folds, stats_csv, summary_csv, write_atomic

log = logging.getLogger("mijoint")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = with_overrides(cfg, seed=args.seed, out=args.out, jobs=getattr(args, "jobs", None))
    cfg.validate()
    return cfg


def manifest_text(cfg: RunConfig) -> str:
    """The resolved config plus provenance comments; ``run --config`` replays it."""
    lines = [f"# mijoint {__version__} run manifest", "# derived seeds (informational):"]
    lines += [f"#   {purpose} = {seed}" for purpose, seed in cfg.seeds().items()]
    return "\n".join(lines) + "\n" + dump_config(cfg)


def load_trials(cfg: RunConfig):
    if cfg.dataset == "synth":
        trials = generate_synthetic(cfg.synth_params())
    else:
        try:
            trials, fs = load_dataset(cfg.dataset)
        except OSError as exc:
            raise DataError(f"cannot read dataset {cfg.dataset}: {exc}") from exc
        if fs != FS:
            raise DataError(f"dataset sampled at {fs} Hz, expected {FS}")
    if cfg.reject_artifacts:
        kept = reject_artifacts(trials)
        log.info("artifact rejection kept %d of %d trials", len(kept), len(trials))
        trials = kept
    if not trials:
        raise DataError("no trials left to analyse")
    return trials


def execute(cfg: RunConfig) -> list[FoldResult]:
    """Every (task, classifier) pair of the config, ten folds each."""
    pools = preprocess(load_trials(cfg), cfg.bandpass)
    results: list[FoldResult] = []
    for task in cfg.tasks:
        seed = derive_seed(cfg.seed, f"task{task}")
        for tag in cfg.classifiers:
            start = time.perf_counter()
            results += run_task(
                TaskSpec.from_id(task), pools, tag, seed, cfg.training,
                group_by_trial=cfg.group_by_trial, permute_labels=cfg.permute_labels, jobs=cfg.jobs,
            )
            log.info("task %d %s done in %.1f s", task, tag, time.perf_counter() - start)
    return results


def write_reports(results: Sequence[FoldResult], run_dir: Path, manifest: str | None = None) -> None:
    files = {
        run_dir / "folds.csv": folds_csv(results),
        run_dir / "summary.csv": summary_csv(results),
        run_dir / "stats.csv": stats_csv(results),
    }
    if manifest is not None:
        files[run_dir / "manifest"] = manifest
    write_atomic(files)


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    path = Path(args.output) if args.output else Path(cfg.out) / "synth.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    trials = generate_synthetic(cfg.synth_params())
    write_dataset(trials, path)
    print(f"wrote {len(trials)} trials to {path}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    results = execute(cfg)
    run_dir = Path(cfg.out) / cfg.resolved_run_id
    write_reports(results, run_dir, manifest_text(cfg))
    print(format_table(results))
    print(f"reports written to {run_dir}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    target = Path(args.path)
    folds = target / "folds.csv" if target.is_dir() else target
    results = read_folds(folds)
    if not results:
        raise DataError(f"{folds} holds no fold results")
    files = {folds.parent / "summary.csv": summary_csv(results), folds.parent / "stats.csv": stats_csv(results)}
    write_atomic(files)
    print(format_table(results))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mijoint", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mijoint {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=True):
        p.add_argument("--config", help="key = value run configuration")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="output directory")
        if jobs:
            p.add_argument("--jobs", type=int, help="parallel fold workers")

    p = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    common(p, jobs=False)
    p.add_argument("--output", help="file to write (default <out>/synth.csv)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="cross-validate the configured tasks and classifiers")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="recompute summary.csv and stats.csv from a folds.csv")
    p.add_argument("path", help="run directory or folds.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except MijointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
