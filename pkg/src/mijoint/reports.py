"""CSV reports for a run: per-fold results, the summary table and statistics."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, DegenerateDataError, FormatError
from .experiments import METRICS, FoldResult, summarize
from .stats import bonferroni_pairwise, rm_anova, welch_ttest

log = logging.getLogger(__name__)

FOLDS_HEADER = ("task", "classifier", "fold", "accuracy", "sensitivity", "specificity", "tp", "fp", "tn", "fn")
STATS_HEADER = ("test", "label", "statistic", "df1", "df2", "epsilon", "p_raw", "p_corrected")


def _num(v) -> str:
    """Shortest round-tripping text for a float; empty for None."""
    if v is None:
        return ""
    return repr(float(v))


def _to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def sort_results(results: Iterable[FoldResult]) -> list[FoldResult]:
    return sorted(results, key=lambda r: (r.task, r.classifier, r.fold))


def folds_csv(results: Iterable[FoldResult]) -> str:
    rows = [
        (r.task, r.classifier, r.fold, _num(r.accuracy), _num(r.sensitivity), _num(r.specificity),
         r.tp, r.fp, r.tn, r.fn)
        for r in sort_results(results)
    ]
    return _to_csv(FOLDS_HEADER, rows)


def read_folds(path: str | Path) -> list[FoldResult]:
    """Parse a folds.csv back into results (metrics are recomputed from the counts)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != FOLDS_HEADER:
        raise FormatError(f"{path}: header must be {','.join(FOLDS_HEADER)}")
    out = []
    for lineno, row in enumerate(reader, 2):
        if len(row) != len(FOLDS_HEADER):
            raise FormatError(f"{path} line {lineno}: expected {len(FOLDS_HEADER)} fields")
        try:
            task, fold = int(row[0]), int(row[2])
            tp, fp, tn, fn = (int(v) for v in row[6:10])
        except ValueError as exc:
            raise FormatError(f"{path} line {lineno}: {exc}") from exc
        out.append(FoldResult(task, row[1], fold, tp, fp, tn, fn))
    return out


def summary_csv(results: Sequence[FoldResult]) -> str:
    """One row per task; mean and standard error per metric and classifier."""
    cells = summarize(results)
    tags = list(dict.fromkeys(c.classifier for c in cells))
    header = ["task"] + [f"{m}_{t}_{s}" for m in METRICS for t in tags for s in ("mean", "se")]
    rows = []
    for task in sorted({c.task for c in cells}):
        lookup = {(c.metric, c.classifier): c for c in cells if c.task == task}
        row = [task]
        for m in METRICS:
            for t in tags:
                c = lookup.get((m, t))
                row += [_num(c.mean), _num(c.se)] if c else ["", ""]
        rows.append(row)
    return _to_csv(header, rows)


def accuracy_matrix(results: Sequence[FoldResult], classifier: str) -> tuple[list[int], np.ndarray]:
    """Folds x tasks accuracy matrix for one classifier (folds act as subjects)."""
    own = [r for r in results if r.classifier == classifier]
    tasks = sorted({r.task for r in own})
    folds = sorted({r.fold for r in own})
    lookup = {(r.task, r.fold): r.accuracy for r in own}
    m = np.array([[lookup.get((t, f), math.nan) for t in tasks] for f in folds], dtype=np.float64)
    return tasks, m


def stats_rows(results: Sequence[FoldResult]) -> list[tuple]:
    """rm-ANOVA and Bonferroni pairs per classifier, Welch per task across classifiers."""
    rows: list[tuple] = []
    tags = sorted({r.classifier for r in results})
    for tag in tags:
        tasks, m = accuracy_matrix(results, tag)
        if len(tasks) < 2 or m.shape[0] < 2:
            continue
        try:
            a = rm_anova(m)
            rows.append(("rm_anova", tag, a.F, a.df1, a.df2, a.epsilon, a.p_uncorrected, a.p))
        except DegenerateDataError as exc:
            log.warning("rm-ANOVA for %s not computed: %s", tag, exc)
            rows.append(("rm_anova", tag, math.nan, len(tasks) - 1, (len(tasks) - 1) * (m.shape[0] - 1),
                         math.nan, math.nan, math.nan))
        for pr in bonferroni_pairwise(m):
            label = f"{tag}:task{tasks[pr.a]}-task{tasks[pr.b]}"
            rows.append(("bonferroni", label, pr.t, pr.df, None, None, pr.p_raw, pr.p_corrected))
    if len(tags) == 2:
        first, second = tags
        for task in sorted({r.task for r in results}):
            a = [r.accuracy for r in results if r.task == task and r.classifier == first]
            b = [r.accuracy for r in results if r.task == task and r.classifier == second]
            if len(a) < 2 or len(b) < 2:
                continue
            label = f"task{task}:{first}-{second}"
            try:
                w = welch_ttest(a, b)
                rows.append(("welch", label, w.t, w.df, None, None, w.p, w.p))
            except DegenerateDataError as exc:
                log.warning("Welch test for task %d not computed: %s", task, exc)
                rows.append(("welch", label, math.nan, None, None, None, math.nan, math.nan))
    return rows


def stats_csv(results: Sequence[FoldResult]) -> str:
    formatted = [
        (test, label, _num(stat), _num(df1), _num(df2), _num(eps), _num(p_raw), _num(p_cor))
        for test, label, stat, df1, df2, eps, p_raw, p_cor in stats_rows(results)
    ]
    return _to_csv(STATS_HEADER, formatted)


def write_atomic(files: Mapping[Path, str]) -> None:
    """Write every file to a temporary sibling first, then rename them all."""
    staged = []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def format_table(results: Sequence[FoldResult]) -> str:
    """Human-readable mean +- SE table, in percent."""
    cells = summarize(results)
    tags = list(dict.fromkeys(c.classifier for c in cells))
    lines = ["task  " + "  ".join(f"{m[:4]}:{t:<8}" for m in METRICS for t in tags)]
    for task in sorted({c.task for c in cells}):
        lookup = {(c.metric, c.classifier): c for c in cells if c.task == task}
        parts = []
        for m in METRICS:
            for t in tags:
                c = lookup.get((m, t))
                parts.append(f"{100 * c.mean:6.2f}±{100 * c.se:5.2f}" if c else " " * 12)
        lines.append(f"{task:>4}  " + "  ".join(parts))
    return "\n".join(lines)
