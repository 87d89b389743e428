"""Task assembly, stratified ten-fold cross-validation and fold metrics."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import nnet
from .config import TrainingParams, derive_seed
from .csp import csp_feature_matrix, fit_csp
from .dsp import EpochClass, Epoch
from .errors import ConfigError
from .svm import svm_predict, train_svm

log = logging.getLogger(__name__)

N_FOLDS = 10
MIN_PER_CLASS = 20


@dataclass(frozen=True)
class TaskSpec:
    """Positive-class recipe; the negative class is always background EEG.

    ``ratio`` is (transitional, pure) in integer units.
    """

    task_id: int
    ratio: tuple[int, int]

    @classmethod
    def from_id(cls, task_id: int) -> "TaskSpec":
        try:
            return cls(task_id, TASK_RATIOS[task_id])
        except KeyError:
            raise ConfigError(f"unknown task {task_id}; valid tasks are 1-5") from None


TASK_RATIOS = {1: (0, 1), 2: (1, 0), 3: (1, 1), 4: (1, 4), 5: (4, 1)}


@dataclass(frozen=True, eq=False)
class ExampleSet:
    x: np.ndarray  # (n, 500, 3)
    y: np.ndarray  # 1 = imagery, 0 = background
    source: np.ndarray  # EpochClass value of each example
    groups: np.ndarray  # integer trial identifier

    def __len__(self) -> int:
        return len(self.y)


def _trial_ids(pools: Mapping[EpochClass, Sequence[Epoch]]) -> dict[tuple, int]:
    keys = sorted({e.trial_key for pool in pools.values() for e in pool})
    return {k: i for i, k in enumerate(keys)}


def assemble_task(pools: Mapping[EpochClass, Sequence[Epoch]], spec: TaskSpec, seed: int) -> ExampleSet:
    """Balanced binary set for one task.

    Transitional and pure counts follow the task ratio with the scarcer pool
    binding; background epochs are subsampled to the positive count, and if
    background is the scarcest pool the positives shrink to match.
    """
    rng = np.random.default_rng(seed)
    trans = list(pools.get(EpochClass.TRANSITIONAL, ()))
    pure = list(pools.get(EpochClass.PURE, ()))
    back = list(pools.get(EpochClass.BACKGROUND, ()))
    r_t, r_p = spec.ratio
    if not back or (r_t and not trans) or (r_p and not pure):
        raise ConfigError(f"task {spec.task_id}: a required epoch pool is empty")
    units = min(
        len(trans) // r_t if r_t else math.inf,
        len(pure) // r_p if r_p else math.inf,
        len(back) // (r_t + r_p),
    )
    if units == 0:
        raise ConfigError(f"task {spec.task_id}: pools too small for ratio {r_t}:{r_p}")
    n_t, n_p = r_t * units, r_p * units

    def pick(pool, n):
        return [pool[i] for i in np.sort(rng.choice(len(pool), size=n, replace=False))]

    chosen = pick(trans, n_t) + pick(pure, n_p)
    chosen += pick(back, n_t + n_p)
    ids = _trial_ids(pools)
    return ExampleSet(
        x=np.stack([e.samples for e in chosen]).astype(np.float32),
        y=np.array([0 if e.label == EpochClass.BACKGROUND else 1 for e in chosen], dtype=np.int64),
        source=np.array([e.label.value for e in chosen]),
        groups=np.array([ids[e.trial_key] for e in chosen], dtype=np.int64),
    )


@dataclass(frozen=True, eq=False)
class Fold:
    index: int
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def _stratified_bins(y: np.ndarray, groups: np.ndarray, n_bins: int, rng: np.random.Generator) -> np.ndarray:
    """Bin index per example; whole groups move together.

    Groups are bucketed by class composition, shuffled, and dealt round-robin
    with one pointer running across buckets, so every bin gets the same
    composition mix to within one group per bucket.
    """
    uniq, inverse = np.unique(groups, return_inverse=True)
    n_pos = np.bincount(inverse, weights=y == 1, minlength=len(uniq)).astype(int)
    n_neg = np.bincount(inverse, weights=y != 1, minlength=len(uniq)).astype(int)
    group_bin = np.empty(len(uniq), dtype=np.int64)
    pointer = 0
    for sig in sorted(set(zip(n_pos.tolist(), n_neg.tolist()))):
        members = np.flatnonzero((n_pos == sig[0]) & (n_neg == sig[1]))
        for g in rng.permutation(members):
            group_bin[g] = pointer % n_bins
            pointer += 1
    return group_bin[inverse]


def make_folds(examples: ExampleSet, seed: int, group_by_trial: bool = True,
               n_folds: int = N_FOLDS) -> list[Fold]:
    """Class-stratified 81/9/10 train/validation/test folds."""
    y = examples.y
    for cls in (0, 1):
        if np.sum(y == cls) < 2 * n_folds:
            raise ConfigError(f"class {cls} has {np.sum(y == cls)} examples; need {2 * n_folds}")
    groups = examples.groups if group_by_trial else np.arange(len(y))
    rng = np.random.default_rng(seed)
    test_bin = _stratified_bins(y, groups, n_folds, rng)
    folds = []
    for f in range(n_folds):
        rest = np.flatnonzero(test_bin != f)
        val_bin = _stratified_bins(y[rest], groups[rest], n_folds, rng)
        folds.append(
            Fold(
                index=f,
                train=rest[val_bin != 0],
                validation=rest[val_bin == 0],
                test=np.flatnonzero(test_bin == f),
            )
        )
    return folds


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class FoldResult:
    task: int
    classifier: str
    fold: int
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def accuracy(self) -> float:
        n = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.tn) / n if n else math.nan

    @property
    def sensitivity(self) -> float:
        n = self.tp + self.fn
        return self.tp / n if n else math.nan

    @property
    def specificity(self) -> float:
        n = self.tn + self.fp
        return self.tn / n if n else math.nan

    def metric(self, name: str) -> float:
        return getattr(self, name)


METRICS = ("accuracy", "sensitivity", "specificity")


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) with imagery = 1 as the positive class."""
    t = np.asarray(y_true) == 1
    p = np.asarray(y_pred) == 1
    return int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)), int(np.sum(t & ~p))


# ------------------------------------------------------------ classifiers

# (x_train, y_train, x_val, y_val, x_test, seed, params) -> 0/1 predictions
Classifier = Callable[..., np.ndarray]


def csp_svm(x_tr, y_tr, x_va, y_va, x_te, seed, params: TrainingParams) -> np.ndarray:
    """Validation data joins the training set; the baseline has no early stopping."""
    x = np.concatenate([x_tr, x_va]).astype(np.float64)
    y = np.concatenate([y_tr, y_va])
    model = fit_csp(x[y == 1], x[y == 0])
    svm = train_svm(csp_feature_matrix(model, x), np.where(y == 1, 1, -1), C=params.svm_c)
    labels, _ = svm_predict(svm, csp_feature_matrix(model, np.asarray(x_te, dtype=np.float64)))
    return (labels == 1).astype(np.int64)


def cnn_fc(x_tr, y_tr, x_va, y_va, x_te, seed, params: TrainingParams) -> np.ndarray:
    state = nnet.build_network(derive_seed(seed, "init"))
    state, history = nnet.train_network(
        state, (x_tr, y_tr), (x_va, y_va),
        max_epochs=params.max_epochs, batch_size=params.batch_size,
        patience=params.patience, seed=derive_seed(seed, "train"),
    )
    log.debug("cnn fold trained for %d epochs", len(history))
    return nnet.predict(state, x_te)


CLASSIFIERS: dict[str, Classifier] = {"CNN-FC": cnn_fc, "CSP-SVM": csp_svm}


def _run_fold(examples: ExampleSet, fold: Fold, task_id: int, tag: str, clf: Classifier,
              seed: int, params: TrainingParams) -> FoldResult:
    tr, va, te = fold.train, fold.validation, fold.test
    if set(tr.tolist()) & set(te.tolist()) or set(va.tolist()) & set(te.tolist()):
        raise AssertionError(f"fold {fold.index}: test indices leak into training")
    if len(np.unique(examples.y[tr])) < 2:
        raise ConfigError(f"fold {fold.index}: training split holds a single class")
    x, y = examples.x, examples.y
    pred = clf(x[tr], y[tr], x[va], y[va], x[te], derive_seed(seed, f"fold{fold.index}"), params)
    return FoldResult(task_id, tag, fold.index, *confusion(y[te], pred))


def run_task(spec: TaskSpec, pools: Mapping[EpochClass, Sequence[Epoch]], classifier: str | Classifier,
             seed: int, params: TrainingParams = TrainingParams(), group_by_trial: bool = True,
             permute_labels: bool = False, jobs: int = 1, tag: str | None = None) -> list[FoldResult]:
    """Ten-fold evaluation of one classifier on one task.

    ``classifier`` is a registered tag or a callable with the signature of
    :func:`csp_svm`. With ``permute_labels`` the assembled labels are shuffled
    before folding (a chance-level control).
    """
    if isinstance(classifier, str):
        if classifier not in CLASSIFIERS:
            raise ConfigError(f"unknown classifier {classifier!r}")
        tag, clf = classifier, CLASSIFIERS[classifier]
    else:
        tag, clf = tag or getattr(classifier, "__name__", "custom"), classifier
    examples = assemble_task(pools, spec, derive_seed(seed, "assemble"))
    if permute_labels:
        perm = np.random.default_rng(derive_seed(seed, "permute")).permutation(len(examples))
        examples = ExampleSet(examples.x, examples.y[perm], examples.source, examples.groups)
    folds = make_folds(examples, derive_seed(seed, "folds"), group_by_trial)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_fold, examples, f, spec.task_id, tag, clf, seed, params) for f in folds
            ]
            results = [fut.result() for fut in futures]
    else:
        results = [_run_fold(examples, f, spec.task_id, tag, clf, seed, params) for f in folds]
    return sorted(results, key=lambda r: r.fold)


# ---------------------------------------------------------------- summary


@dataclass(frozen=True)
class SummaryCell:
    task: int
    classifier: str
    metric: str
    mean: float
    se: float
    n: int


def mean_se(values: Sequence[float]) -> tuple[float, float, int]:
    """Mean and standard error, skipping undefined (NaN) folds."""
    v = np.asarray(values, dtype=np.float64)
    ok = v[~np.isnan(v)]
    if len(ok) < len(v):
        warnings.warn(f"{len(v) - len(ok)} undefined fold value(s) excluded from the mean")
    if len(ok) == 0:
        return math.nan, math.nan, 0
    se = ok.std(ddof=1) / math.sqrt(len(ok)) if len(ok) > 1 else math.nan
    return float(ok.mean()), float(se), len(ok)


def summarize(results: Sequence[FoldResult]) -> list[SummaryCell]:
    """Mean +- standard error per task, classifier and metric, in table order."""
    cells = []
    tasks = sorted({r.task for r in results})
    order = {tag: i for i, tag in enumerate(CLASSIFIERS)}
    tags = sorted({r.classifier for r in results}, key=lambda t: (order.get(t, len(order)), t))
    for task in tasks:
        for metric in METRICS:
            for tag in tags:
                cell = [r.metric(metric) for r in results if r.task == task and r.classifier == tag]
                if not cell:
                    continue
                mean, se, n = mean_se(cell)
                cells.append(SummaryCell(task, tag, metric, mean, se, n))
    return cells
