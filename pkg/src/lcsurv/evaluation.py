"""Discrimination scoring and model validation.

The risk score of a subject is the predicted event probability by the
horizon, 1 - S(t* | x, z). Discrimination is measured by the
cumulative-case / dynamic-control AUC: cases have an observed event by the
horizon, controls are still under observation past it, and cases are
weighted by the inverse of the Kaplan-Meier estimate of the censoring
survival just before their event time. On uncensored data this reduces
exactly to the tie-aware concordant-pair fraction. Tied scores count 1/2.

Cross-validation freezes the parameters fitted on the training folds and
scores the held-out fold; bootstrap validation refits on each resample and
scores the resample itself (apparent AUC). Case-starved partitions (for
example leave-one-out) fall back to pooling the held-out scores of all
folds into a single AUC, flagged on the summary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .classmodel import class_prob_matrix
from .coxph import CoxFit
from .dataset import Dataset, FoldAssignment, SurvivalRecord, bootstrap_sample, kfold_split
from .errors import InsufficientReplicates, LcsurvError, NoCases, NoControls
from .mixture import LatentClassFit, fit_latent_class
from .rng import derive_seed


@dataclass(frozen=True)
class RocResult:
    """ROC staircase and area at one evaluation horizon."""

    horizon: float
    points: tuple[tuple[float, float], ...]
    auc: float


@dataclass(frozen=True)
class ReplicateRow:
    replicate: int
    seed: int
    auc: float
    n_cases: int
    n_controls: int


@dataclass(frozen=True)
class ValidationSummary:
    method: str
    replicates: int
    auc_values: tuple[float, ...]
    mean: float
    ci_low: float
    ci_high: float
    pooled: bool = False
    rows: tuple[ReplicateRow, ...] = ()
    failures: tuple[tuple[int, str], ...] = ()


# -- scoring -------------------------------------------------------------------


def risk_scores(fit, ds: Dataset, horizon: float) -> np.ndarray:
    """Predicted event probability by ``horizon`` for every record."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if isinstance(fit, LatentClassFit):
        probs = class_prob_matrix(fit.membership, ds.z)
        surv = np.empty_like(probs)
        for i, model in enumerate(fit.class_models):
            relative_risk = np.exp(ds.x @ model.coef)
            surv[:, i] = np.exp(-model.baseline.cumulative(horizon) * relative_risk)
        return 1.0 - (probs * surv).sum(axis=1)
    if isinstance(fit, CoxFit):
        relative_risk = np.exp(ds.x @ fit.coef)
        return 1.0 - np.exp(-fit.baseline.cumulative(horizon) * relative_risk)
    raise TypeError(f"cannot score a {type(fit).__name__}")


def risk_score(fit, rec: SurvivalRecord, horizon: float) -> float:
    """Risk score for a single record (mixture or one-class fit)."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if isinstance(fit, LatentClassFit):
        from .mixture import predict_mixture_survival

        return 1.0 - predict_mixture_survival(fit, np.asarray(rec.x), np.asarray(rec.z), horizon)
    if isinstance(fit, CoxFit):
        from .coxph import predict_survival

        return 1.0 - predict_survival(fit, np.asarray(rec.x), horizon)
    raise TypeError(f"cannot score a {type(fit).__name__}")


# -- time-dependent AUC ----------------------------------------------------------


def _censoring_survival_before(times: np.ndarray, events: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Kaplan-Meier censoring survival G(t-) evaluated at each query time."""
    order = np.argsort(times, kind="stable")
    t = times[order]
    censored = 1 - events[order]
    uniq, starts = np.unique(t, return_index=True)
    at_risk = len(t) - starts
    d_cens = np.add.reduceat(censored, starts)
    survival = np.cumprod(1.0 - d_cens / at_risk)
    padded = np.concatenate([[1.0], survival])
    return padded[np.searchsorted(uniq, query, side="left")]


def time_dependent_auc(
    scores: np.ndarray, times: np.ndarray, events: np.ndarray, horizon: float
) -> RocResult:
    """IPCW cumulative/dynamic AUC at ``horizon``.

    Cases: event observed at or before the horizon. Controls: follow-up
    extends past the horizon. Case weights are 1/G(t-) from the
    Kaplan-Meier censoring estimate; the common control weight cancels.
    Returns the ROC staircase (trapezoidal area equals ``auc``).
    """
    scores = np.asarray(scores, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=int)
    if not (scores.shape == times.shape == events.shape):
        raise ValueError("scores, times and events must have equal length")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    case = (times <= horizon) & (events == 1)
    control = times > horizon
    if not np.any(case):
        raise NoCases(f"no events observed by horizon {horizon!r}")
    if not np.any(control):
        raise NoControls(f"no subjects under observation past horizon {horizon!r}")

    case_scores = scores[case]
    weights = 1.0 / _censoring_survival_before(times, events, times[case])
    control_scores = np.sort(scores[control])
    n_controls = control_scores.size

    less = np.searchsorted(control_scores, case_scores, side="left")
    less_eq = np.searchsorted(control_scores, case_scores, side="right")
    concordant = weights * (less + 0.5 * (less_eq - less))
    auc = float(concordant.sum() / (weights.sum() * n_controls))

    thresholds = np.unique(np.concatenate([case_scores, control_scores]))[::-1]
    case_sorted = np.sort(case_scores)
    case_cumw = np.concatenate([[0.0], np.cumsum(weights[np.argsort(case_scores, kind="stable")])])
    total_w = case_cumw[-1]
    tpr = (total_w - case_cumw[np.searchsorted(case_sorted, thresholds, side="left")]) / total_w
    fpr = (n_controls - np.searchsorted(control_scores, thresholds, side="left")) / n_controls
    points = [(0.0, 0.0), *zip(fpr.tolist(), tpr.tolist())]
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return RocResult(horizon=float(horizon), points=tuple(points), auc=auc)


# -- validation ------------------------------------------------------------------


def _fit_quietly(ds: Dataset, g: int, n_starts: int, seed: int, threads: int):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fit_latent_class(ds, g, n_starts=n_starts, base_seed=seed, threads=threads)


def _summarize(method: str, rows, failures, pooled=False) -> ValidationSummary:
    values = np.array([r.auc for r in rows])
    mean = float(values.mean())
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    half = 1.96 * sd / np.sqrt(values.size)
    return ValidationSummary(
        method=method,
        replicates=len(rows),
        auc_values=tuple(float(v) for v in values),
        mean=mean,
        ci_low=mean - half,
        ci_high=mean + half,
        pooled=pooled,
        rows=tuple(rows),
        failures=tuple(failures),
    )


def cross_validate(
    ds: Dataset,
    k: int,
    g: int,
    horizon: float | None = None,
    n_starts: int = 30,
    base_seed: int = 0,
    folds: FoldAssignment | None = None,
    threads: int = 1,
) -> ValidationSummary:
    """k-fold cross-validated AUC.

    Fits on the training folds, freezes all parameters, scores the held-out
    fold. Degenerate folds (no cases or controls at the horizon, or a
    failed training fit) are recorded; when fewer than half the folds
    produce a per-fold AUC the held-out scores of all scorable folds are
    pooled into one AUC instead (``pooled=True``). The 95% CI is
    mean +/- 1.96*SD/sqrt(R) over the R successful replicates.
    """
    if folds is None:
        folds = kfold_split(ds, k, derive_seed(base_seed, "cv-folds", 0))
    elif folds.k != k:
        raise ValueError("provided fold assignment does not match k")
    if horizon is None:
        horizon = float(np.median(ds.times))

    rows: list[ReplicateRow] = []
    failures: list[tuple[int, str]] = []
    pooled_parts: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for fold in range(k):
        test_idx = folds.test_indices(fold)
        try:
            fit = _fit_quietly(ds.subset(folds.train_indices(fold)), g, n_starts, base_seed, threads)
        except (LcsurvError, ValueError) as exc:
            failures.append((fold, f"training failed: {exc}"))
            continue
        test = ds.subset(test_idx)
        scores = risk_scores(fit, test, horizon)
        pooled_parts.append((scores, test.times, test.events))
        try:
            roc = time_dependent_auc(scores, test.times, test.events, horizon)
        except (NoCases, NoControls) as exc:
            failures.append((fold, str(exc)))
            continue
        n_cases = int(((test.times <= horizon) & (test.events == 1)).sum())
        rows.append(
            ReplicateRow(
                replicate=fold,
                seed=base_seed,
                auc=roc.auc,
                n_cases=n_cases,
                n_controls=int((test.times > horizon).sum()),
            )
        )
    if len(rows) >= k / 2:
        return _summarize("kfold", rows, failures)
    # pooled fallback for case-starved partitions
    if not pooled_parts:
        raise InsufficientReplicates(
            "no fold produced held-out scores: " + "; ".join(m for _, m in failures)
        )
    scores = np.concatenate([p[0] for p in pooled_parts])
    times = np.concatenate([p[1] for p in pooled_parts])
    events = np.concatenate([p[2] for p in pooled_parts])
    roc = time_dependent_auc(scores, times, events, horizon)
    n_cases = int(((times <= horizon) & (events == 1)).sum())
    row = ReplicateRow(
        replicate=0, seed=base_seed, auc=roc.auc, n_cases=n_cases,
        n_controls=int((times > horizon).sum()),
    )
    return _summarize("kfold", [row], failures, pooled=True)


def bootstrap_replicate_auc(
    ds: Dataset, g: int, horizon: float, n_starts: int, seed: int, threads: int = 1
) -> ReplicateRow:
    """Fit on one bootstrap resample and score the resample itself."""
    sample = bootstrap_sample(ds, seed)
    fit = _fit_quietly(sample, g, n_starts, seed, threads)
    scores = risk_scores(fit, sample, horizon)
    roc = time_dependent_auc(scores, sample.times, sample.events, horizon)
    return ReplicateRow(
        replicate=0,
        seed=seed,
        auc=roc.auc,
        n_cases=int(((sample.times <= horizon) & (sample.events == 1)).sum()),
        n_controls=int((sample.times > horizon).sum()),
    )


def bootstrap_validate(
    ds: Dataset,
    B: int,
    g: int,
    horizon: float | None = None,
    n_starts: int = 30,
    base_seed: int = 0,
    threads: int = 1,
) -> ValidationSummary:
    """Apparent AUC over ``B`` bootstrap resamples.

    Each resample gets its own model fit and is scored on itself. Failed
    replicates are recorded; at least B/2 must succeed. The horizon
    defaults to the median follow-up of the source dataset.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if horizon is None:
        horizon = float(np.median(ds.times))
    rows: list[ReplicateRow] = []
    failures: list[tuple[int, str]] = []
    for b in range(B):
        seed = derive_seed(base_seed, "boot", b)
        try:
            row = bootstrap_replicate_auc(ds, g, horizon, n_starts, seed, threads)
        except (LcsurvError, ValueError) as exc:
            failures.append((b, str(exc)))
            continue
        rows.append(
            ReplicateRow(
                replicate=b, seed=seed, auc=row.auc,
                n_cases=row.n_cases, n_controls=row.n_controls,
            )
        )
    if len(rows) < B / 2:
        raise InsufficientReplicates(
            f"only {len(rows)} of {B} bootstrap replicates succeeded"
        )
    return _summarize("bootstrap", rows, failures)
