"""Latent-class Cox model estimated by EM with random restarts.

Each class owns a weighted Cox model (coefficients plus Breslow baseline);
class membership follows a multinomial logit in the z covariates. The
E-step computes posterior responsibilities in log space; the M-step refits
every class model with the responsibilities as case weights and refreshes
the membership model. Profiling the baseline hazard out of the full
likelihood makes the per-class weighted partial-likelihood fit an exact
M-step, so the observed-data log-likelihood never decreases (asserted each
iteration with 1e-10 slack; a violation marks the chain failed).

Chains start from random soft responsibilities (uniform Dirichlet rows)
with seeds derived from the base seed, run independently, and the highest
log-likelihood chain wins; ties break toward the lower start index.
"""

from __future__ import annotations

import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import coxph
from .classmodel import MembershipParams, class_probs, fit_membership, log_class_prob_matrix
from .coxph import CoxFit, fit_cox, predict_survival
from .dataset import Dataset, SurvivalRecord
from .errors import AllStartsFailed, DegenerateRecord, FitError
from .rng import generator

#: Two chains replicating the best log-likelihood within this distance
#: count as the same optimum.
REPLICATION_TOL = 1e-4

#: Allowed numerical slack on the EM ascent check.
ASCENT_SLACK = 1e-10


class _ZeroMassCounter:
    """Counts event records whose time carries no baseline hazard mass."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, k: int) -> None:
        if k:
            with self._lock:
                self._count += int(k)

    @property
    def value(self) -> int:
        return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0


zero_mass_events = _ZeroMassCounter()


@dataclass(frozen=True)
class StartResult:
    """Outcome of one EM chain: start index, final log-likelihood,
    convergence flag, and a failure message when the chain aborted."""

    seed: int
    loglik: float
    converged: bool
    message: str | None = None

    @property
    def failed(self) -> bool:
        return self.message is not None


@dataclass(frozen=True)
class LatentClassFit:
    """Fitted latent-class Cox model.

    Classes are canonically ordered by descending mean responsibility
    (ties broken by ascending first Cox coefficient) so repeated fits
    serialize identically regardless of start labelling.
    """

    g: int
    membership: MembershipParams
    class_models: tuple[CoxFit, ...]
    resp: np.ndarray
    loglik: float
    n_params: int
    starts_summary: tuple[StartResult, ...]
    best_replicated: bool

    def __post_init__(self):
        self.resp.flags.writeable = False

    @property
    def class_proportions(self) -> np.ndarray:
        return self.resp.mean(axis=0)


class _ChainFailed(Exception):
    pass


@dataclass
class _ChainResult:
    start: int
    membership: MembershipParams
    models: tuple[CoxFit, ...]
    resp: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    trace: tuple[float, ...]


# -- densities ---------------------------------------------------------------


def _log_density_matrix(
    models: tuple[CoxFit, ...], times: np.ndarray, events: np.ndarray, x: np.ndarray
) -> np.ndarray:
    """Per-record, per-class log observation density.

    Events contribute log(baseline mass) + x'coef - H0(t) exp(x'coef),
    censored records just the log survival term; H0 is right-continuous,
    so the survival factor includes the subject's own event mass. Event
    times carrying no baseline mass give density 0 (logged as -inf) and
    bump the module-level ``zero_mass_events`` counter.
    """
    n = times.shape[0]
    out = np.empty((n, len(models)))
    is_event = events == 1
    for i, fit in enumerate(models):
        eta = x @ fit.coef
        with np.errstate(over="ignore", invalid="ignore"):
            log_surv = -fit.baseline.cumulative(times) * np.exp(eta)
        col = np.array(log_surv, dtype=float)
        if np.any(is_event):
            mass = np.asarray(fit.baseline.increment_at(times[is_event]), dtype=float)
            zero_mass_events.add(int(np.count_nonzero(mass == 0)))
            with np.errstate(divide="ignore"):
                col[is_event] += np.log(mass) + eta[is_event]
        out[:, i] = col
    # overflow of exp(eta) drives the survival term to -inf, which is the
    # correct limiting density; nan would indicate a genuine bug
    out = np.where(np.isnan(out), -np.inf, out)
    return out


def observation_density(class_fit: CoxFit, rec: SurvivalRecord) -> float:
    """Density of one record under one class model (hazard mass times
    survival for events, survival alone for censored records)."""
    logf = _log_density_matrix(
        (class_fit,),
        np.array([rec.time]),
        np.array([rec.event]),
        np.array([rec.x], dtype=float),
    )
    return float(np.exp(logf[0, 0]))


# -- E/M steps ----------------------------------------------------------------


def _posterior(log_pi: np.ndarray, log_f: np.ndarray, ids) -> tuple[np.ndarray, float]:
    joint = log_pi + log_f
    rowmax = joint.max(axis=1)
    dead = ~np.isfinite(rowmax)
    if np.any(dead):
        bad = int(np.flatnonzero(dead)[0])
        raise DegenerateRecord(
            f"record '{ids[bad]}': zero density under every class"
        )
    norm = rowmax + np.log(np.exp(joint - rowmax[:, None]).sum(axis=1))
    resp = np.exp(joint - norm[:, None])
    return resp, float(norm.sum())


def e_step(
    membership: MembershipParams, class_models: tuple[CoxFit, ...], ds: Dataset
) -> tuple[np.ndarray, float]:
    """Posterior responsibilities and observed-data log-likelihood.

    Raises ``DegenerateRecord`` when some record has zero density under
    every class.
    """
    log_pi = log_class_prob_matrix(membership, ds.z)
    log_f = _log_density_matrix(tuple(class_models), ds.times, ds.events, ds.x)
    return _posterior(log_pi, log_f, ds.ids)


def m_step(
    resp: np.ndarray,
    ds: Dataset,
    membership: MembershipParams | None = None,
    class_models: tuple[CoxFit, ...] | None = None,
) -> tuple[MembershipParams, tuple[CoxFit, ...]]:
    """Refit every class Cox model with its responsibility column as case
    weights (warm-started when current models are given) and refit the
    membership model. Estimation errors are re-raised tagged with the
    class index."""
    g = resp.shape[1]
    models = []
    for i in range(g):
        init = class_models[i].coef if class_models is not None else None
        try:
            models.append(fit_cox(ds, resp[:, i], init=init))
        except FitError as exc:
            raise type(exc)(f"class {i + 1}: {exc}") from exc
    init_m = membership if membership is not None and membership.g == g else None
    new_membership = fit_membership(ds.z, resp, init=init_m)
    return new_membership, tuple(models)


def _em_chain(
    ds: Dataset,
    g: int,
    resp0: np.ndarray,
    start: int,
    tol: float,
    max_iter: int,
) -> _ChainResult:
    min_mass = max(5.0, ds.x.shape[1] + 1.0)
    resp = resp0
    membership: MembershipParams | None = None
    models: tuple[CoxFit, ...] | None = None
    prev = None
    trace: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mass = resp.sum(axis=0)
        if float(mass.min()) < min_mass:
            raise _ChainFailed(
                f"class responsibility mass {mass.min():.3g} below {min_mass:g}"
            )
        try:
            membership, models = m_step(resp, ds, membership, models)
            resp, ll = e_step(membership, models, ds)
        except FitError as exc:
            raise _ChainFailed(str(exc)) from exc
        trace.append(ll)
        if prev is not None:
            if ll < prev - ASCENT_SLACK:
                raise _ChainFailed(
                    f"log-likelihood decreased from {prev!r} to {ll!r}"
                )
            if abs(ll - prev) / (abs(prev) + 1e-300) < tol:
                converged = True
                break
        prev = ll
    return _ChainResult(
        start=start,
        membership=membership,
        models=models,
        resp=resp,
        loglik=trace[-1],
        converged=converged,
        iterations=iterations,
        trace=tuple(trace),
    )


# -- full fit ------------------------------------------------------------------


def _initial_responsibilities(n: int, g: int, base_seed: int, start: int) -> np.ndarray:
    if g == 1:
        return np.ones((n, 1))
    return generator(base_seed, "start", start).dirichlet(np.ones(g), size=n)


def _permute_membership(params: MembershipParams, order: np.ndarray) -> MembershipParams:
    intercepts = params.intercepts[order]
    slopes = params.slopes[order]
    return MembershipParams(
        intercepts=intercepts - intercepts[-1],
        slopes=slopes - slopes[-1],
    )


def _canonicalize(chain: _ChainResult) -> tuple[MembershipParams, tuple[CoxFit, ...], np.ndarray]:
    mean_resp = chain.resp.mean(axis=0)
    first_coef = np.array(
        [m.coef[0] if m.coef.size else 0.0 for m in chain.models]
    )
    order = np.lexsort((first_coef, -mean_resp))
    return (
        _permute_membership(chain.membership, order),
        tuple(chain.models[i] for i in order),
        chain.resp[:, order],
    )


def fit_latent_class(
    ds: Dataset,
    g: int,
    n_starts: int = 30,
    base_seed: int = 0,
    tol: float = 1e-8,
    max_iter: int = 500,
    threads: int = 1,
) -> LatentClassFit:
    """Fit a g-class latent-class Cox model by EM with random restarts.

    Each chain starts from uniform-Dirichlet responsibility rows seeded by
    ``derive(base_seed, "start", s)`` and alternates E and M steps until the
    relative log-likelihood change drops below ``tol`` or ``max_iter``
    passes. The highest log-likelihood chain is returned;
    ``best_replicated`` is true when at least two chains land within
    ``REPLICATION_TOL`` of the best value (a warning recommends more starts
    otherwise). With ``g=1`` every start is identical, so a single chain
    runs and counts as replicated.

    Chains may run concurrently (``threads``); chain results and the final
    selection are deterministic regardless of thread count.
    """
    if g < 1:
        raise ValueError("g must be at least 1")
    if ds.n < 10 * g:
        raise ValueError(f"need at least {10 * g} records to fit {g} classes")
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    coxph._prep(ds)  # build shared structures before any worker threads

    effective_starts = 1 if g == 1 else n_starts

    def run(start: int) -> _ChainResult | str:
        resp0 = _initial_responsibilities(ds.n, g, base_seed, start)
        try:
            return _em_chain(ds, g, resp0, start, tol, max_iter)
        except _ChainFailed as exc:
            return str(exc)

    if threads > 1 and effective_starts > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, range(effective_starts)))
    else:
        outcomes = [run(s) for s in range(effective_starts)]

    summary: list[StartResult] = []
    best: _ChainResult | None = None
    for s, out in enumerate(outcomes):
        if isinstance(out, str):
            summary.append(StartResult(seed=s, loglik=-np.inf, converged=False, message=out))
            continue
        summary.append(StartResult(seed=s, loglik=out.loglik, converged=out.converged))
        if best is None or out.loglik > best.loglik:
            best = out
    if best is None:
        raise AllStartsFailed(
            "every EM chain failed: " + "; ".join(r.message for r in summary)
        )

    completed = [r for r in summary if not r.failed]
    if g == 1:
        best_replicated = True
    else:
        near = sum(1 for r in completed if best.loglik - r.loglik <= REPLICATION_TOL)
        best_replicated = near >= 2
    if not best_replicated:
        warnings.warn(
            "best log-likelihood was not replicated by a second start; "
            "consider increasing n_starts",
            RuntimeWarning,
            stacklevel=2,
        )

    membership, models, resp = _canonicalize(best)
    n_params = (g - 1) * (1 + ds.z.shape[1]) + g * ds.x.shape[1]
    return LatentClassFit(
        g=g,
        membership=membership,
        class_models=models,
        resp=resp,
        loglik=best.loglik,
        n_params=n_params,
        starts_summary=tuple(summary),
        best_replicated=best_replicated,
    )


# -- prediction -----------------------------------------------------------------


def predict_mixture_survival(fit: LatentClassFit, x: np.ndarray, z: np.ndarray, t) -> float:
    """Mixture survival: class probabilities at z weighting the class
    survival curves at x."""
    probs = class_probs(fit.membership, z)
    curves = np.array([predict_survival(m, x, t) for m in fit.class_models])
    out = np.tensordot(probs, curves, axes=(0, 0))
    return out if np.ndim(out) else float(out)


def posterior_class(fit: LatentClassFit, rec: SurvivalRecord) -> np.ndarray:
    """Posterior class probabilities for one record (same rule as the
    E-step, single row)."""
    log_pi = log_class_prob_matrix(fit.membership, np.array([rec.z], dtype=float))
    log_f = _log_density_matrix(
        fit.class_models,
        np.array([rec.time]),
        np.array([rec.event]),
        np.array([rec.x], dtype=float),
    )
    resp, _ = _posterior(log_pi, log_f, (rec.id,))
    return resp[0]
