"""Information criteria and the class-enumeration sweep.

AIC, BIC and the sample-size-adjusted BIC are computed from the
observed-data log-likelihood and the free-parameter count; ``n`` is the
number of subjects. The adjusted BIC substitutes (n + 2)/24 for the sample
size. The sweep recommends the smallest-BIC class count among converged
fits, breaking ties toward fewer classes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .dataset import Dataset
from .errors import LcsurvError
from .mixture import fit_latent_class


@dataclass(frozen=True)
class FitStatistics:
    neg2ll: float
    n_params: int
    n: int
    aic: float
    bic: float
    abic: float


def fit_statistics(loglik: float, n_params: int, n: int) -> FitStatistics:
    """Fit statistics from a log-likelihood, parameter count and sample size."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if n_params < 0:
        raise ValueError("n_params must be non-negative")
    neg2ll = -2.0 * loglik
    return FitStatistics(
        neg2ll=neg2ll,
        n_params=n_params,
        n=n,
        aic=neg2ll + 2.0 * n_params,
        bic=neg2ll + n_params * math.log(n),
        abic=neg2ll + n_params * math.log((n + 2) / 24.0),
    )


@dataclass(frozen=True)
class SweepEntry:
    g: int
    converged: bool
    best_replicated: bool
    stats: FitStatistics | None = None
    error: str | None = None

    @property
    def usable(self) -> bool:
        return self.converged and self.stats is not None


@dataclass(frozen=True)
class SweepResult:
    entries: tuple[SweepEntry, ...]
    recommended_g: int | None


def recommend_g(entries) -> int | None:
    """Smallest-BIC class count among usable entries, ties toward smaller g."""
    best = None
    for entry in sorted(entries, key=lambda e: e.g):
        if not entry.usable:
            continue
        if best is None or entry.stats.bic < best.stats.bic:
            best = entry
    return best.g if best is not None else None


def class_sweep(
    ds: Dataset,
    g_min: int,
    g_max: int,
    n_starts: int = 30,
    base_seed: int = 0,
    tol: float = 1e-8,
    max_iter: int = 500,
    threads: int = 1,
) -> SweepResult:
    """Fit every class count in ``[g_min, g_max]`` and tabulate fit
    statistics. Fits that fail or do not converge are listed with a failure
    flag and excluded from the recommendation."""
    if g_min < 1 or g_max < g_min:
        raise ValueError("need 1 <= g_min <= g_max")
    entries: list[SweepEntry] = []
    for g in range(g_min, g_max + 1):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = fit_latent_class(
                    ds,
                    g,
                    n_starts=n_starts,
                    base_seed=base_seed,
                    tol=tol,
                    max_iter=max_iter,
                    threads=threads,
                )
        except (LcsurvError, ValueError) as exc:
            entries.append(
                SweepEntry(g=g, converged=False, best_replicated=False, error=str(exc))
            )
            continue
        best = max(
            (r for r in fit.starts_summary if not r.failed),
            key=lambda r: r.loglik,
        )
        entries.append(
            SweepEntry(
                g=g,
                converged=best.converged,
                best_replicated=fit.best_replicated,
                stats=fit_statistics(fit.loglik, fit.n_params, ds.n),
            )
        )
    return SweepResult(entries=tuple(entries), recommended_g=recommend_g(entries))
