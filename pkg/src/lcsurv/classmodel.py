"""Multinomial-logit class-membership model.

Class probabilities are a softmax over per-class linear scores in the
membership covariates z; the last class is the reference (its intercept and
slopes are pinned at zero for identifiability). Fitting maximizes the
responsibility-weighted log-likelihood by Newton steps with step-halving,
which accepts fractional responsibilities natively; hard 0/1 labels are the
special case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SeparationDetected, SingularHessian

SEPARATION_BOUND = 50.0
_RIDGE = 1e-8
_MAX_HALVINGS = 40


@dataclass(frozen=True)
class MembershipParams:
    """Intercepts (g,) and slopes (g, dim z) of the membership model.

    The reference class is the last one: ``intercepts[-1]`` and
    ``slopes[-1]`` are zero. The report JSON serializes these under the
    keys ``gamma`` and ``delta``.
    """

    intercepts: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        if self.intercepts.ndim != 1 or self.slopes.ndim != 2:
            raise ValueError("intercepts must be 1-d and slopes 2-d")
        if self.slopes.shape[0] != self.g:
            raise ValueError("slopes must have one row per class")
        if abs(self.intercepts[-1]) > 0 or np.any(self.slopes[-1] != 0):
            raise ValueError("reference class (last) must have zero parameters")
        self.intercepts.flags.writeable = False
        self.slopes.flags.writeable = False

    @property
    def g(self) -> int:
        return self.intercepts.shape[0]

    @property
    def dim_z(self) -> int:
        return self.slopes.shape[1]

    @classmethod
    def null(cls, g: int, dim_z: int) -> "MembershipParams":
        return cls(intercepts=np.zeros(g), slopes=np.zeros((g, dim_z)))


def _logits(params: MembershipParams, Z: np.ndarray) -> np.ndarray:
    return params.intercepts[None, :] + Z @ params.slopes.T


def log_class_prob_matrix(params: MembershipParams, Z: np.ndarray) -> np.ndarray:
    """Row-wise log class probabilities, computed with max-shift."""
    logits = _logits(params, np.asarray(Z, dtype=float))
    shift = logits.max(axis=1, keepdims=True)
    logsum = shift + np.log(np.exp(logits - shift).sum(axis=1, keepdims=True))
    return logits - logsum


def class_prob_matrix(params: MembershipParams, Z: np.ndarray) -> np.ndarray:
    return np.exp(log_class_prob_matrix(params, Z))


def class_probs(params: MembershipParams, z: np.ndarray) -> np.ndarray:
    """Class probabilities for one covariate vector; sums to 1."""
    z = np.asarray(z, dtype=float)
    if z.shape != (params.dim_z,):
        raise ValueError(f"z must have shape ({params.dim_z},)")
    return class_prob_matrix(params, z[None, :])[0]


def _check_resp(Z: np.ndarray, resp: np.ndarray) -> None:
    n, g = resp.shape
    if Z.shape[0] != n:
        raise ValueError("Z and resp must have the same number of rows")
    if n < g:
        raise ValueError("need at least as many rows as classes")
    if np.any(resp < -1e-12):
        raise ValueError("responsibilities must be non-negative")
    if np.max(np.abs(resp.sum(axis=1) - 1.0)) > 1e-8:
        raise ValueError("responsibility rows must sum to 1")


def fit_membership(
    Z: np.ndarray,
    resp: np.ndarray,
    init: MembershipParams | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> MembershipParams:
    """Weighted maximum-likelihood fit of the membership model.

    Maximizes sum_j sum_i resp[j,i] * log pi_i(z_j) by Newton iterations
    with step-halving; the objective never decreases between iterations.
    Works with zero membership covariates (intercept-only closed form is
    recovered numerically).

    Raises
    ------
    SeparationDetected
        When any free parameter escapes ``SEPARATION_BOUND`` (reported,
        not clipped).
    SingularHessian
        When the Newton system stays singular after a ridge retry.
    """
    Z = np.asarray(Z, dtype=float)
    resp = np.asarray(resp, dtype=float)
    _check_resp(Z, resp)
    n, g = resp.shape
    q = Z.shape[1]
    if g == 1:
        return MembershipParams.null(1, q)

    design = np.hstack([np.ones((n, 1)), Z])  # (n, 1+q)
    k = g - 1
    d = q + 1
    theta = np.zeros((k, d))
    if init is not None:
        if init.g != g or init.dim_z != q:
            raise ValueError("init has mismatched shape")
        theta[:, 0] = init.intercepts[:k]
        theta[:, 1:] = init.slopes[:k]

    def params_of(th: np.ndarray) -> MembershipParams:
        return MembershipParams(
            intercepts=np.concatenate([th[:, 0], [0.0]]),
            slopes=np.vstack([th[:, 1:], np.zeros((1, q))]),
        )

    def objective(th: np.ndarray) -> float:
        logp = log_class_prob_matrix(params_of(th), Z)
        with np.errstate(invalid="ignore"):
            terms = np.where(resp > 0, resp * logp, 0.0)
        return float(terms.sum())

    obj = objective(theta)
    for _ in range(max_iter):
        if np.max(np.abs(theta)) > SEPARATION_BOUND:
            raise SeparationDetected(
                f"membership parameter magnitude exceeded {SEPARATION_BOUND:g}"
            )
        probs = class_prob_matrix(params_of(theta), Z)
        grad = (resp[:, :k] - probs[:, :k]).T @ design  # (k, d)
        if float(np.max(np.abs(grad))) <= tol:
            break
        # Hessian of the log-likelihood: -sum_j (diag(pi)-pi pi') (x) a_j a_j'
        pk = probs[:, :k]
        w_block = np.einsum("ji,jk->jik", pk, pk)
        idx = np.arange(k)
        w_block[:, idx, idx] -= pk
        hess = np.einsum("jik,ja,jb->iakb", w_block, design, design).reshape(k * d, k * d)
        direction = _solve(-hess, grad.reshape(-1)).reshape(k, d)
        if float(np.max(np.abs(grad))) <= 1e-4 and np.max(np.abs(direction)) <= 0.5:
            # objective changes are below float resolution here; take the
            # full step and let the gradient check terminate
            theta = theta + direction
            obj = objective(theta)
            continue
        step = 1.0
        improved = False
        for _ in range(_MAX_HALVINGS):
            candidate = theta + step * direction
            cand_obj = objective(candidate)
            if cand_obj > obj:
                theta, obj = candidate, cand_obj
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    if np.max(np.abs(theta)) > SEPARATION_BOUND:
        raise SeparationDetected(
            f"membership parameter magnitude exceeded {SEPARATION_BOUND:g}"
        )
    return params_of(theta)


def _solve(hess_neg: np.ndarray, grad: np.ndarray) -> np.ndarray:
    for ridge in (0.0, _RIDGE):
        h = hess_neg if ridge == 0.0 else hess_neg + ridge * np.eye(hess_neg.shape[0])
        try:
            c, low = scipy.linalg.cho_factor(h)
            direction = scipy.linalg.cho_solve((c, low), grad)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            continue
        if np.all(np.isfinite(direction)):
            return direction
    raise SingularHessian("membership Hessian singular even after ridge fallback")
