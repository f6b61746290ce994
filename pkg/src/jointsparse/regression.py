"""Step-2 ridge regression under a shared covariance, and the group-Lasso baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .covariance import fit_covariance, fit_loo
from .model import (
    CoefficientSet,
    DiagonalCovariance,
    MultiTaskDataset,
    SolverConfig,
    SolveTrace,
    TaskData,
    check_dataset,
    covariance_as_matrix,
)


class RankDeficientError(ValueError):
    """The requested least-squares problem has no unique solution."""


@dataclass(frozen=True)
class RidgeSolveOptions:
    ridge_lambda: float = 0.0
    use_loo: bool = False

    def __post_init__(self):
        if not self.ridge_lambda >= 0:
            raise ValueError("ridge_lambda must be >= 0")


def covariance_factor(estimate):
    """F with F F^T = Omega whose rows are exactly zero outside Omega's support."""
    if isinstance(estimate, DiagonalCovariance):
        S = np.flatnonzero(estimate.omega > 0)
        F = np.zeros((estimate.d, S.size))
        F[S, np.arange(S.size)] = np.sqrt(estimate.omega[S])
        return F
    M = covariance_as_matrix(estimate)
    S = np.flatnonzero(np.any(M != 0, axis=1))
    F = np.zeros((M.shape[0], 0))
    if S.size == 0:
        return F
    w, U = np.linalg.eigh(M[np.ix_(S, S)])
    w = np.maximum(w, 0.0)
    keep = w > 1e-12 * max(w.max(), 0.0)
    F = np.zeros((M.shape[0], int(keep.sum())))
    F[S] = U[:, keep] * np.sqrt(w[keep])
    return F


def _ridge_from_factor(X, y, F, lam):
    if F.shape[1] == 0:
        return np.zeros(X.shape[1])
    XF = X @ F
    K = XF.T @ XF
    if lam > 0:
        K[np.diag_indices_from(K)] += lam
    elif np.linalg.matrix_rank(K) < K.shape[0]:
        raise RankDeficientError(
            "ridge_lambda = 0 but the design is rank-deficient on the covariance support"
        )
    return F @ np.linalg.solve(K, XF.T @ y)


def ridge_with_covariance(task: TaskData, omega_hat, options: RidgeSolveOptions):
    """``(X^T X + lam Omega^+)^{-1} X^T y`` in the form that tolerates singular Omega.

    Computed as ``F (F^T X^T X F + lam I)^{-1} F^T X^T y`` with ``F F^T = Omega``,
    which equals the Omega^{1/2} sandwich and vanishes exactly off the support.
    """
    return _ridge_from_factor(
        task.design, task.response, covariance_factor(omega_hat), float(options.ridge_lambda)
    )


@dataclass
class TwoStepFit:
    coefficients: CoefficientSet
    covariance: object
    trace: Optional[SolveTrace] = None
    per_task_covariance: Optional[list] = None


def two_step_fit(dataset, config, structure="diagonal", use_loo=False):
    """Estimate the shared covariance, then ridge-regress every task against it.

    With ``use_loo`` each task's ridge uses the covariance fitted without it;
    ``covariance`` then still holds the full-data estimate.
    """
    check_dataset(dataset)
    estimate, trace = fit_covariance(dataset, config, structure)
    per_task = None
    if use_loo:
        per_task = [fit_loo(dataset, i, config, structure) for i in range(dataset.m)]
    options = RidgeSolveOptions(config.ridge_lambda, use_loo)
    betas = []
    for i, task in enumerate(dataset.tasks):
        est = per_task[i] if use_loo else estimate
        betas.append(ridge_with_covariance(task, est, options))
    return TwoStepFit(CoefficientSet(np.array(betas)), estimate, trace, per_task)


def ridge_all(dataset, estimate, ridge_lambda):
    F = covariance_factor(estimate)
    return CoefficientSet(
        np.array([_ridge_from_factor(t.design, t.response, F, ridge_lambda) for t in dataset.tasks])
    )


# --- group Lasso -----------------------------------------------------------


@dataclass
class GroupLassoResult:
    coefficients: CoefficientSet
    implied_omega: np.ndarray
    trace: SolveTrace
    lambda_gl: float = 0.0


def group_lasso_lambda_max(dataset):
    """Smallest penalty at which the all-zero solution is optimal."""
    c = dataset.corr_stack()
    return float(np.max(np.linalg.norm(c, axis=0)))


def group_lasso_objective(dataset, betas, lambda_gl):
    B = np.asarray(betas)
    fit = sum(0.5 * float(np.sum((t.response - t.design @ b) ** 2)) for t, b in zip(dataset.tasks, B))
    return fit + lambda_gl * float(np.sum(np.linalg.norm(B, axis=0)))


def implied_omega(betas, lambda_gl):
    """Inner minimizer over omega of the variational form at noise sigma = lambda_gl / sqrt(m)."""
    B = np.asarray(betas)
    m = B.shape[0]
    return lambda_gl * np.linalg.norm(B, axis=0) / m


def group_lasso_variational(dataset, betas, omega, sigma2):
    """Joint objective in (beta, omega) whose omega-minimum reproduces the group Lasso.

    Zero rows paired with zero omega contribute nothing (the 0/0 limit).
    """
    B = np.asarray(betas)
    omega = np.asarray(omega, dtype=float)
    m = B.shape[0]
    fit = sum(float(np.sum((t.response - t.design @ b) ** 2)) for t, b in zip(dataset.tasks, B))
    row_sq = np.sum(B * B, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(row_sq > 0, row_sq / (2 * omega), 0.0)
    return fit / (2 * sigma2) + float(ratio.sum()) + m / (2 * sigma2) * float(omega.sum())


@njit(cache=True)
def _row_norm_root(a, c, lam, start):
    """Solve ``sum_l c_l^2 / (a_l nu + lam)^2 = 1`` for nu > 0.

    The left side is convex and decreasing in nu, so Newton started below
    the root climbs monotonically to it. ``(||c|| - lam) / max(a)`` is such a
    start, and it is already the root when all ``a_l`` are equal. A ``start``
    above the root (the row's previous norm) takes one Newton step that lands
    below it, then the climb proceeds as usual. Pass ``start <= 0`` for none.
    """
    m = a.shape[0]
    cn2, amax = 0.0, 0.0
    for l in range(m):
        cn2 += c[l] * c[l]
        amax = max(amax, a[l])
    lower = (math.sqrt(cn2) - lam) / amax
    nu = start if start > lower else lower
    for _ in range(100):
        h, slope = -1.0, 0.0
        for l in range(m):
            inv = 1.0 / (a[l] * nu + lam)
            r = c[l] * c[l] * inv * inv
            h += r
            slope += r * a[l] * inv
        if h == 0.0 or (h < 0.0 and nu == lower):
            break
        step = h / (2.0 * slope)
        nu = max(nu + step, lower)
        # near the root rounding can flip the sign of h; stop on a tiny step either way
        if abs(step) <= 1e-13 * nu:
            break
    return nu


@njit(cache=True)
def _gl_sweep(G, a_all, B, Q, lam, rows):
    """One pass of exact row updates over ``rows``; keeps ``Q = c0 - G B`` in sync."""
    m, d = B.shape
    c = np.empty(m)
    new = np.empty(m)
    for j in rows:
        cn2, on2 = 0.0, 0.0
        for l in range(m):
            c[l] = Q[l, j] + a_all[j, l] * B[l, j]
            cn2 += c[l] * c[l]
            on2 += B[l, j] * B[l, j]
        if cn2 <= lam * lam:
            if on2 == 0.0:
                continue
            new[:] = 0.0
        elif lam == 0.0:
            for l in range(m):
                new[l] = c[l] / a_all[j, l] if a_all[j, l] > 0 else 0.0
        else:
            nu = _row_norm_root(a_all[j], c, lam, math.sqrt(on2))
            for l in range(m):
                new[l] = c[l] * nu / (a_all[j, l] * nu + lam)
        for l in range(m):
            delta = new[l] - B[l, j]
            if delta != 0.0:
                B[l, j] = new[l]
                for k in range(d):
                    Q[l, k] -= delta * G[l, j, k]


def group_lasso_fit(dataset, lambda_gl, config, init=None):
    """Block coordinate descent over feature rows for the (2,1)-penalized least squares.

    Each row update is exact: zero when the row's correlation norm is at most
    ``lambda_gl``, otherwise a per-task rescaling whose common norm solves a
    one-dimensional root equation.
    """
    check_dataset(dataset)
    if not lambda_gl >= 0:
        raise ValueError("lambda_gl must be >= 0")
    G = np.ascontiguousarray(dataset.gram_stack(), dtype=float)
    c0 = dataset.corr_stack()
    m, d = c0.shape
    if lambda_gl == 0:
        exact = _per_task_lstsq(dataset)
        if exact is not None:
            trace = SolveTrace([group_lasso_objective(dataset, exact, 0.0)], 0, True, d)
            return GroupLassoResult(CoefficientSet(exact), np.zeros(d), trace, 0.0)
    B = np.zeros((m, d)) if init is None else np.array(init, dtype=float)
    Q = c0 - np.einsum("ljk,lk->lj", G, B)
    a_all = np.ascontiguousarray(np.einsum("ljj->jl", G))
    ynorm = np.array([float(t.response @ t.response) for t in dataset.tasks])
    lam = float(lambda_gl)
    every = np.arange(d)

    def objective():
        rss = ynorm - np.einsum("lj,lj->l", B, c0) - np.einsum("lj,lj->l", B, Q)
        return 0.5 * float(rss.sum()) + lam * float(np.sum(np.linalg.norm(B, axis=0)))

    trace = SolveTrace()
    f = objective()
    trace.objective_values.append(f)
    while trace.iterations < config.max_iter:
        _gl_sweep(G, a_all, B, Q, lam, every)
        trace.iterations += 1
        f_prev, f = f, objective()
        trace.objective_values.append(f)
        if f_prev - f <= config.rel_tol * max(abs(f), 1e-300):
            trace.converged = True
            break
        # sweep the active rows until they settle, then recheck every row
        while trace.iterations < config.max_iter:
            _gl_sweep(G, a_all, B, Q, lam, np.flatnonzero(np.any(B != 0, axis=0)))
            trace.iterations += 1
            f_prev, f = f, objective()
            trace.objective_values.append(f)
            if f_prev - f <= config.rel_tol * max(abs(f), 1e-300):
                break
    trace.active_set_size = int(np.count_nonzero(np.any(B != 0, axis=0)))
    return GroupLassoResult(CoefficientSet(B), implied_omega(B, lambda_gl), trace, float(lambda_gl))


def group_lasso_kkt_violation(dataset, betas, lambda_gl):
    """Largest violation of the group-Lasso optimality conditions over feature rows."""
    B = np.asarray(betas)
    R = np.stack(
        [t.design.T @ (t.response - t.design @ b) for t, b in zip(dataset.tasks, B)]
    )
    worst = 0.0
    for j in range(B.shape[1]):
        row = B[:, j]
        nrm = np.linalg.norm(row)
        if nrm > 0:
            worst = max(worst, float(np.max(np.abs(R[:, j] - lambda_gl * row / nrm))))
        else:
            worst = max(worst, float(np.linalg.norm(R[:, j]) - lambda_gl))
    return worst


def _per_task_lstsq(dataset, support=None):
    out = np.zeros((dataset.m, dataset.d))
    S = np.arange(dataset.d) if support is None else np.asarray(support, dtype=int)
    if S.size == 0:
        return out
    for i, t in enumerate(dataset.tasks):
        X = t.design[:, S]
        if np.linalg.matrix_rank(X) < S.size:
            return None
        out[i, S] = np.linalg.lstsq(X, t.response, rcond=None)[0]
    return out


def gls_ls_fit(dataset, lambda_gl, config, gl_result=None):
    """Group-Lasso support selection followed by per-task least squares on that support."""
    gl = group_lasso_fit(dataset, lambda_gl, config) if gl_result is None else gl_result
    S = np.flatnonzero(np.any(gl.coefficients.betas != 0, axis=0))
    out = np.zeros((dataset.m, dataset.d))
    for i, t in enumerate(dataset.tasks):
        if S.size == 0:
            continue
        X = t.design[:, S]
        rank = np.linalg.matrix_rank(X)
        if rank < S.size:
            raise RankDeficientError(
                f"task {i}: design restricted to the {S.size} selected features has rank {rank} "
                f"with {X.shape[0]} rows; no unique least-squares refit"
            )
        out[i, S] = np.linalg.lstsq(X, t.response, rcond=None)[0]
    return CoefficientSet(out)
