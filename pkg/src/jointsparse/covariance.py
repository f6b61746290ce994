"""Step-1 estimators of the covariance shared by all tasks' coefficients.

Every estimator fits ``X Omega X^T`` to ``y y^T`` task by task in Frobenius
norm. Writing ``G = X^T X`` and ``c = X^T y`` the loss expands to::

    1/2 sum_l ||y y^T - X Omega X^T||_F^2
        = 1/2 sum_l <Omega, G Omega G> - sum_l c^T Omega c + 1/2 sum_l ||y||^4

so only the per-task Gram matrices and correlations are ever needed. For a
diagonal ``Omega = diag(w)`` this collapses further to the quadratic in
:class:`SccQuadratic`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import psd_tolerance, symmetrize
from .model import (
    DiagonalCovariance,
    DiagPlusLowRank,
    FullCovariance,
    MultiTaskDataset,
    SolverConfig,
    SolveTrace,
    check_dataset,
)

SUPPORT_SNAP = 1e-10


@dataclass(frozen=True)
class SccQuadratic:
    """``1/2 w^T A w - b^T w + const`` equal to the diagonal Frobenius loss."""

    gram_sq: np.ndarray
    corr_sq: np.ndarray
    const_term: float

    def value(self, omega):
        omega = np.asarray(omega, dtype=float)
        return 0.5 * omega @ self.gram_sq @ omega - self.corr_sq @ omega + self.const_term


def build_scc_quadratic(dataset: MultiTaskDataset) -> SccQuadratic:
    check_dataset(dataset)
    G = dataset.gram_stack()
    c = dataset.corr_stack()
    A = np.einsum("ljk,ljk->jk", G, G)
    b = np.einsum("lj,lj->j", c, c)
    const = 0.5 * sum(float(t.response @ t.response) ** 2 for t in dataset.tasks)
    return SccQuadratic(A, b, const)


def frobenius_loss(dataset, omega_matrix):
    """Direct 1/2 sum_l ||y y^T - X Omega X^T||_F^2; used as a check, O(n^2) per task."""
    total = 0.0
    for t in dataset.tasks:
        R = np.outer(t.response, t.response) - t.design @ omega_matrix @ t.design.T
        total += 0.5 * float(np.sum(R * R))
    return total


def _snap(omega):
    omega = np.maximum(omega, 0.0)
    top = omega.max() if omega.size else 0.0
    if top > 0:
        omega[omega < SUPPORT_SNAP * top] = 0.0
    return omega


def _decreased_enough(f_prev, f, rel_tol):
    return f_prev - f <= rel_tol * max(abs(f), abs(f_prev), 1e-300)


def nonneg_cd(A, b, penalty, rel_tol=1e-8, max_iter=10_000, omega0=None, const=0.0):
    """Cyclic coordinate descent for ``min_{w >= 0} 1/2 w'Aw - b'w + penalty'w``.

    Alternates full sweeps with sweeps restricted to the current positive set;
    every sweep counts toward ``max_iter`` and records one objective value.
    """
    d = b.shape[0]
    diag = np.diag(A).copy()
    omega = np.zeros(d) if omega0 is None else np.maximum(np.array(omega0, dtype=float), 0.0)
    grad = A @ omega - b + penalty
    rows = [A[j] for j in range(d)]

    def objective():
        return 0.5 * omega @ (grad - b + penalty)

    def sweep(coords):
        for j in coords:
            if diag[j] <= 0:
                continue
            new = omega[j] - grad[j] / diag[j]
            if new < 0:
                new = 0.0
            delta = new - omega[j]
            if delta != 0.0:
                omega[j] = new
                grad[:] += delta * rows[j]

    trace = SolveTrace()
    f = objective()
    trace.objective_values.append(f + const)
    everything = range(d)
    while trace.iterations < max_iter:
        sweep(everything)
        trace.iterations += 1
        f_prev, f = f, objective()
        trace.objective_values.append(f + const)
        if _decreased_enough(f_prev, f, rel_tol):
            trace.converged = True
            break
        while trace.iterations < max_iter:
            active = np.flatnonzero(omega > 0)
            sweep(active)
            trace.iterations += 1
            f_prev, f = f, objective()
            trace.objective_values.append(f + const)
            if _decreased_enough(f_prev, f, rel_tol):
                break
    trace.active_set_size = int(np.count_nonzero(omega))
    return omega, trace


def _scc(quad, penalty, config, omega0):
    omega, trace = nonneg_cd(
        quad.gram_sq,
        quad.corr_sq,
        penalty,
        rel_tol=config.rel_tol,
        max_iter=config.max_iter,
        omega0=omega0,
        const=quad.const_term,
    )
    omega = _snap(omega)
    trace.active_set_size = int(np.count_nonzero(omega))
    return DiagonalCovariance(omega), trace


def fit_scc_diagonal(dataset, config, quad=None, omega0=None):
    """Sparse covariance coding: nonnegative diagonal fit with an l1 penalty ``config.lam``.

    Returns ``(DiagonalCovariance, SolveTrace)``. ``quad`` may be passed to
    reuse a precomputed :class:`SccQuadratic`; ``omega0`` warm-starts.
    """
    quad = build_scc_quadratic(dataset) if quad is None else quad
    penalty = np.full(quad.corr_sq.shape, float(config.lam))
    return _scc(quad, penalty, config, omega0)


def trace_weights(dataset):
    """Per-feature ``sum_l ||x_j^(l)||^2``, the diagonal of ``sum_l X^T X``."""
    return sum(np.einsum("ij,ij->j", t.design, t.design) for t in dataset.tasks)


def fit_scc_trace(dataset, config, quad=None, omega0=None):
    """Diagonal fit penalized by ``lam * tr(Omega sum_l X^T X)``.

    With ``lam`` equal to the noise variance this is the unbiased
    moment-matching estimator restricted to diagonal ``Omega``.
    """
    check_dataset(dataset)
    quad = build_scc_quadratic(dataset) if quad is None else quad
    penalty = float(config.lam) * trace_weights(dataset)
    return _scc(quad, penalty, config, omega0)


class GramLoss:
    """The Frobenius loss over full matrices, in Gram form.

    Evaluations exploit row sparsity of the argument (features outside the
    support contribute nothing) and low-rank factors where available.
    """

    def __init__(self, G, C, const):
        self.G = G
        self.C = C
        self.const = const
        self.m, self.d = G.shape[0], G.shape[1]

    @classmethod
    def from_dataset(cls, dataset):
        check_dataset(dataset)
        c = dataset.corr_stack()
        const = 0.5 * sum(float(t.response @ t.response) ** 2 for t in dataset.tasks)
        return cls(dataset.gram_stack(), c.T @ c, const)

    def restrict(self, rows):
        """Loss of the problem where Omega is supported on ``rows`` only."""
        rows = np.asarray(rows, dtype=int)
        return GramLoss(self.G[:, rows][:, :, rows], self.C[np.ix_(rows, rows)], self.const)

    def hess(self, M):
        """``sum_l G_l M G_l`` for symmetric M."""
        S = np.flatnonzero(np.any(M != 0, axis=1))
        if S.size == 0:
            return np.zeros((self.d, self.d))
        GS = self.G[:, :, S]
        P = GS @ M[np.ix_(S, S)]
        left = P.transpose(1, 0, 2).reshape(self.d, -1)
        right = GS.transpose(1, 0, 2).reshape(self.d, -1)
        return left @ right.T

    def hess_factor(self, F):
        """``sum_l G_l F F^T G_l``."""
        if F.shape[1] == 0:
            return np.zeros((self.d, self.d))
        GF = (self.G @ F).transpose(1, 0, 2).reshape(self.d, -1)
        return GF @ GF.T

    def value(self, M):
        S = np.flatnonzero(np.any(M != 0, axis=1))
        if S.size == 0:
            return self.const
        MS = M[np.ix_(S, S)]
        if S.size == self.d:
            Q = self.G @ MS
        else:
            Q = self.G[:, S][:, :, S] @ MS
        quad = np.sum(Q * Q.transpose(0, 2, 1))
        return 0.5 * quad - np.sum(MS * self.C[np.ix_(S, S)]) + self.const

    def hess_psd(self, M):
        """``hess`` for PSD M, through a factor when M has low rank on its support."""
        S = np.flatnonzero(np.any(M != 0, axis=1))
        if S.size == 0:
            return np.zeros((self.d, self.d))
        w, U = np.linalg.eigh(M[np.ix_(S, S)])
        keep = w > psd_tolerance(w)
        if 2 * int(keep.sum()) >= S.size:
            return self.hess(M)
        F = np.zeros((self.d, int(keep.sum())))
        F[S] = U[:, keep] * np.sqrt(w[keep])
        # eigenvalues dropped as round-off are below tolerance, so this equals hess(M)
        # up to that tolerance
        return self.hess_factor(F)

    def value_from_hess(self, M, H):
        """Loss at M given ``H = hess(M)``."""
        return 0.5 * float(np.sum(M * H)) - float(np.sum(M * self.C)) + self.const

    def grad(self, M):
        return self.hess(M) - self.C

    def lipschitz_guess(self):
        # <e_j e_j^T, H(e_j e_j^T)>, a lower bound on the true constant;
        # backtracking raises it as needed.
        diag = np.einsum("ljj->lj", self.G)
        return max(float(np.max(np.sum(diag * diag, axis=0))), 1e-12)


def _row_shrink(V, thresh):
    norms = np.linalg.norm(V, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(norms > 0, 1.0 - thresh / norms, 0.0)
    return V * np.maximum(s, 0.0)[:, None]


def _psd_project(V):
    w, U = np.linalg.eigh(0.5 * (V + V.T))
    w = np.maximum(w, 0.0)
    return (U * w) @ U.T


def _group_prox_psd(V, thresh, tol=1e-8, max_inner=500):
    """Prox of ``sum_k thresh_k ||M_k||`` plus the PSD indicator, at symmetric ``V``.

    Proximal Dykstra alternation between row soft-thresholding and PSD
    projection, both exact. Rows that the shrink step zeroes at the end are
    cut from the PSD iterate (a principal submatrix, so it stays PSD).
    """
    x = V
    p = np.zeros_like(V)
    q = np.zeros_like(V)
    for _ in range(max_inner):
        y = _row_shrink(x + p, thresh)
        p = x + p - y
        x_new = _psd_project(y + q)
        q = y + q - x_new
        gap = np.linalg.norm(x_new - y)
        moved = np.linalg.norm(x_new - x)
        x = x_new
        if gap <= tol * max(np.linalg.norm(x), 1e-300) and moved <= tol * max(np.linalg.norm(x), 1e-300):
            break
    keep = np.any(y != 0, axis=1)
    out = np.zeros_like(V)
    out[np.ix_(keep, keep)] = x[np.ix_(keep, keep)]
    return out


def _check_psd(M):
    w = np.linalg.eigvalsh(M)
    if w.size and w.min() < -psd_tolerance(w):
        raise RuntimeError(f"PSD projection failed: smallest eigenvalue {w.min():.3e}")


def _mfista_group(loss, weights, x, L, rel_tol, max_iter, trace):
    """Monotone FISTA on one working set; appends to ``trace`` and returns (x, L, converged).

    The Hessian map is linear, so its value at the extrapolated point is
    combined from the values at the iterates rather than recomputed.
    """

    def penalty(M):
        return float(weights @ np.linalg.norm(M, axis=1))

    H_x = loss.hess_psd(x)
    F_x = loss.value_from_hess(x, H_x) + penalty(x)
    y, H_y, t_k = x.copy(), H_x, 1.0
    used = 0
    while used < max_iter:
        g = H_y - loss.C
        f_y = loss.value_from_hess(y, H_y)
        for _ in range(60):
            z = _group_prox_psd(y - g / L, weights / L)
            diff = z - y
            H_z = loss.hess_psd(z)
            f_z = loss.value_from_hess(z, H_z)
            if f_z <= f_y + np.sum(g * diff) + 0.5 * L * np.sum(diff * diff) + 1e-12 * abs(f_y):
                break
            L *= 2.0
        F_z = f_z + penalty(z)
        used += 1
        trace.iterations += 1
        x_prev, H_prev, F_prev = x, H_x, F_x
        if F_z <= F_x:
            x, H_x, F_x = z, H_z, F_z
        trace.objective_values.append(F_x)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
        a, b = t_k / t_next, (t_k - 1.0) / t_next
        y = x + a * (z - x) + b * (x - x_prev)
        H_y = H_x + a * (H_z - H_x) + b * (H_x - H_prev)
        t_k = t_next
        # scales: a first gradient step from zero moves by ||C|| / L and lowers
        # the loss by ||C||^2 / (2L); near-empty solutions are judged against these
        # the prox-gradient residual ||z - y|| is the optimality measure
        c_norm = np.linalg.norm(loss.C)
        f_scale = max(abs(F_x - loss.const), c_norm * c_norm / (2 * L), 1e-300)
        if not np.any(diff) or (
            F_prev - F_x <= rel_tol * f_scale
            and np.linalg.norm(diff) <= np.sqrt(rel_tol) * max(np.linalg.norm(x), c_norm / L, 1e-300)
        ):
            return x, L, True
    return x, L, False


def fit_partial_full(dataset, config, omega0=None, loss=None):
    """Full PSD covariance with a row-group penalty ``lam * sum_k gamma_k ||Omega_k||``.

    The objective minimized is half of the usual squared-Frobenius form, so
    ``lam`` matches the other estimators' scaling. Solved by monotone FISTA
    with backtracking; the proximal step (row-group shrinkage plus the PSD
    constraint) is computed by Dykstra splitting in :func:`_group_prox_psd`
    to a tolerance of 1e-8.

    Rows are handled with a working set: the problem is solved on the rows
    that can be nonzero, then rows whose gradient norm exceeds their penalty
    weight are added and the solve repeats until none remain.
    """
    loss = GramLoss.from_dataset(dataset) if loss is None else loss
    d = loss.d
    weights = float(config.lam) * config.gamma_for(d)
    x = np.zeros((d, d)) if omega0 is None else symmetrize(omega0, check=False)

    trace = SolveTrace(objective_values=[loss.value(x) + float(weights @ np.linalg.norm(x, axis=1))])
    work = np.flatnonzero(np.any(x != 0, axis=1) | (np.linalg.norm(loss.C, axis=1) > weights))
    L = loss.lipschitz_guess()
    converged = False
    while True:
        sub = loss.restrict(work)
        xw, L, converged = _mfista_group(
            sub, weights[work], x[np.ix_(work, work)], L, config.rel_tol,
            config.max_iter - trace.iterations, trace,
        )
        x = np.zeros((d, d))
        x[np.ix_(work, work)] = xw
        if trace.iterations >= config.max_iter:
            break
        outside = np.setdiff1d(np.arange(d), work)
        if outside.size == 0:
            break
        g = loss.grad(x)
        viol = outside[np.linalg.norm(g[outside], axis=1) > weights[outside] * (1 + 1e-9)]
        if viol.size == 0:
            break
        work = np.union1d(work, viol)
        converged = False
    trace.converged = converged
    _check_psd(x)
    trace.active_set_size = int(np.count_nonzero(np.any(x != 0, axis=1)))
    return FullCovariance(x), trace


def _trace_prox(V, thresh):
    """Eigenvalue soft-thresholding onto the PSD cone; returns (matrix, factor)."""
    w, U = np.linalg.eigh(0.5 * (V + V.T))
    w = np.maximum(w - thresh, 0.0)
    keep = w > 0
    F = U[:, keep] * np.sqrt(w[keep])
    return F @ F.T, F


def fit_diag_lowrank(dataset, config, init=None, loss=None, quad=None):
    """Nonnegative diagonal plus PSD low-rank covariance.

    Penalty ``lambda1 * sum(w) + lambda2 * tr(L)``. Each outer iteration
    solves the diagonal block exactly by coordinate descent with ``L`` fixed,
    then takes one backtracked proximal-gradient step on ``L`` with
    eigenvalue soft-thresholding. Both block updates are descent steps.
    """
    loss = GramLoss.from_dataset(dataset) if loss is None else loss
    quad = build_scc_quadratic(dataset) if quad is None else quad
    d = loss.d
    lam1, lam2 = float(config.lambda1), float(config.lambda2)
    if init is None:
        omega, F = np.zeros(d), np.zeros((d, 0))
    else:
        omega = np.array(init.sparse_part.omega, dtype=float)
        w, U = np.linalg.eigh(init.lowrank_part.matrix)
        keep = w > 0
        F = U[:, keep] * np.sqrt(w[keep])
    Lmat = F @ F.T

    def total(omega, Lmat):
        return loss.value(np.diag(omega) + Lmat) + lam1 * omega.sum() + lam2 * np.trace(Lmat)

    step_L = 1.0 / loss.lipschitz_guess()
    F_val = total(omega, Lmat)
    trace = SolveTrace(objective_values=[F_val])
    inner_tol = min(config.rel_tol, 1e-10)
    while trace.iterations < config.max_iter:
        F_prev = F_val
        lin = quad.corr_sq - np.diag(loss.hess_factor(F))
        omega, _ = nonneg_cd(
            quad.gram_sq, lin, np.full(d, lam1), rel_tol=inner_tol, max_iter=1000, omega0=omega
        )
        D = np.diag(omega)
        base = D + Lmat
        g = loss.hess(D) + loss.hess_factor(F) - loss.C
        f_base = loss.value(base)
        for _ in range(60):
            Z, F_new = _trace_prox(Lmat - step_L * g, step_L * lam2)
            diff = Z - Lmat
            f_new = loss.value(D + Z)
            if f_new <= f_base + np.sum(g * diff) + np.sum(diff * diff) / (2 * step_L) + 1e-12 * abs(f_base):
                break
            step_L *= 0.5
        cand = f_new + lam1 * omega.sum() + lam2 * np.trace(Z)
        cur = f_base + lam1 * omega.sum() + lam2 * np.trace(Lmat)
        if cand <= cur:
            Lmat, F = Z, F_new
            F_val = cand
        else:
            F_val = min(cur, F_prev)
        trace.iterations += 1
        trace.objective_values.append(F_val)
        if _decreased_enough(F_prev - loss.const, F_val - loss.const, config.rel_tol):
            trace.converged = True
            break
    omega = _snap(omega)
    Lmat = 0.5 * (Lmat + Lmat.T)
    w = np.linalg.eigvalsh(Lmat)
    rank = int(np.count_nonzero(w > psd_tolerance(w))) if w.size else 0
    trace.active_set_size = int(np.count_nonzero(omega))
    return DiagPlusLowRank(DiagonalCovariance(omega), FullCovariance(Lmat), rank), trace


ESTIMATORS = {
    "diagonal": fit_scc_diagonal,
    "trace": fit_scc_trace,
    "partial_full": fit_partial_full,
    "diag_lowrank": fit_diag_lowrank,
}


def fit_covariance(dataset, config, structure="diagonal"):
    try:
        fit = ESTIMATORS[structure]
    except KeyError:
        raise ValueError(f"unknown covariance structure {structure!r}; choose from {sorted(ESTIMATORS)}")
    return fit(dataset, config)


def fit_loo(dataset, exclude_task, config, structure="diagonal"):
    """Estimate Omega from every task except ``exclude_task``."""
    if dataset.m < 2:
        raise ValueError("leave-one-task-out needs at least two tasks")
    estimate, _ = fit_covariance(dataset.without(exclude_task), config, structure)
    return estimate
