"""Numerical checks of the risk bounds, design conditions and identifiability quantities."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._linalg import psd_power, psd_tolerance
from .covariance import fit_loo
from .model import (
    DiagonalCovariance,
    DiagPlusLowRank,
    FullCovariance,
    MultiTaskDataset,
    SolverConfig,
    covariance_as_matrix,
)
from .regression import covariance_factor

EIG_FLOOR = 1e-12


def _as_matrix(x):
    if isinstance(x, np.ndarray):
        return np.asarray(x, dtype=float)
    return covariance_as_matrix(x)


# --- prediction-risk sandwich ---------------------------------------------


@dataclass
class BoundReport:
    mismatch_omega: float
    lower: float
    upper: float
    optimal_term: float
    optimal_term_upper: float
    mc_error_estimate: float
    mc_stderr: float
    exact_error: float
    optimal_trace: float
    simplified_upper: float
    sigma2: float
    lam: float
    trials: int

    @property
    def excess(self):
        """MC error minus the error of the oracle estimator."""
        return self.mc_error_estimate - self.optimal_term

    @property
    def exact_excess(self):
        return self.exact_error - self.optimal_term

    @property
    def sandwich_ok(self):
        # the two sides subtract different oracle terms; they coincide at lam = sigma2
        slack = 3 * self.mc_stderr
        return (
            self.lower - slack <= self.excess
            and self.mc_error_estimate - self.optimal_term_upper <= self.upper + slack
        )

    def message(self):
        if self.sandwich_ok:
            return "sandwich holds within 3 standard errors"
        upper_excess = self.mc_error_estimate - self.optimal_term_upper
        return (
            f"sandwich violated: need {self.lower:.6g} <= {self.excess:.6g} and "
            f"{upper_excess:.6g} <= {self.upper:.6g}, each +- 3*{self.mc_stderr:.3g}; "
            "rerun with more trials or another seed to rule out MC noise"
        )

    def to_dict(self):
        out = {k: v for k, v in self.__dict__.items()}
        out.update(excess=self.excess, exact_excess=self.exact_excess, sandwich_ok=self.sandwich_ok)
        return out


def mismatch_omega(design, omega_hat, omega_bar, lam):
    """``||X (Oh S + lam I)^-1 (Oh - Ob) S^1/2 (S^1/2 Ob S^1/2 + lam I)^-1/2||_F^2`` with S = X^T X."""
    X = np.asarray(design, dtype=float)
    Oh, Ob = _as_matrix(omega_hat), _as_matrix(omega_bar)
    S = X.T @ X
    d = S.shape[0]
    S_half = psd_power(S, 0.5)
    inner = psd_power(S_half @ Ob @ S_half + lam * np.eye(d), -0.5, floor=EIG_FLOOR)
    M = X @ np.linalg.solve(Oh @ S + lam * np.eye(d), (Oh - Ob) @ S_half @ inner)
    return float(np.sum(M * M))


def optimal_trace(design, omega_bar, lam):
    """``||X Ob^1/2 (Ob^1/2 S Ob^1/2 + lam I)^-1/2||_F^2``."""
    X = np.asarray(design, dtype=float)
    Ob = _as_matrix(omega_bar)
    d = Ob.shape[0]
    Ob_half = psd_power(Ob, 0.5)
    inner = psd_power(Ob_half @ X.T @ X @ Ob_half + lam * np.eye(d), -0.5, floor=EIG_FLOOR)
    M = X @ Ob_half @ inner
    return float(np.sum(M * M))


def exact_expected_error(design, omega_hat, omega_bar, lam, sigma2):
    """Closed-form ``E ||X beta_hat - X beta||^2`` under beta ~ N(0, Ob), noise N(0, sigma2 I).

    Uses ``beta_hat = Oh (S Oh + lam I)^-1 X^T y``, which equals the ridge with
    penalty ``lam * Oh^+`` and needs no pseudo-inverse.
    """
    X = np.asarray(design, dtype=float)
    Oh, Ob = _as_matrix(omega_hat), _as_matrix(omega_bar)
    S = X.T @ X
    d = S.shape[0]
    A = Oh @ np.linalg.solve(S @ Oh + lam * np.eye(d), X.T)
    bias = X @ (A @ X - np.eye(d))
    XA = X @ A
    return float(np.trace(bias @ Ob @ bias.T) + sigma2 * np.sum(XA * XA))


def monte_carlo_error(design, omega_hat, omega_bar, lam, sigma2, trials, seed, batch=20_000):
    """Simulated ``E ||X beta_hat - X beta||^2`` with the package's ridge solver form."""
    X = np.asarray(design, dtype=float)
    n, d = X.shape
    Ob = _as_matrix(omega_bar)
    Ob_half = psd_power(Ob, 0.5)
    F = covariance_factor(omega_hat if not isinstance(omega_hat, np.ndarray) else FullCovariance(omega_hat))
    XF = X @ F
    K = XF.T @ XF + lam * np.eye(F.shape[1])
    rng = np.random.default_rng(seed)
    total, total_sq, done = 0.0, 0.0, 0
    sigma = math.sqrt(sigma2)
    while done < trials:
        b = min(batch, trials - done)
        beta = rng.standard_normal((b, d)) @ Ob_half
        y = beta @ X.T + sigma * rng.standard_normal((b, n))
        if F.shape[1]:
            beta_hat = np.linalg.solve(K, XF.T @ y.T).T @ F.T
        else:
            beta_hat = np.zeros((b, d))
        r = (beta_hat - beta) @ X.T
        err = np.sum(r * r, axis=1)
        total += float(err.sum())
        total_sq += float(err @ err)
        done += b
    mean = total / trials
    var = max(total_sq / trials - mean * mean, 0.0) * trials / max(trials - 1, 1)
    return mean, math.sqrt(var / trials)


def thm41_bound_report(design, omega_hat, omega_bar, lam, sigma2, mc_trials=100_000, seed=0):
    """Risk of the ridge under a fixed covariance guess, sandwiched by the mismatch term.

    With ``T = optimal_trace`` and ``w = mismatch_omega``, for ``lam >= sigma2``
    the expected error E obeys ``sigma2*T + sigma2*lam*w <= E <= lam*T + lam^2*w``.
    ``lower = sigma2*lam*w`` bounds ``E - optimal_term`` (``optimal_term = sigma2*T``)
    from below and ``upper = lam^2*w`` bounds ``E - optimal_term_upper``
    (``= lam*T``) from above. At ``lam = sigma2`` both sides are equalities.
    """
    if not lam > 0 or not sigma2 > 0:
        raise ValueError("lam and sigma2 must be > 0")
    if lam < sigma2:
        raise ValueError("the bound needs lam >= sigma2")
    if mc_trials < 2:
        raise ValueError("need at least two Monte-Carlo trials")
    X = np.asarray(design, dtype=float)
    w = mismatch_omega(X, omega_hat, omega_bar, lam)
    T = optimal_trace(X, omega_bar, lam)
    mc, se = monte_carlo_error(X, omega_hat, omega_bar, lam, sigma2, mc_trials, seed)
    diff = X.T @ X @ (_as_matrix(omega_hat) - _as_matrix(omega_bar))
    return BoundReport(
        mismatch_omega=w,
        lower=sigma2 * lam * w,
        upper=lam * lam * w,
        optimal_term=sigma2 * T,
        optimal_term_upper=lam * T,
        mc_error_estimate=mc,
        mc_stderr=se,
        exact_error=exact_expected_error(X, omega_hat, omega_bar, lam, sigma2),
        optimal_trace=T,
        simplified_upper=lam * T + float(np.sum(diff * diff)) / lam,
        sigma2=float(sigma2),
        lam=float(lam),
        trials=int(mc_trials),
    )


def thm41_example(d=5):
    """Identity design with truth diag(1, 1, 0, ..) and guess diag(1.2, 0.8, 0.1, 0, ..)."""
    if d < 3:
        raise ValueError("the example needs d >= 3")
    bar = np.zeros(d)
    bar[:2] = 1.0
    hat = np.zeros(d)
    hat[:3] = (1.2, 0.8, 0.1)
    return np.eye(d), DiagonalCovariance(hat), DiagonalCovariance(bar)


# --- design conditions ----------------------------------------------------


@dataclass
class CoherenceReport:
    theta: float
    x_max_sq: float
    rho_min_t: float
    rho_max_gram: float
    condition_ok: bool
    s: int
    exact: bool
    rho_min_by_t: tuple = ()

    def to_dict(self):
        return dict(self.__dict__, rho_min_by_t=list(self.rho_min_by_t))


def _subset_min_eig(G, subsets):
    idx = np.asarray(subsets, dtype=int)
    blocks = G[idx[:, :, None], idx[:, None, :]]
    return float(np.linalg.eigvalsh(blocks)[:, 0].min())


def rho_min(design, t, exhaustive_limit=200_000, samples=20_000, seed=0, chunk=20_000):
    """Smallest Gram eigenvalue over column subsets of size ``t``; returns (value, exact).

    Smaller subsets are principal submatrices and cannot go lower (interlacing),
    so size exactly ``t`` gives the infimum over sizes up to ``t``. Beyond
    ``exhaustive_limit`` subsets a random sample gives an upper estimate.
    """
    X = np.asarray(design, dtype=float)
    d = X.shape[1]
    if not 1 <= t <= d:
        raise ValueError(f"need 1 <= t <= d, got t={t}, d={d}")
    G = X.T @ X
    if math.comb(d, t) <= exhaustive_limit:
        it = itertools.combinations(range(d), t)
        best = math.inf
        while True:
            block = list(itertools.islice(it, chunk))
            if not block:
                break
            best = min(best, _subset_min_eig(G, block))
        return best, True
    rng = np.random.default_rng(seed)
    subsets = np.array([np.sort(rng.choice(d, size=t, replace=False)) for _ in range(samples)])
    best = math.inf
    for start in range(0, samples, chunk):
        best = min(best, _subset_min_eig(G, subsets[start:start + chunk]))
    return best, False


def coherence_report(design, s, exhaustive_limit=200_000, samples=20_000, seed=0):
    X = np.asarray(design, dtype=float)
    d = X.shape[1]
    if not 1 <= s <= d:
        raise ValueError(f"need 1 <= s <= d, got s={s}, d={d}")
    G = X.T @ X
    off = np.abs(G - np.diag(np.diag(G)))
    theta = float(off.max()) if d > 1 else 0.0
    curve, exact = [], True
    for t in range(1, s + 1):
        val, ex = rho_min(X, t, exhaustive_limit, samples, seed)
        curve.append(val)
        exact = exact and ex
    # sampled estimates need not be monotone; report the running minimum
    curve = tuple(np.minimum.accumulate(curve).tolist())
    rho_s = curve[-1]
    rho_max = float(np.linalg.eigvalsh(G)[-1])
    ok = bool(rho_max > 0 and theta < rho_s * rho_s / (4 * rho_max * s))
    return CoherenceReport(theta, float(np.max(X * X)), rho_s, rho_max, ok, s, exact, curve)


# --- consistency trend ----------------------------------------------------


@dataclass
class ConsistencySweep:
    m_grid: tuple
    medians: tuple
    discrepancies: list  # per m, one best-over-lambda value per seed
    best_lambda_scale: list
    lambda_scales: tuple = ()

    @property
    def strictly_decreasing(self):
        return all(b < a for a, b in zip(self.medians, self.medians[1:]))

    def to_dict(self):
        return {
            "m_grid": list(self.m_grid),
            "medians": list(self.medians),
            "discrepancies": [list(v) for v in self.discrepancies],
            "best_lambda_scale": [list(v) for v in self.best_lambda_scale],
            "lambda_scales": list(self.lambda_scales),
            "strictly_decreasing": self.strictly_decreasing,
        }


DEFAULT_LAMBDA_SCALES = tuple(np.geomspace(1e-2, 10.0, 10).tolist())


def thm42_consistency_sweep(omega_bar, design, m_grid, seeds, config=None, sigma2=0.25,
                            lambda_scales=DEFAULT_LAMBDA_SCALES, structure="diagonal"):
    """Median of ``||X (Omega_hat - Omega_bar) X^T||_F^2`` over seeds, per task count.

    For each m and seed, tasks share ``design`` and draw ``beta ~ N(0, Omega_bar)``;
    the estimate leaves task 0 out. The penalty is ``c * (m - 1) * sigma2 *
    mean_j ||x_j||^2`` and the best ``c`` in ``lambda_scales`` is kept.
    """
    m_grid = tuple(int(m) for m in m_grid)
    if any(m < 2 for m in m_grid):
        raise ValueError("every m must be >= 2 for leave-one-task-out fits")
    if any(b <= a for a, b in zip(m_grid, m_grid[1:])):
        raise ValueError("m_grid must be strictly increasing")
    config = SolverConfig() if config is None else config
    X = np.asarray(design, dtype=float)
    n, d = X.shape
    Ob = _as_matrix(omega_bar)
    Ob_half = psd_power(Ob, 0.5)
    col_sq = float(np.mean(np.sum(X * X, axis=0)))
    sigma = math.sqrt(sigma2)
    medians, table, best_scales = [], [], []
    for m in m_grid:
        vals, picks = [], []
        for seed in seeds:
            rng = np.random.default_rng([int(seed), m])
            betas = rng.standard_normal((m, d)) @ Ob_half
            ys = betas @ X.T + sigma * rng.standard_normal((m, n))
            ds = MultiTaskDataset.from_arrays([X] * m, list(ys))
            best, pick = math.inf, None
            for c in lambda_scales:
                lam = c * (m - 1) * sigma2 * col_sq
                est = fit_loo(ds, 0, replace(config, lam=lam), structure)
                D = X @ (covariance_as_matrix(est) - Ob) @ X.T
                val = float(np.sum(D * D))
                if val < best:
                    best, pick = val, c
            vals.append(best)
            picks.append(pick)
        table.append(vals)
        best_scales.append(picks)
        medians.append(float(np.median(vals)))
    return ConsistencySweep(m_grid, tuple(medians), table, best_scales, tuple(lambda_scales))


def sparse_diagonal_truth(d, s, value=1.0):
    """``Omega_bar = value * diag(1, .., 1, 0, .., 0)`` with ``s`` leading ones."""
    omega = np.zeros(d)
    omega[:s] = value
    return DiagonalCovariance(omega)


# --- identifiability ------------------------------------------------------


@dataclass
class IdentifiabilityReport:
    alpha: float
    beta: float
    product: float
    identifiable: bool
    rank: int

    def to_dict(self):
        return dict(self.__dict__)


def identifiability_report(decomp: DiagPlusLowRank):
    """Sign-pattern spread of the sparse part and incoherence of the low-rank part.

    ``alpha`` is the larger of the max column and max row absolute sums of
    ``sign(Omega_S)``; ``beta = ||U U^T||_max + ||V V^T||_max + ||U||_2,inf ||V||_2,inf``
    with ``U = V`` the eigenvectors of the PSD low-rank part.
    """
    S = covariance_as_matrix(decomp.sparse_part)
    sign = np.sign(S)
    alpha = float(max(np.abs(sign).sum(axis=0).max(initial=0.0), np.abs(sign).sum(axis=1).max(initial=0.0)))
    L = np.asarray(decomp.lowrank_part.matrix)
    w, U = np.linalg.eigh(0.5 * (L + L.T))
    keep = w > psd_tolerance(w) if w.size else np.zeros(0, dtype=bool)
    U = U[:, keep]
    if U.shape[1] == 0:
        beta = 0.0
    else:
        P = U @ U.T
        row = float(np.max(np.linalg.norm(U, axis=1)))
        beta = 2 * float(np.max(np.abs(P))) + row * row
    product = alpha * beta
    return IdentifiabilityReport(alpha, beta, product, bool(product < 1), int(keep.sum()))


def identifiability_examples(d=16):
    """The shipped examples: diagonal only, axis-aligned rank one, flat rank one."""
    axis = np.zeros((d, d))
    axis[0, 0] = 1.0
    diag = DiagonalCovariance(np.arange(1, d + 1, dtype=float))
    return {
        "diagonal-only": DiagPlusLowRank(DiagonalCovariance([1.0, 2.0, 3.0]), FullCovariance(np.zeros((3, 3)))),
        "axis rank-1": DiagPlusLowRank(diag, FullCovariance(axis), 1),
        "flat rank-1": DiagPlusLowRank(diag, FullCovariance(np.ones((d, d)) / d), 1),
    }
