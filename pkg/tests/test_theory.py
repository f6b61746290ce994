import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jointsparse.model import DiagonalCovariance, DiagPlusLowRank, FullCovariance, SolverConfig
from jointsparse.theory import (
    coherence_report,
    exact_expected_error,
    identifiability_examples,
    identifiability_report,
    mismatch_omega,
    monte_carlo_error,
    optimal_trace,
    rho_min,
    sparse_diagonal_truth,
    thm41_bound_report,
    thm41_example,
    thm42_consistency_sweep,
)


def inv_sqrt(M):
    w, V = np.linalg.eigh(M)
    return (V / np.sqrt(w)) @ V.T


def sqrt_psd(M):
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(np.maximum(w, 0))) @ V.T


# --- risk sandwich --------------------------------------------------------


def test_quantities_match_direct_algebra():
    X, hat, bar = thm41_example()
    lam = 0.25
    Oh, Ob = np.diag(hat.omega), np.diag(bar.omega)
    S = X.T @ X
    M = X @ np.linalg.inv(Oh @ S + lam * np.eye(5)) @ (Oh - Ob) @ sqrt_psd(S)
    w_direct = np.sum((M @ inv_sqrt(sqrt_psd(S) @ Ob @ sqrt_psd(S) + lam * np.eye(5))) ** 2)
    assert mismatch_omega(X, hat, bar, lam) == pytest.approx(w_direct, rel=1e-12)
    # diagonal identity-design case: per-coordinate closed forms
    h, b = hat.omega, bar.omega
    assert w_direct == pytest.approx(np.sum((h - b) ** 2 / ((h + lam) ** 2 * (b + lam))), rel=1e-12)
    assert optimal_trace(X, bar, lam) == pytest.approx(np.sum(b / (b + lam)), rel=1e-12)


def test_exact_error_matches_identity_formula():
    X, hat, bar = thm41_example()
    lam, s2 = 0.25, 0.25
    h, b = hat.omega, bar.omega
    shrink = h / (h + lam)
    expected = np.sum((1 - shrink) ** 2 * b + shrink**2 * s2)
    assert exact_expected_error(X, hat, bar, lam, s2) == pytest.approx(expected, rel=1e-12)


def test_sandwich_on_example():
    X, hat, bar = thm41_example()
    r = thm41_bound_report(X, hat, bar, 0.25, 0.25, mc_trials=20_000, seed=2)
    assert r.sandwich_ok, r.message()
    assert r.lower == pytest.approx(r.upper)  # lam == sigma2
    assert r.exact_excess == pytest.approx(r.lower, rel=1e-10)
    assert r.exact_error <= r.simplified_upper


def test_exact_guess_has_zero_mismatch():
    X, _, bar = thm41_example()
    r = thm41_bound_report(X, bar, bar, 0.25, 0.25, mc_trials=20_000, seed=3)
    assert r.mismatch_omega == 0.0 and r.lower == 0.0 and r.upper == 0.0
    assert abs(r.excess) <= 3 * r.mc_stderr


def test_no_signal_no_error():
    X = np.eye(3)
    zero = DiagonalCovariance(np.zeros(3))
    r = thm41_bound_report(X, zero, zero, 0.5, 0.25, mc_trials=100, seed=0)
    assert r.optimal_term == 0.0 and r.mc_error_estimate == 0.0


def test_bound_argument_checks():
    X, hat, bar = thm41_example()
    with pytest.raises(ValueError):
        thm41_bound_report(X, hat, bar, 0.1, 0.25)
    with pytest.raises(ValueError):
        thm41_bound_report(X, hat, bar, 0.25, 0.0)
    with pytest.raises(ValueError):
        thm41_example(2)


@given(st.integers(1, 5), st.integers(1, 6), st.floats(1.0, 4.0), st.floats(0.05, 1.0), st.integers(0, 2**32 - 1))
def test_exact_error_obeys_bounds(d, n, ratio, s2, seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, d))
    A, B = r.standard_normal((d, d)), r.standard_normal((d, d))
    Oh, Ob = A @ A.T, B @ B.T * (r.random() < 0.8)
    lam = ratio * s2
    E = exact_expected_error(X, Oh, Ob, lam, s2)
    T, w = optimal_trace(X, Ob, lam), mismatch_omega(X, Oh, Ob, lam)
    tol = 1e-9 * (1 + abs(E))
    assert s2 * T + s2 * lam * w <= E + tol
    assert E <= lam * T + lam * lam * w + tol
    assert s2 * lam * w <= lam * lam * w + tol


def test_monte_carlo_is_deterministic_and_unbiased():
    X, hat, bar = thm41_example()
    a = monte_carlo_error(X, hat, bar, 0.25, 0.25, 30_000, seed=5)
    assert a == monte_carlo_error(X, hat, bar, 0.25, 0.25, 30_000, seed=5)
    exact = exact_expected_error(X, hat, bar, 0.25, 0.25)
    assert abs(a[0] - exact) <= 4 * a[1]


def test_report_upper_lower_ratio():
    X, hat, bar = thm41_example()
    r = thm41_bound_report(X, hat, bar, 0.75, 0.25, mc_trials=20_000, seed=1)
    assert r.upper / r.lower == pytest.approx(3.0, rel=1e-12)
    assert r.sandwich_ok, r.message()
    assert set(r.to_dict()) >= {"lower", "upper", "excess", "sandwich_ok"}


# --- coherence ------------------------------------------------------------


def test_orthonormal_design():
    Q = np.linalg.qr(np.random.default_rng(0).standard_normal((8, 5)))[0]
    rep = coherence_report(Q, 3)
    assert rep.theta == pytest.approx(0.0, abs=1e-12)
    assert rep.rho_min_t == pytest.approx(1.0) and rep.condition_ok and rep.exact


def test_duplicate_columns():
    x = np.random.default_rng(0).standard_normal(6)
    X = np.column_stack([x, x, np.random.default_rng(1).standard_normal(6)])
    rep = coherence_report(X, 2)
    assert rep.rho_min_t == pytest.approx(0.0, abs=1e-10) and not rep.condition_ok


def test_sampling_never_beats_enumeration():
    r = np.random.default_rng(0)
    X = r.choice([-1.0, 1.0], size=(64, 16)) / 8.0
    exact, is_exact = rho_min(X, 3)
    sampled, is_sampled_exact = rho_min(X, 3, exhaustive_limit=10, samples=2000, seed=1)
    assert is_exact and not is_sampled_exact
    assert sampled >= exact
    assert sampled == pytest.approx(exact, rel=0.1)
    with pytest.raises(ValueError):
        rho_min(X, 0)


# --- consistency ----------------------------------------------------------


def test_sweep_no_signal_stays_small():
    X = np.random.default_rng(0).standard_normal((8, 6))
    sweep = thm42_consistency_sweep(DiagonalCovariance(np.zeros(6)), X, (5, 20), range(3))
    assert max(sweep.medians) < 1e-6


def test_sweep_is_deterministic():
    X = np.random.default_rng(0).standard_normal((8, 6))
    truth = sparse_diagonal_truth(6, 2)
    a = thm42_consistency_sweep(truth, X, (5,), range(2))
    b = thm42_consistency_sweep(truth, X, (5,), range(2))
    assert a.to_dict() == b.to_dict()


def test_sweep_argument_checks():
    X = np.eye(3)
    with pytest.raises(ValueError):
        thm42_consistency_sweep(sparse_diagonal_truth(3, 1), X, (10, 5), [0])
    with pytest.raises(ValueError):
        thm42_consistency_sweep(sparse_diagonal_truth(3, 1), X, (1, 5), [0])


# --- identifiability ------------------------------------------------------


def test_shipped_examples():
    ex = identifiability_examples(16)
    reports = {k: identifiability_report(v) for k, v in ex.items()}
    assert all(r.alpha == 1.0 for r in reports.values())
    diag, axis, flat = reports["diagonal-only"], reports["axis rank-1"], reports["flat rank-1"]
    assert diag.beta == 0.0 and diag.identifiable and diag.rank == 0
    assert axis.beta == pytest.approx(3.0, abs=1e-10) and not axis.identifiable
    assert flat.beta == pytest.approx(3 / 16, abs=1e-10) and flat.identifiable
    assert flat.product == pytest.approx(3 / 16, abs=1e-10)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_alpha_is_one_for_nonzero_diagonals(d, seed):
    r = np.random.default_rng(seed)
    omega = r.uniform(0, 1, d) * (r.random(d) < 0.7)
    omega[r.integers(d)] = 1.0
    rep = identifiability_report(DiagPlusLowRank(DiagonalCovariance(omega), FullCovariance(np.zeros((d, d)))))
    assert rep.alpha == 1.0


def test_default_config_is_used():
    # a config without penalties still runs (the sweep sets lam itself)
    X = np.random.default_rng(0).standard_normal((6, 4))
    sweep = thm42_consistency_sweep(sparse_diagonal_truth(4, 1), X, (3,), [0], SolverConfig())
    assert len(sweep.medians) == 1
