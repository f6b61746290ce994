"""Synthetic benchmarks, metrics, hyper-parameter tuning and real-data evaluation."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import (
    GramLoss,
    build_scc_quadratic,
    fit_diag_lowrank,
    fit_partial_full,
    fit_scc_diagonal,
    fit_scc_trace,
    trace_weights,
)
from .model import CoefficientSet, MultiTaskDataset, SolverConfig
from .regression import (
    RankDeficientError,
    _per_task_lstsq,
    group_lasso_fit,
    group_lasso_lambda_max,
    ridge_all,
)

ROW_THRESHOLD = 1e-6
HOLDOUT_FRACTION = 0.2
GRID_POINTS = 20


@dataclass(frozen=True)
class SyntheticConfig:
    m: int = 30
    d: int = 256
    n: int = 150
    k: int = 50
    overlap_fraction: float = 1.0
    noise_variance: float = 0.1
    design_correlation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.d < 1:
            raise ValueError("m, n and d must be >= 1")
        if not 1 <= self.k <= self.d:
            raise ValueError(f"need 1 <= k <= d, got k={self.k}, d={self.d}")
        if not 0 <= self.overlap_fraction <= 1:
            raise ValueError("overlap_fraction must lie in [0, 1]")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be >= 0")
        if not 0 <= self.design_correlation < 1:
            raise ValueError("design_correlation must lie in [0, 1)")


@dataclass(frozen=True)
class GroundTruth:
    betas: np.ndarray
    shared_support: tuple
    per_task_support: tuple


def _equicorrelated_root(d, rho):
    C = (1 - rho) * np.eye(d) + rho * np.ones((d, d))
    w, V = np.linalg.eigh(C)
    return (V * np.sqrt(np.maximum(w, 0))) @ V.T


def generate_synthetic(config: SyntheticConfig):
    """Draw designs, jointly sparse Gaussian coefficients and noisy responses.

    All supports contain a common core of ``ceil(overlap * k)`` features; each
    task fills the rest of its ``k`` at random from the remaining features.
    """
    rng = np.random.default_rng(config.seed)
    m, d, n, k = config.m, config.d, config.n, config.k
    core_size = math.ceil(config.overlap_fraction * k)
    core = np.sort(rng.choice(d, size=core_size, replace=False))
    rest = np.setdiff1d(np.arange(d), core)
    rho = config.design_correlation
    root = _equicorrelated_root(d, rho) if rho > 0 else None
    sigma = math.sqrt(config.noise_variance)

    betas = np.zeros((m, d))
    supports, designs, responses = [], [], []
    for ell in range(m):
        extra = rng.choice(rest, size=k - core_size, replace=False)
        supp = np.sort(np.concatenate([core, extra]).astype(int))
        betas[ell, supp] = rng.standard_normal(k)
        X = rng.standard_normal((n, d))
        if root is not None:
            X = X @ root
        y = X @ betas[ell] + sigma * rng.standard_normal(n)
        supports.append(tuple(int(j) for j in supp))
        designs.append(X)
        responses.append(y)
    truth = GroundTruth(betas, tuple(int(j) for j in core), tuple(supports))
    return MultiTaskDataset.from_arrays(designs, responses), truth


# --- metrics ---------------------------------------------------------------


def _as_betas(x):
    if isinstance(x, (CoefficientSet, GroundTruth)):
        return np.asarray(x.betas)
    return np.asarray(x, dtype=float)


def normalized_l2_error(estimate, truth):
    """``||B_hat - B||_F / ||B||_F`` over the stacked (m, d) coefficients."""
    B_hat, B = _as_betas(estimate), _as_betas(truth)
    if B_hat.shape != B.shape:
        raise ValueError(f"shape mismatch {B_hat.shape} vs {B.shape}")
    denom = np.linalg.norm(B)
    if denom == 0:
        raise ValueError("true coefficients are all zero; normalized error undefined")
    return float(np.linalg.norm(B_hat - B) / denom)


def per_task_l2_error(estimate, truth):
    """Mean over tasks of ``||b_hat - b|| / ||b||``, skipping tasks whose truth is zero."""
    B_hat, B = _as_betas(estimate), _as_betas(truth)
    if B_hat.shape != B.shape:
        raise ValueError(f"shape mismatch {B_hat.shape} vs {B.shape}")
    norms = np.linalg.norm(B, axis=1)
    keep = norms > 0
    if not keep.any():
        raise ValueError("true coefficients are all zero; normalized error undefined")
    return float(np.mean(np.linalg.norm(B_hat - B, axis=1)[keep] / norms[keep]))


def selected_features(betas, threshold=ROW_THRESHOLD):
    """Boolean mask of feature rows whose norm exceeds ``threshold`` times the largest."""
    norms = np.linalg.norm(_as_betas(betas), axis=0)
    top = norms.max() if norms.size else 0.0
    if top == 0:
        return np.zeros(norms.shape, dtype=bool)
    return norms > threshold * top


def hamming_support_distance(estimate, truth):
    B_hat = _as_betas(estimate)
    selected = selected_features(B_hat)
    if isinstance(truth, GroundTruth):
        true_set = np.zeros(B_hat.shape[1], dtype=bool)
        true_set[list(truth.shared_support)] = True
    else:
        true_set = np.any(_as_betas(truth) != 0, axis=0)
    if true_set.shape != selected.shape:
        raise ValueError("shape mismatch between estimate and truth")
    return int(np.count_nonzero(selected != true_set))


def prediction_mse(dataset, betas):
    """Squared prediction error pooled over all rows of all tasks."""
    B = _as_betas(betas)
    sq, count = 0.0, 0
    for t, b in zip(dataset.tasks, B):
        r = t.response - t.design @ b
        sq += float(r @ r)
        count += r.size
    return sq / max(count, 1)


def per_task_rmse(dataset, betas):
    B = _as_betas(betas)
    vals = [
        math.sqrt(float(np.mean((t.response - t.design @ b) ** 2)))
        for t, b in zip(dataset.tasks, B)
        if t.n > 0
    ]
    if not vals:
        raise ValueError("no task has evaluation rows")
    return float(np.mean(vals))


# --- methods ---------------------------------------------------------------
#
# A method exposes a penalty scale ``top(ds, cache)`` (the smallest value that
# selects nothing, or a natural unit) and ``fit(ds, cache, lam, warm)``.
# Tuning walks a descending geometric grid of fractions of ``top`` so the
# chosen fraction carries over from a training split to the full data.


class Method:
    name = ""
    lo_frac = 1e-3
    uses_ridge = True
    # consecutive worse grid points tolerated before the walk stops; None scans the whole grid
    patience = None

    def __init__(self, noise_variance, config, shared=None):
        self.ridge_lambda = noise_variance
        self.config = config
        self.shared = {} if shared is None else shared

    def prepare(self, ds):
        return {}

    def top(self, ds, cache):
        raise NotImplementedError

    def fixed_lambda(self, ds, value):
        """Absolute penalty for ``--lambda fixed:value`` (value is noise-variance-like)."""
        return value * float(np.mean(trace_weights(ds)))

    def fit(self, ds, cache, lam, warm):
        raise NotImplementedError


class SccMethod(Method):
    name = "scc"
    lo_frac = 1e-3

    def prepare(self, ds):
        return {"quad": build_scc_quadratic(ds)}

    def top(self, ds, cache):
        return float(max(cache["quad"].corr_sq.max(), 0.0))

    def fit(self, ds, cache, lam, warm):
        est, _ = fit_scc_diagonal(ds, replace(self.config, lam=lam), quad=cache["quad"], omega0=warm)
        return ridge_all(ds, est, self.ridge_lambda), np.array(est.omega)


class TraceMethod(SccMethod):
    name = "trace"

    def top(self, ds, cache):
        tw = trace_weights(ds)
        b = cache["quad"].corr_sq
        ratio = np.divide(b, tw, out=np.zeros_like(b), where=tw > 0)
        return float(max(ratio.max(), 0.0))

    def fixed_lambda(self, ds, value):
        return value

    def fit(self, ds, cache, lam, warm):
        est, _ = fit_scc_trace(ds, replace(self.config, lam=lam), quad=cache["quad"], omega0=warm)
        return ridge_all(ds, est, self.ridge_lambda), np.array(est.omega)


class GroupLassoMethod(Method):
    name = "gl"
    uses_ridge = False

    def top(self, ds, cache):
        return group_lasso_lambda_max(ds)

    def fixed_lambda(self, ds, value):
        return math.sqrt(value * ds.m)

    def _gl(self, ds, lam, warm):
        # gl and glsls walk the same path; share the fits between them
        key = (id(ds), lam)
        hit = self.shared.get(key)
        if hit is None or hit[0] is not ds:
            hit = (ds, group_lasso_fit(ds, lam, self.config, init=warm))
            self.shared[key] = hit
        return hit[1]

    def fit(self, ds, cache, lam, warm):
        res = self._gl(ds, lam, warm)
        return res.coefficients, np.array(res.coefficients.betas)


class GlsLsMethod(GroupLassoMethod):
    name = "glsls"

    def fit(self, ds, cache, lam, warm):
        B = self._gl(ds, lam, warm).coefficients.betas
        S = np.flatnonzero(np.any(B != 0, axis=0))
        refit = _per_task_lstsq(ds, S)
        if refit is None:
            raise RankDeficientError(f"{S.size} selected features exceed the rank of a task's design")
        return CoefficientSet(refit), np.array(B)


class PartialFullMethod(Method):
    name = "pfc"
    lo_frac = 1e-2
    # fits slow down sharply as the support grows past the optimum
    patience = 3

    def prepare(self, ds):
        return {"loss": GramLoss.from_dataset(ds)}

    def top(self, ds, cache):
        gamma = self.config.gamma_for(ds.d)
        return float(np.max(np.linalg.norm(cache["loss"].C, axis=1) / gamma))

    def fit(self, ds, cache, lam, warm):
        est, _ = fit_partial_full(ds, replace(self.config, lam=lam), omega0=warm, loss=cache["loss"])
        return ridge_all(ds, est, self.ridge_lambda), np.array(est.matrix)


class DiagLowRankMethod(Method):
    """Diagonal plus low-rank. The diagonal weight is a fraction of the scc scale
    (``lambda1_frac``, set by tuning scc first); the grid runs over the trace weight."""

    name = "dlr"
    lambda1_frac = None

    def prepare(self, ds):
        quad = build_scc_quadratic(ds)
        frac = self.lambda1_frac if self.lambda1_frac is not None else 0.0
        return {"quad": quad, "loss": GramLoss.from_dataset(ds), "lambda1": frac * float(quad.corr_sq.max())}

    def top(self, ds, cache):
        est, _ = fit_scc_diagonal(ds, replace(self.config, lam=cache["lambda1"]), quad=cache["quad"])
        loss = cache["loss"]
        resid = loss.C - loss.hess(np.diag(est.omega))
        return float(max(np.linalg.eigvalsh(0.5 * (resid + resid.T))[-1], 0.0))

    def fit(self, ds, cache, lam, warm):
        cfg = replace(self.config, lambda1=cache["lambda1"], lambda2=lam)
        est, _ = fit_diag_lowrank(ds, cfg, init=warm, loss=cache["loss"], quad=cache["quad"])
        return ridge_all(ds, est, self.ridge_lambda), est


METHODS = {
    cls.name: cls
    for cls in (SccMethod, TraceMethod, GroupLassoMethod, GlsLsMethod, PartialFullMethod, DiagLowRankMethod)
}

METHOD_LABELS = {
    "scc": "Sparse diagonal covariance",
    "trace": "Sparse diagonal covariance (trace)",
    "gl": "Standard group lasso",
    "glsls": "GLS-LS",
    "pfc": "Partial full covariance",
    "dlr": "Diag+low-rank covariance",
    "ols": "Per-task least squares",
}


def _dataset_from_rows(dataset, rows):
    return MultiTaskDataset(
        tuple(type(t)(t.design[r], t.response[r]) for t, r in zip(dataset.tasks, rows)),
        dataset.dimension,
    )


def holdout_split(dataset, fraction, rng):
    """Hold out ``fraction`` of every task's rows; returns ``(train, validation)``."""
    train_rows, val_rows = [], []
    for t in dataset.tasks:
        idx = rng.permutation(t.n)
        n_val = min(max(1, int(round(fraction * t.n))), t.n - 1) if t.n > 1 else 0
        val_rows.append(np.sort(idx[:n_val]))
        train_rows.append(np.sort(idx[n_val:]))
    return _dataset_from_rows(dataset, train_rows), _dataset_from_rows(dataset, val_rows)


def kfold_splits(dataset, folds, rng):
    perms = [np.array_split(rng.permutation(t.n), folds) for t in dataset.tasks]
    out = []
    for f in range(folds):
        val = [np.sort(chunks[f]) for chunks in perms]
        train = [np.sort(np.concatenate([c for i, c in enumerate(chunks) if i != f])) for chunks in perms]
        out.append((_dataset_from_rows(dataset, train), _dataset_from_rows(dataset, val)))
    return out


def fraction_grid(lo_frac, points=GRID_POINTS):
    return np.geomspace(1.0, lo_frac, points)


def path_errors(method, train, val, fractions, patience=None):
    """Validation error along the descending grid, with optional early stopping.

    The walk stops after ``patience`` consecutive points worse than the best
    seen, counted only once some nonzero model has beaten the empty one.
    Infeasible fits (rank-deficient refits) score ``inf``. Returns the errors
    and the solver state at each visited point (for warm starts).
    """
    cache = method.prepare(train)
    scale = method.top(train, cache)
    errors = np.full(len(fractions), np.inf)
    states = [None] * len(fractions)
    baseline = prediction_mse(val, np.zeros((val.m, val.d)))
    warm, best, bad = None, np.inf, 0
    for i, frac in enumerate(fractions):
        try:
            coef, warm = method.fit(train, cache, float(frac * scale), warm)
        except RankDeficientError:
            coef = None
        states[i] = warm
        if coef is not None:
            errors[i] = prediction_mse(val, coef)
        if errors[i] < best:
            best, bad = errors[i], 0
        elif best < baseline:
            bad += 1
            if patience is not None and bad >= patience:
                break
    return errors, states


def tune_fraction(method, splits, points=GRID_POINTS, patience="method"):
    """Best grid fraction by summed validation error; returns (fraction, errors, state)."""
    if patience == "method":
        patience = method.patience
    fractions = fraction_grid(method.lo_frac, points)
    total = np.zeros(points)
    first_states = None
    for train, val in splits:
        errors, states = path_errors(method, train, val, fractions, patience)
        total += errors
        first_states = states if first_states is None else first_states
    if not np.isfinite(total).any():
        raise RankDeficientError(f"{method.name}: no feasible value on the tuning grid")
    i = int(np.argmin(total))
    return float(fractions[i]), total, first_states[i]


def make_splits(dataset, folds, rng):
    if folds > 1:
        return kfold_splits(dataset, folds, rng)
    return [holdout_split(dataset, HOLDOUT_FRACTION, rng)]


def fit_method(name, dataset, noise_variance, lambda_mode="cv", folds=1, rng=None,
               config=None, points=GRID_POINTS, patience="method", shared=None, splits=None):
    """Tune (or fix) one method's penalty, then fit it on all of ``dataset``.

    Returns ``(CoefficientSet, absolute_penalty)``. Pass the same ``splits``
    and ``shared`` dict to several calls to reuse tuning splits and fits.
    """
    if name == "ols":
        B = np.stack([np.linalg.lstsq(t.design, t.response, rcond=None)[0] for t in dataset.tasks])
        return CoefficientSet(B), 0.0
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS) + ['ols']}")
    config = SolverConfig(rel_tol=1e-8, max_iter=2000) if config is None else config
    method = METHODS[name](noise_variance, config, shared)
    if lambda_mode == "cv":
        if splits is None:
            rng = np.random.default_rng(config.seed) if rng is None else rng
            splits = make_splits(dataset, folds, rng)
        if name == "dlr":
            method.lambda1_frac = tune_fraction(
                SccMethod(noise_variance, config), splits, points, patience
            )[0]
        frac, _, warm = tune_fraction(method, splits, points, patience)
        cache = method.prepare(dataset)
        lam = frac * method.top(dataset, cache)
    else:
        value = parse_lambda_mode(lambda_mode)
        warm = None
        if name == "dlr":
            method.lambda1_frac = 0.0
        cache = method.prepare(dataset)
        lam = method.fixed_lambda(dataset, value)
        if name == "dlr":
            cache["lambda1"] = SccMethod(noise_variance, config).fixed_lambda(dataset, value)
    coef, _ = method.fit(dataset, cache, lam, warm)
    return coef, float(lam)


def parse_lambda_mode(mode):
    """``"cv"`` or ``"fixed:<v>"``; returns the fixed value (or None for cv)."""
    if mode == "cv":
        return None
    if isinstance(mode, (int, float)):
        value = float(mode)
    elif isinstance(mode, str) and mode.startswith("fixed:"):
        try:
            value = float(mode.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad lambda mode {mode!r}; expected 'cv' or 'fixed:<number>'") from None
    else:
        raise ValueError(f"bad lambda mode {mode!r}; expected 'cv' or 'fixed:<number>'")
    if not (value >= 0 and math.isfinite(value)):
        raise ValueError("fixed lambda must be finite and >= 0")
    return value


# --- aggregation -----------------------------------------------------------


@dataclass
class MetricsRow:
    method: str
    normalized_l2: float = float("nan")
    normalized_l2_std: float = float("nan")
    normalized_l2_task: float = float("nan")
    hamming: float = float("nan")
    hamming_std: float = float("nan")
    rmse: float = float("nan")
    rmse_std: float = float("nan")
    runs: int = 0
    failures: int = 0
    k: int | None = None
    lambda_mode: str = "cv"
    per_run: list = field(default_factory=list)

    def to_dict(self):
        return {
            "method": self.method,
            "label": METHOD_LABELS.get(self.method, self.method),
            "k": self.k,
            "normalized_l2": self.normalized_l2,
            "normalized_l2_std": self.normalized_l2_std,
            "normalized_l2_task": self.normalized_l2_task,
            "hamming": self.hamming,
            "hamming_std": self.hamming_std,
            "rmse": self.rmse,
            "rmse_std": self.rmse_std,
            "runs": self.runs,
            "failures": self.failures,
            "lambda_mode": self.lambda_mode,
            "per_run": self.per_run,
        }


def _mean_std(values):
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def aggregate(method, records, k=None, lambda_mode="cv"):
    ok = [r for r in records if r.get("error") is None]
    row = MetricsRow(method, runs=len(ok), failures=len(records) - len(ok), k=k,
                     lambda_mode=lambda_mode, per_run=list(records))
    row.normalized_l2, row.normalized_l2_std = _mean_std(r.get("normalized_l2") for r in ok)
    row.normalized_l2_task, _ = _mean_std(r.get("normalized_l2_task") for r in ok)
    row.hamming, row.hamming_std = _mean_std(r.get("hamming") for r in ok)
    row.rmse, row.rmse_std = _mean_std(r.get("rmse") for r in ok)
    return row


def run_seeds(master_seed, run):
    """(data seed, tuning seed) for one run, independent of execution order."""
    data_seed, tune_seed = np.random.SeedSequence([master_seed, run]).generate_state(2)
    return int(data_seed), int(tune_seed)


def benchmark_run(config, methods, run, cv_folds=1, lambda_mode="cv", points=GRID_POINTS):
    """Generate one synthetic draw and score every method on it."""
    data_seed, tune_seed = run_seeds(config.seed, run)
    dataset, truth = generate_synthetic(replace(config, seed=data_seed))
    shared = {}
    splits = make_splits(dataset, cv_folds, np.random.default_rng(tune_seed))
    out = []
    for name in methods:
        rec = {"run": run, "method": name, "k": config.k, "error": None}
        try:
            coef, lam = fit_method(
                name, dataset, config.noise_variance, lambda_mode, cv_folds,
                points=points, shared=shared, splits=splits,
            )
        except (RankDeficientError, np.linalg.LinAlgError, RuntimeError) as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
        else:
            rec.update(
                penalty=lam,
                normalized_l2=normalized_l2_error(coef, truth),
                normalized_l2_task=per_task_l2_error(coef, truth),
                hamming=hamming_support_distance(coef, truth),
            )
        out.append(rec)
    return out


def _run_star(args):
    return benchmark_run(*args)


def run_benchmark(config: SyntheticConfig, methods, runs=20, cv_folds=1, lambda_mode="cv",
                  workers=1, points=GRID_POINTS):
    """Score ``methods`` over ``runs`` independent draws; one MetricsRow per method.

    Each run derives its seeds from ``(config.seed, run)``, so serial and
    parallel execution give identical results.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    methods = list(methods)
    for name in methods:
        if name not in METHODS:
            raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS)}")
    parse_lambda_mode(lambda_mode)
    jobs = [(config, methods, r, cv_folds, lambda_mode, points) for r in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_star, jobs))
    else:
        results = [_run_star(j) for j in jobs]
    flat = [rec for recs in results for rec in recs]
    return [
        aggregate(name, [r for r in flat if r["method"] == name], config.k, str(lambda_mode))
        for name in methods
    ]


# --- real data -------------------------------------------------------------


def split_rows(dataset, split):
    """Leading rows of each task train, the rest test.

    ``split`` below 1 is a fraction (``ceil(split * n)`` rows), an integer
    above 1 a row count, and ``1`` or ``"all"`` trains and tests on every row.
    """
    if split == "all":
        return dataset, dataset
    try:
        split = float(split)
    except (TypeError, ValueError):
        raise ValueError(f"bad split {split!r}; expected a fraction, a row count or 'all'") from None
    if split == 1:
        return dataset, dataset
    if not (0 < split < 1 or (split > 1 and split.is_integer())):
        raise ValueError("split must be a fraction in (0, 1), an integer row count, 1 or 'all'")
    train, test = [], []
    for t in dataset.tasks:
        cut = math.ceil(split * t.n) if split < 1 else int(split)
        cut = min(max(1, cut), t.n)
        train.append(np.arange(cut))
        test.append(np.arange(cut, t.n))
    return _dataset_from_rows(dataset, train), _dataset_from_rows(dataset, test)


def run_realdata(manifest_path, methods, split_spec=0.75, lambda_mode="cv", noise_variance=1.0,
                 standardize=False, seed=0, points=GRID_POINTS):
    """Train on the leading rows of each task, report per-task-averaged test RMSE."""
    from .io import load_manifest

    dataset = load_manifest(manifest_path, standardize=standardize)
    train, test = split_rows(dataset, split_spec)
    parse_lambda_mode(lambda_mode)
    rows = []
    for name in methods:
        rec = {"method": name, "error": None}
        try:
            coef, lam = fit_method(
                name, train, noise_variance, lambda_mode, rng=np.random.default_rng(seed), points=points
            )
        except (RankDeficientError, np.linalg.LinAlgError, RuntimeError) as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
        else:
            rec.update(penalty=lam, rmse=per_task_rmse(test, coef))
        rows.append(aggregate(name, [rec], lambda_mode=str(lambda_mode)))
    return rows


# --- rendering -------------------------------------------------------------


def render_table(rows, metric="normalized_l2"):
    """Text table with one line per method and one column per k."""
    ks = sorted({r.k for r in rows}, key=lambda k: (k is None, k))
    names = list(dict.fromkeys(r.method for r in rows))
    labels = [METHOD_LABELS.get(n, n) for n in names]
    width = max([len(s) for s in labels] + [6])
    header = f"{'method':<{width}}" + "".join(f"  {('k=' + str(k)) if k is not None else metric:>18}" for k in ks)
    lines = [header, "-" * len(header)]
    for name, label in zip(names, labels):
        cells = []
        for k in ks:
            hit = [r for r in rows if r.method == name and r.k == k]
            if not hit:
                cells.append(f"  {'':>18}")
                continue
            r = hit[0]
            mean, std = getattr(r, metric), getattr(r, metric + "_std", float("nan"))
            text = "failed" if not math.isfinite(mean) else f"{mean:.4f} ± {std:.4f}"
            cells.append(f"  {text:>18}")
        lines.append(f"{label:<{width}}" + "".join(cells))
    return "\n".join(lines)
