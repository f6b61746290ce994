"""Closed-form solutions for identity designs (the normal-means setting).

With ``X = I`` for every task all estimators decouple across coordinates.
Writing ``t_j = mean_l (y_j^(l))^2``:

* sparse covariance coding: ``w_j = max(0, t_j - lam)``
* two-step coefficients:    ``beta_j = y_j * max(0, 1 - lam / t_j)``
* group Lasso:              ``w_j = max(0, sqrt(lam t_j) - lam)``,
                            ``beta_j = y_j * max(0, 1 - sqrt(lam / t_j))``

The covariance-coding formula corresponds to the solver's penalty ``lam * m``
and the group-Lasso one to ``lambda_gl = sqrt(lam * m)``; the helpers below
return those solver settings so comparisons are exact.
"""

from dataclasses import dataclass

import numpy as np

from .model import MultiTaskDataset


@dataclass(frozen=True)
class NormalMeansInstance:
    responses: np.ndarray  # (m, d), row l is y^(l)
    sigma2: float
    lam: float

    def __post_init__(self):
        Y = np.array(self.responses, dtype=float)
        if Y.ndim != 2 or Y.shape[0] < 1:
            raise ValueError("responses must be an (m, d) array with m >= 1")
        if not np.all(np.isfinite(Y)):
            raise ValueError("responses must be finite")
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
        Y.setflags(write=False)
        object.__setattr__(self, "responses", Y)

    @property
    def m(self):
        return self.responses.shape[0]

    @property
    def d(self):
        return self.responses.shape[1]

    def mean_square(self):
        return np.mean(self.responses**2, axis=0)

    def to_dataset(self):
        eye = np.eye(self.d)
        return MultiTaskDataset.from_arrays([eye] * self.m, list(self.responses))

    def scc_penalty(self):
        """Solver penalty that matches :func:`scc_omega_closed_form`."""
        return self.lam * self.m

    def group_lasso_penalty(self):
        """Solver ``lambda_gl`` that matches :func:`group_lasso_closed_form`."""
        return float(np.sqrt(self.lam * self.m))


def _shrink(t, thresh):
    # max(0, 1 - thresh / t) with the t == 0 limit taken as 0
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(t > 0, 1.0 - thresh / t, 0.0)
    return np.maximum(f, 0.0)


def scc_omega_closed_form(instance):
    return np.maximum(0.0, instance.mean_square() - instance.lam)


def two_step_beta_closed_form(instance):
    return instance.responses * _shrink(instance.mean_square(), instance.lam)


def group_lasso_closed_form(instance):
    t = instance.mean_square()
    omega = np.maximum(0.0, np.sqrt(instance.lam * t) - instance.lam)
    root_t = np.sqrt(t)
    beta = instance.responses * _shrink(root_t, np.sqrt(instance.lam))
    return omega, beta


def random_instance(rng, m, d, sigma2=None, lam=None, omega_bar=None):
    """Draw an instance from the random-effects model with identity designs."""
    if omega_bar is None:
        omega_bar = rng.uniform(0.0, 2.0, size=d) * (rng.random(d) < 0.6)
    sigma2 = float(rng.uniform(0.05, 1.0)) if sigma2 is None else sigma2
    lam = sigma2 if lam is None else lam
    beta = rng.standard_normal((m, d)) * np.sqrt(omega_bar)
    y = beta + np.sqrt(sigma2) * rng.standard_normal((m, d))
    return NormalMeansInstance(y, sigma2, lam)


@dataclass
class OracleResult:
    name: str
    instances: int
    max_deviation: float
    tolerance: float

    @property
    def passed(self):
        return self.max_deviation <= self.tolerance

    def to_dict(self):
        return dict(self.__dict__, passed=self.passed)


def run_oracle_suite(instances=50, seed=0, max_m=20, max_d=10):
    """Compare the iterative solvers with the closed forms on random identity-design draws."""
    # imported here: the solvers are what is being checked, the formulas above stand alone
    from .covariance import fit_scc_diagonal
    from .model import SolverConfig
    from .regression import group_lasso_fit, two_step_fit

    rng = np.random.default_rng(seed)
    dev = {"scc": 0.0, "gl_omega": 0.0, "gl_beta": 0.0, "two_step": 0.0}
    for _ in range(instances):
        inst = random_instance(rng, int(rng.integers(1, max_m + 1)), int(rng.integers(1, max_d + 1)))
        ds = inst.to_dataset()
        cfg = SolverConfig(lam=inst.scc_penalty(), ridge_lambda=inst.lam, rel_tol=1e-14)
        est, _ = fit_scc_diagonal(ds, cfg)
        dev["scc"] = max(dev["scc"], float(np.max(np.abs(est.omega - scc_omega_closed_form(inst)))))
        fit = two_step_fit(ds, cfg)
        dev["two_step"] = max(
            dev["two_step"], float(np.max(np.abs(fit.coefficients.betas - two_step_beta_closed_form(inst))))
        )
        gl = group_lasso_fit(ds, inst.group_lasso_penalty(), SolverConfig(rel_tol=1e-14))
        w, b = group_lasso_closed_form(inst)
        dev["gl_omega"] = max(dev["gl_omega"], float(np.max(np.abs(gl.implied_omega - w))))
        dev["gl_beta"] = max(dev["gl_beta"], float(np.max(np.abs(gl.coefficients.betas - b))))
    tol = {"scc": 1e-8, "two_step": 1e-8, "gl_omega": 1e-6, "gl_beta": 1e-6}
    return [OracleResult(k, instances, v, tol[k]) for k, v in dev.items()]
