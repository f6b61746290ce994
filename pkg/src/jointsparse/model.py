"""Domain types: multi-task datasets, covariance estimates, coefficients, configs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ._linalg import psd_tolerance, symmetrize


class DimensionError(ValueError):
    """Raised when a dataset or estimate has inconsistent shapes or values."""


class ConvergenceError(RuntimeError):
    """Raised where non-convergence is fatal (the solvers themselves only flag it)."""


def _frozen(a, ndim=None):
    a = np.array(a, dtype=float, copy=True)
    if ndim is not None and a.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TaskData:
    """One regression task: ``response ~ design @ beta + noise``."""

    design: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "design", _frozen(self.design, 2))
        object.__setattr__(self, "response", _frozen(self.response, 1))

    @property
    def n(self):
        return self.design.shape[0]


@dataclass(frozen=True)
class MultiTaskDataset:
    tasks: tuple
    dimension: Optional[int] = None

    def __post_init__(self):
        tasks = tuple(self.tasks)
        object.__setattr__(self, "tasks", tasks)
        if self.dimension is None and tasks:
            object.__setattr__(self, "dimension", tasks[0].design.shape[1])

    @classmethod
    def from_arrays(cls, designs, responses):
        if len(designs) != len(responses):
            raise DimensionError("need one response per design")
        return cls(tuple(TaskData(X, y) for X, y in zip(designs, responses)))

    @property
    def m(self):
        return len(self.tasks)

    @property
    def d(self):
        return self.dimension

    @property
    def designs(self):
        return [t.design for t in self.tasks]

    @property
    def responses(self):
        return [t.response for t in self.tasks]

    def subset(self, indices):
        return MultiTaskDataset(tuple(self.tasks[i] for i in indices), self.dimension)

    def without(self, task):
        if not 0 <= task < self.m:
            raise IndexError(f"task index {task} out of range for m={self.m}")
        return self.subset([i for i in range(self.m) if i != task])

    def gram_stack(self):
        """Per-task Gram matrices X^T X as an (m, d, d) array.

        Only valid when every task has the same d (checked by callers).
        """
        return np.stack([t.design.T @ t.design for t in self.tasks])

    def corr_stack(self):
        """Per-task X^T y as an (m, d) array."""
        return np.stack([t.design.T @ t.response for t in self.tasks])


def validate_dataset(dataset: MultiTaskDataset) -> list:
    """List every invariant violation of ``dataset``; an empty list means valid."""
    problems = []
    if dataset.m < 1:
        problems.append("empty dataset: need at least one task")
        return problems
    d = dataset.dimension
    for i, task in enumerate(dataset.tasks):
        X, y = task.design, task.response
        if X.shape[1] != d:
            problems.append(f"dimension mismatch: task {i} has {X.shape[1]} columns, expected {d}")
        if X.shape[0] != y.shape[0]:
            problems.append(
                f"row mismatch: task {i} design has {X.shape[0]} rows but response has {y.shape[0]}"
            )
        if not np.all(np.isfinite(X)):
            problems.append(f"non-finite value in design of task {i}")
        if not np.all(np.isfinite(y)):
            problems.append(f"non-finite value in response of task {i}")
    return problems


def check_dataset(dataset: MultiTaskDataset):
    problems = validate_dataset(dataset)
    if problems:
        raise DimensionError("; ".join(problems))
    return dataset


@dataclass(frozen=True)
class DiagonalCovariance:
    omega: np.ndarray

    def __post_init__(self):
        omega = _frozen(self.omega, 1)
        if not np.all(np.isfinite(omega)):
            raise DimensionError("non-finite value in omega")
        if np.any(omega < 0):
            raise DimensionError("omega must be nonnegative")
        object.__setattr__(self, "omega", omega)

    @property
    def d(self):
        return self.omega.shape[0]

    @property
    def support(self):
        return tuple(int(j) for j in np.flatnonzero(self.omega > 0))


@dataclass(frozen=True)
class FullCovariance:
    matrix: np.ndarray

    def __post_init__(self):
        M = symmetrize(_frozen(self.matrix, 2))
        if not np.all(np.isfinite(M)):
            raise DimensionError("non-finite value in covariance matrix")
        w = np.linalg.eigvalsh(M) if M.size else np.zeros(0)
        if w.size and w.min() < -psd_tolerance(w):
            raise DimensionError(f"matrix is not PSD (smallest eigenvalue {w.min():.3e})")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def d(self):
        return self.matrix.shape[0]

    @property
    def support(self):
        """Features whose row of the matrix is nonzero."""
        return tuple(int(j) for j in np.flatnonzero(np.abs(self.matrix).sum(axis=1) > 0))


@dataclass(frozen=True)
class DiagPlusLowRank:
    sparse_part: DiagonalCovariance
    lowrank_part: FullCovariance
    rank_estimate: int = 0

    def __post_init__(self):
        if self.sparse_part.d != self.lowrank_part.d:
            raise DimensionError("diagonal and low-rank parts disagree on d")

    @property
    def d(self):
        return self.sparse_part.d

    @property
    def support(self):
        return self.sparse_part.support


CovarianceEstimate = Union[DiagonalCovariance, FullCovariance, DiagPlusLowRank]


def covariance_as_matrix(estimate: CovarianceEstimate) -> np.ndarray:
    """Dense symmetric d x d matrix for any covariance estimate."""
    if isinstance(estimate, DiagonalCovariance):
        return np.diag(estimate.omega)
    if isinstance(estimate, FullCovariance):
        return np.array(estimate.matrix)
    if isinstance(estimate, DiagPlusLowRank):
        return np.diag(estimate.sparse_part.omega) + estimate.lowrank_part.matrix
    raise TypeError(f"not a covariance estimate: {type(estimate).__name__}")


@dataclass(frozen=True)
class CoefficientSet:
    """Per-task coefficient vectors, stacked as an (m, d) array."""

    betas: np.ndarray

    def __post_init__(self):
        B = _frozen(self.betas, 2)
        if not np.all(np.isfinite(B)):
            raise DimensionError("non-finite coefficient")
        object.__setattr__(self, "betas", B)

    @property
    def m(self):
        return self.betas.shape[0]

    @property
    def d(self):
        return self.betas.shape[1]

    @property
    def support(self):
        return tuple(int(j) for j in np.flatnonzero(np.any(self.betas != 0, axis=0)))


@dataclass(frozen=True)
class SolverConfig:
    """Regularization weights and stopping rules shared by all fits.

    ``lam`` is the covariance-step penalty (it plays the noise variance in the
    trace-regularized form), ``ridge_lambda`` the weight of the second step.
    """

    lam: float = 0.0
    ridge_lambda: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    gamma: Optional[Sequence[float]] = None
    rel_tol: float = 1e-8
    max_iter: int = 10_000
    seed: int = 0

    def __post_init__(self):
        for name in ("lam", "ridge_lambda", "lambda1", "lambda2"):
            v = getattr(self, name)
            if not (v >= 0 and np.isfinite(v)):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.gamma is not None:
            g = tuple(float(x) for x in self.gamma)
            if any(not x > 0 for x in g):
                raise ValueError("gamma entries must be > 0")
            object.__setattr__(self, "gamma", g)

    def gamma_for(self, d):
        if self.gamma is None:
            return np.ones(d)
        if len(self.gamma) != d:
            raise DimensionError(f"gamma has length {len(self.gamma)}, expected {d}")
        return np.asarray(self.gamma)


@dataclass
class SolveTrace:
    objective_values: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    active_set_size: int = 0

    @property
    def final_objective(self):
        return self.objective_values[-1] if self.objective_values else float("nan")

    def is_monotone(self, slack=1e-12):
        v = np.asarray(self.objective_values)
        if v.size < 2:
            return True
        return bool(np.all(np.diff(v) <= slack * np.maximum(1.0, np.abs(v[:-1]))))
