"""Closed-form ridge teacher/student estimators and their error decomposition.

A teacher solves an L2-regularized least-squares problem on noisy labels; a
student re-solves it on a xi-weighted mix of the teacher's predictions and
the original labels.  Both solutions are closed-form, and the expected
estimation error splits into an exact squared-bias term and a variance term,
each an explicit function of the design spectrum, the penalty ``lam`` and
the imitation weight ``xi``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_X_y

from . import seeding
from .exceptions import InvalidInputError
from .validation import as_float_array, nonnegative_scalar, positive_scalar, require

_MC_STREAM = 0xD1CE


@dataclass(frozen=True)
class SpectralDesign:
    """Spectrum of a design matrix plus the signal's projections onto it.

    ``sigma`` holds the positive singular values in non-increasing order,
    ``signal`` the inner products of the ground-truth parameter with the
    corresponding left singular vectors, and ``null_mass`` the squared norm
    of the parameter component lying outside the column span (unrecoverable
    by any estimator).  ``dim`` is the ambient dimension.
    """

    sigma: np.ndarray
    signal: np.ndarray
    null_mass: float = 0.0
    dim: int | None = None

    def __post_init__(self):
        sigma = as_float_array(self.sigma, "sigma", ndim=1)
        signal = as_float_array(self.signal, "signal", ndim=1)
        require(sigma.size > 0, "sigma must be non-empty")
        require(sigma.size == signal.size, "sigma and signal must have equal length")
        require(bool(np.all(sigma > 0)), "singular values must be strictly positive")
        require(bool(np.all(np.diff(sigma) <= 0)), "singular values must be non-increasing")
        null_mass = nonnegative_scalar(self.null_mass, "null_mass")
        dim = self.dim if self.dim is not None else sigma.size
        require(int(dim) >= sigma.size, "ambient dimension must be at least the rank")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "signal", signal)
        object.__setattr__(self, "null_mass", null_mass)
        object.__setattr__(self, "dim", int(dim))

    @property
    def rank(self) -> int:
        return self.sigma.size

    @property
    def theta_sq(self) -> np.ndarray:
        """Squared signal projections, one per retained singular value."""
        return self.signal**2

    @property
    def signal_norm_sq(self) -> float:
        return float(np.sum(self.signal**2) + self.null_mass)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-coordinate label-noise variance."""

    gamma_sq: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "gamma_sq", nonnegative_scalar(self.gamma_sq, "gamma_sq"))


@dataclass(frozen=True)
class DenseRidgeProblem:
    """An explicit ridge instance: features (d x n), truth, noise level, penalty.

    ``seed`` drives the noise draws in :func:`mc_expected_error` and
    :meth:`sample_labels`; the same seed always reproduces the same labels.
    """

    X: np.ndarray
    theta_star: np.ndarray
    gamma: float
    lam: float
    seed: int = 0

    def __post_init__(self):
        X = as_float_array(self.X, "X", ndim=2)
        theta = as_float_array(self.theta_star, "theta_star", ndim=1)
        require(X.shape[0] == theta.size, "theta_star length must match the feature dimension")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "gamma", nonnegative_scalar(self.gamma, "gamma"))
        object.__setattr__(self, "lam", positive_scalar(self.lam, "lam"))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]

    def noiseless_labels(self) -> np.ndarray:
        return self.X.T @ self.theta_star

    def sample_labels(self, draw: int = 0) -> np.ndarray:
        """Draw labels X'theta* + eta with eta ~ N(0, gamma^2) per coordinate."""
        rng = seeding.stream(self.seed, _MC_STREAM, draw)
        return self.noiseless_labels() + self.gamma * rng.standard_normal(self.n_samples)


def design_from_matrix(X, theta_star, rank_tol: float = 1e-12) -> SpectralDesign:
    """Build the spectral view of a dense problem.

    Singular values below ``rank_tol`` times the largest are treated as
    numerical rank deficiency: their signal projections are folded into
    ``null_mass`` together with the true null-space component.
    """
    X = as_float_array(X, "X", ndim=2)
    theta_star = as_float_array(theta_star, "theta_star", ndim=1)
    require(X.shape[0] == theta_star.size, "theta_star length must match the feature dimension")
    u, s, _ = np.linalg.svd(X, full_matrices=False)
    keep = s > rank_tol * s[0]
    signal = u[:, keep].T @ theta_star
    null_mass = float(theta_star @ theta_star - signal @ signal)
    return SpectralDesign(
        sigma=s[keep], signal=signal, null_mass=max(null_mass, 0.0), dim=X.shape[0]
    )


def _gram_solve(problem: DenseRidgeProblem, rhs: np.ndarray) -> np.ndarray:
    """Solve (X X' + lam I) z = rhs through a Cholesky factorization."""
    gram = problem.X @ problem.X.T
    gram[np.diag_indices_from(gram)] += problem.lam
    return cho_solve(cho_factor(gram, lower=True), rhs)


def teacher_fit(problem: DenseRidgeProblem, Y) -> np.ndarray:
    """Closed-form ridge solution (X X' + lam I)^-1 X Y."""
    Y = as_float_array(Y, "Y", ndim=1)
    if Y.size != problem.n_samples:
        raise InvalidInputError(
            f"Y has {Y.size} entries but the problem has {problem.n_samples} samples"
        )
    return _gram_solve(problem, problem.X @ Y)


def student_fit(problem: DenseRidgeProblem, Y, teacher, xi: float) -> np.ndarray:
    """Distilled ridge solution xi*(X X' + lam I)^-1 X X' t + (1 - xi) t.

    ``teacher`` is the parameter whose predictions the student imitates;
    ``xi`` may be any real (values above 1 down-weight the labels
    negatively).  ``xi = 0`` returns the teacher unchanged.
    """
    teacher = as_float_array(teacher, "teacher", ndim=1)
    if teacher.size != problem.X.shape[0]:
        raise InvalidInputError(
            f"teacher has {teacher.size} entries but the features have "
            f"dimension {problem.X.shape[0]}"
        )
    Y = as_float_array(Y, "Y", ndim=1)
    if Y.size != problem.n_samples:
        raise InvalidInputError(
            f"Y has {Y.size} entries but the problem has {problem.n_samples} samples"
        )
    xi = float(xi)
    if xi == 0.0:
        return teacher.copy()
    smoothed = _gram_solve(problem, problem.X @ (problem.X.T @ teacher))
    return xi * smoothed + (1.0 - xi) * teacher


def student_fit_svd(X, theta_star, eta, lam: float, xi: float) -> np.ndarray:
    """Student solution reconstructed mode-by-mode from the SVD of X.

    Independent route to the same estimate as chaining :func:`teacher_fit`
    and :func:`student_fit` on Y = X'theta* + eta; used to cross-check the
    dense linear algebra.
    """
    X = as_float_array(X, "X", ndim=2)
    theta_star = as_float_array(theta_star, "theta_star", ndim=1)
    eta = as_float_array(eta, "eta", ndim=1)
    lam = positive_scalar(lam, "lam")
    u, s, vt = np.linalg.svd(X, full_matrices=False)
    keep = s > 0
    u, s, vt = u[:, keep], s[keep], vt[keep]
    shrink = lam / (lam + s**2)
    coef = (u.T @ theta_star) * (1.0 - shrink) + (vt @ eta) * s / (lam + s**2)
    return u @ (coef * (1.0 - xi * shrink))


def bias_sq(design: SpectralDesign, lam: float, xi: float) -> float:
    """Exact squared bias of the student estimate under mean-zero label noise."""
    lam = positive_scalar(lam, "lam")
    shrink = lam / (lam + design.sigma**2)
    gain = design.sigma**2 / (lam + design.sigma**2)
    terms = design.theta_sq * shrink**2 * (1.0 + float(xi) * gain) ** 2
    return float(np.sum(terms) + design.null_mass)


def variance(design: SpectralDesign, noise: NoiseSpec, lam: float, xi: float) -> float:
    """Exact variance of the student estimate w.r.t. the label noise."""
    lam = positive_scalar(lam, "lam")
    sig2 = design.sigma**2
    shrink = lam / (lam + sig2)
    terms = sig2 / (lam + sig2) ** 2 * (1.0 - float(xi) * shrink) ** 2
    return float(noise.gamma_sq * np.sum(terms))


def expected_error(design: SpectralDesign, noise: NoiseSpec, lam: float, xi: float) -> float:
    """Expected squared estimation error: squared bias plus variance."""
    return bias_sq(design, lam, xi) + variance(design, noise, lam, xi)


def mc_expected_error(problem: DenseRidgeProblem, xi: float, draws: int) -> tuple[float, float]:
    """Monte-Carlo estimate of the expected squared estimation error.

    Draws ``draws`` independent Gaussian noise vectors (the analytic error
    depends on the noise distribution only through its first two moments, so
    the Gaussian choice is free), forms the student estimate for each, and
    returns the mean and standard error of ||theta_hat - theta*||^2.
    Deterministic given ``problem.seed``.
    """
    draws = int(draws)
    if draws < 100:
        raise InvalidInputError(f"draws must be at least 100, got {draws}")
    if problem.gamma == 0.0:
        # every draw is identical, so evaluate once and report zero spread
        Y = problem.noiseless_labels()
        teacher = teacher_fit(problem, Y)
        student = student_fit(problem, Y, teacher, xi)
        return float(np.sum((student - problem.theta_star) ** 2)), 0.0
    rng = seeding.stream(problem.seed, _MC_STREAM)
    eta = problem.gamma * rng.standard_normal((problem.n_samples, draws))
    Y = problem.noiseless_labels()[:, None] + eta

    gram = problem.X @ problem.X.T
    gram[np.diag_indices_from(gram)] += problem.lam
    factor = cho_factor(gram, lower=True)
    teachers = cho_solve(factor, problem.X @ Y)
    xi = float(xi)
    if xi == 0.0:
        students = teachers
    else:
        smoothed = cho_solve(factor, problem.X @ (problem.X.T @ teachers))
        students = xi * smoothed + (1.0 - xi) * teachers

    errors = np.sum((students - problem.theta_star[:, None]) ** 2, axis=0)
    mean = float(np.mean(errors))
    stderr = float(np.std(errors, ddof=1) / np.sqrt(draws)) if draws > 1 else 0.0
    return mean, stderr


class RidgeTeacher(RegressorMixin, BaseEstimator):
    """L2-regularized least squares with the closed-form normal-equation solve.

    Parameters
    ----------
    alpha : float, default=1.0
        Penalty weight on the squared parameter norm (the ``lam`` of the
        functional interface).
    """

    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        problem = DenseRidgeProblem(
            X=X.T, theta_star=np.zeros(X.shape[1]), gamma=0.0, lam=self.alpha
        )
        self.coef_ = teacher_fit(problem, y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        if not hasattr(self, "coef_"):
            raise NotFittedError("fit must be called before predict")
        X = check_array(X)
        return X @ self.coef_


class SelfDistilledRidge(RegressorMixin, BaseEstimator):
    """Ridge teacher followed by a xi-weighted distilled refit.

    Fits the closed-form teacher, then the student that mixes the teacher's
    predictions (weight ``xi``) with the observed labels (weight ``1 - xi``)
    under the same penalty.  ``xi`` is unrestricted; ``xi = 0`` reproduces
    the teacher exactly.
    """

    def __init__(self, alpha: float = 1.0, xi: float = 1.0):
        self.alpha = alpha
        self.xi = xi

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        problem = DenseRidgeProblem(
            X=X.T, theta_star=np.zeros(X.shape[1]), gamma=0.0, lam=self.alpha
        )
        self.teacher_coef_ = teacher_fit(problem, y)
        self.coef_ = student_fit(problem, y, self.teacher_coef_, self.xi)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        if not hasattr(self, "coef_"):
            raise NotFittedError("fit must be called before predict")
        X = check_array(X)
        return X @ self.coef_
