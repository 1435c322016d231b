"""Coupled sigmoid stationarity systems for label-flipped binary classification.

Two balanced classes with orthogonal cross-class features and constant
within-class correlation ``c`` admit a two-variable reduction of the
L2-regularized logistic dual: one coordinate per (correctly labeled,
incorrectly labeled) group.  The teacher is fit on flipped hard labels, the
student on the teacher's soft predictions; each model's four group-wise soft
labels are affine in its dual pair, so accuracy, prediction variability and
the linearization residuals of the sigmoid all follow from the solved pairs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import root
from scipy.special import expit

from .exceptions import InconsistentSolutionError, SolverError
from .validation import positive_scalar, require

_MAX_ITER = 10_000


@dataclass(frozen=True)
class CorruptionSetting:
    """Problem size, flip fraction, feature correlation and scaled penalty.

    ``lambda_hat`` is the penalty scaled by twice the per-class count; the
    dimensionless ratio ``r`` it induces governs where the student beats the
    teacher.  ``p`` is continuous: only the product ``n * p`` enters the
    equations.
    """

    n: int
    p: float
    c: float
    lambda_hat: float

    def __post_init__(self):
        require(int(self.n) >= 1, "n must be a positive integer")
        require(0.0 <= float(self.p) < 0.5, "p must lie in [0, 0.5)")
        require(0.0 < float(self.c) < 1.0, "c must lie in (0, 1)")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "lambda_hat", positive_scalar(self.lambda_hat, "lambda_hat"))

    @property
    def r(self) -> float:
        return (1.0 - self.c) / (4.0 * self.lambda_hat)

    @classmethod
    def from_ratio(cls, r: float, c: float, n: int, p: float) -> "CorruptionSetting":
        """Construct from the dimensionless ratio instead of the raw penalty."""
        r = positive_scalar(r, "r")
        return cls(n=n, p=p, c=c, lambda_hat=(1.0 - float(c)) / (4.0 * r))


@dataclass(frozen=True)
class TeacherDual:
    """Solved dual pair of the teacher, both nonnegative at a valid solution."""

    alpha: float
    alpha_hat: float
    residual: tuple[float, float]


@dataclass(frozen=True)
class StudentDual:
    """Solved dual pair of the student."""

    beta: float
    beta_hat: float
    residual: tuple[float, float]


@dataclass(frozen=True)
class PredictionProfile:
    """Soft labels (probability of class 1) for the four sample groups."""

    bad1: float
    good1: float
    bad0: float
    good0: float

    def __post_init__(self):
        require(abs(self.bad0 - (1.0 - self.bad1)) <= 1e-9, "profile breaks class symmetry")
        require(abs(self.good0 - (1.0 - self.good1)) <= 1e-9, "profile breaks class symmetry")


def _newton2(residual_jac, x0, tol: float, fixed_point_step=None):
    """Damped two-variable Newton with a fixed-point fallback.

    ``residual_jac`` maps x -> (F, J); iteration stops when max|F| <= tol.
    Steps that do not reduce max|F| are halved up to 60 times; if no Newton
    step is acceptable, one damped fixed-point sweep is taken instead.
    """
    x = np.asarray(x0, dtype=np.float64)
    F, J = residual_jac(x)
    norm = float(np.max(np.abs(F)))
    omega = 0.5
    for _ in range(_MAX_ITER):
        if norm <= tol:
            return x, F
        accepted = False
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            delta = None
        if delta is not None and np.all(np.isfinite(delta)):
            scale = 1.0
            for _ in range(60):
                trial = x + scale * delta
                Ft, Jt = residual_jac(trial)
                trial_norm = float(np.max(np.abs(Ft)))
                if np.isfinite(trial_norm) and trial_norm < norm:
                    x, F, J, norm = trial, Ft, Jt, trial_norm
                    accepted = True
                    break
                scale *= 0.5
        if not accepted:
            if fixed_point_step is None:
                break
            trial = (1.0 - omega) * x + omega * fixed_point_step(x)
            Ft, Jt = residual_jac(trial)
            trial_norm = float(np.max(np.abs(Ft)))
            if np.isfinite(trial_norm) and trial_norm < norm:
                x, F, J, norm = trial, Ft, Jt, trial_norm
            else:
                omega *= 0.5
                if omega < 1e-12:
                    break
    raise SolverError(
        f"sigmoid system did not reach tolerance {tol:g}; final residual {norm:g}",
        residual=norm,
    )


def _teacher_system(setting: CorruptionSetting):
    n, p, c, lam = setting.n, setting.p, setting.c, setting.lambda_hat

    def residual_jac(x):
        a, ah = x
        z = c * n * (a - (a + ah) * p)
        u = z - (1.0 - c) * ah
        w = z + (1.0 - c) * a
        su, sw = expit(u), expit(w)
        F = np.array([su - lam * ah, sw - (1.0 - lam * a)])
        du, dw = su * (1.0 - su), sw * (1.0 - sw)
        cn = c * n
        J = np.array([
            [du * cn * (1.0 - p), du * (-cn * p - (1.0 - c)) - lam],
            [dw * (cn * (1.0 - p) + (1.0 - c)) + lam, dw * (-cn * p)],
        ])
        return F, J

    def fixed_point_step(x):
        a, ah = x
        z = c * n * (a - (a + ah) * p)
        return np.array([
            (1.0 - expit(z + (1.0 - c) * a)) / lam,
            expit(z - (1.0 - c) * ah) / lam,
        ])

    return residual_jac, fixed_point_step


def solve_teacher(setting: CorruptionSetting, tol: float = 1e-12) -> TeacherDual:
    """Solve the teacher's two-variable sigmoid stationarity system.

    Initialized from the wide-sample asymptotic form of the solution with the
    linearization slack pinned at 0.02, then refined by damped Newton until
    the residual of both equations is at most ``tol`` in max norm.
    """
    scale = setting.lambda_hat + (1.0 - setting.c) / 4.0
    x0 = np.array([1.02 * setting.p / scale, 1.02 * (1.0 - setting.p) / scale])
    residual_jac, fp_step = _teacher_system(setting)
    x, F = _newton2(residual_jac, x0, tol, fp_step)
    return TeacherDual(alpha=float(x[0]), alpha_hat=float(x[1]),
                       residual=(float(F[0]), float(F[1])))


def _student_system(setting: CorruptionSetting, teacher: TeacherDual):
    n, p, c, lam = setting.n, setting.p, setting.c, setting.lambda_hat
    base_bad = lam * teacher.alpha_hat
    base_good = lam * teacher.alpha

    def residual_jac(x):
        b, bh = x
        z = c * n * (b - (b + bh) * p)
        u = z - (1.0 - c) * bh
        w = z + (1.0 - c) * b
        su, sw = expit(u), expit(w)
        F = np.array([su - base_bad - lam * bh, sw - (1.0 - base_good - lam * b)])
        du, dw = su * (1.0 - su), sw * (1.0 - sw)
        cn = c * n
        J = np.array([
            [du * cn * (1.0 - p), du * (-cn * p - (1.0 - c)) - lam],
            [dw * (cn * (1.0 - p) + (1.0 - c)) + lam, dw * (-cn * p)],
        ])
        return F, J

    def fixed_point_step(x):
        b, bh = x
        z = c * n * (b - (b + bh) * p)
        return np.array([
            (1.0 - base_good - expit(z + (1.0 - c) * b)) / lam,
            (expit(z - (1.0 - c) * bh) - base_bad) / lam,
        ])

    return residual_jac, fixed_point_step


def solve_student(setting: CorruptionSetting, teacher: TeacherDual,
                  tol: float = 1e-12) -> StudentDual:
    """Solve the student's system given the teacher's dual pair."""
    scale = setting.lambda_hat + (1.0 - setting.c) / 4.0
    shift = 1.0 - 1.02 * setting.lambda_hat / scale
    x0 = np.array([setting.p * shift / scale, (1.0 - setting.p) * shift / scale])
    residual_jac, fp_step = _student_system(setting, teacher)
    x, F = _newton2(residual_jac, x0, tol, fp_step)
    return StudentDual(beta=float(x[0]), beta_hat=float(x[1]),
                       residual=(float(F[0]), float(F[1])))


def _profile(bad1: float, good1: float) -> PredictionProfile:
    for name, value in (("bad", bad1), ("good", good1)):
        if not 0.0 < value < 1.0:
            raise InconsistentSolutionError(
                f"{name}-group prediction {value!r} falls outside (0, 1)"
            )
    return PredictionProfile(bad1=bad1, good1=good1, bad0=1.0 - bad1, good0=1.0 - good1)


def teacher_predictions(dual: TeacherDual, setting: CorruptionSetting) -> PredictionProfile:
    """Group-wise soft labels implied by the teacher's dual pair."""
    lam = setting.lambda_hat
    return _profile(lam * dual.alpha_hat, 1.0 - lam * dual.alpha)


def student_predictions(student: StudentDual, teacher: TeacherDual,
                        setting: CorruptionSetting) -> PredictionProfile:
    """Group-wise soft labels implied by the student's dual pair."""
    lam = setting.lambda_hat
    return _profile(
        lam * (teacher.alpha_hat + student.beta_hat),
        1.0 - lam * (teacher.alpha + student.beta),
    )


def asymptotic_teacher_profile(setting: CorruptionSetting) -> PredictionProfile:
    """Wide-sample closed-form teacher profile with zero linearization slack.

    The first-order expansion of the sigmoid collapses the teacher system to
    flipped-group prediction (1 - p)/(1 + r) and kept-group prediction
    1 - p/(1 + r).  The exact solve (:func:`solve_teacher`) differs from this
    by the residual of the expansion, a shift of at most a few thousandths
    inside the advantage window.
    """
    r = setting.r
    return _profile((1.0 - setting.p) / (1.0 + r), 1.0 - setting.p / (1.0 + r))


def asymptotic_student_profile(setting: CorruptionSetting) -> PredictionProfile:
    """Wide-sample closed-form student profile with zero linearization slack."""
    r = setting.r
    factor = (1.0 + 2.0 * r) / (1.0 + r) ** 2
    return _profile((1.0 - setting.p) * factor, 1.0 - setting.p * factor)


def group_accuracy(profile: PredictionProfile, p: float) -> float:
    """Training accuracy under strict > 1/2 classification of the true class.

    A prediction of exactly 1/2 counts as class 0, so the two symmetric
    classes are scored separately and averaged.
    """
    require(0.0 <= float(p) < 0.5, "p must lie in [0, 0.5)")
    p = float(p)
    class1 = p * (profile.bad1 > 0.5) + (1.0 - p) * (profile.good1 > 0.5)
    class0 = p * (profile.bad0 <= 0.5) + (1.0 - p) * (profile.good0 <= 0.5)
    return (class1 + class0) / 2.0


class AdvantageInterval(NamedTuple):
    """Flip-fraction window in which the student provably beats the teacher."""

    lo: float
    hi: float

    @property
    def is_empty(self) -> bool:
        return not self.lo < self.hi


def student_advantage_interval(r: float) -> AdvantageInterval:
    """Derived corruption window for the dimensionless ratio ``r``.

    Guaranteed non-empty for ``r`` in [0.10, 0.54]; outside that range the
    formula values are still returned and ``is_empty`` flags the result.
    """
    r = positive_scalar(r, "r")
    lo = max((1.08 - r) / 2.08, (1.0 + r) / 3.7)
    hi = 1.0 - 0.51 * (1.0 + r) ** 2 / (1.0 + 2.0 * r)
    return AdvantageInterval(lo=lo, hi=hi)


def variability(teacher_profile: PredictionProfile,
                student_profile: PredictionProfile) -> tuple[float, float]:
    """Spread of each model's predictions over same-true-class points."""
    delta_t = abs(teacher_profile.good1 - teacher_profile.bad1)
    delta_s = abs(student_profile.good1 - student_profile.bad1)
    return delta_t, delta_s


def teacher_variability_linear(setting: CorruptionSetting, dual: TeacherDual) -> float:
    """Teacher spread via the affine identity 1 - lam*(alpha + alpha_hat)."""
    return 1.0 - setting.lambda_hat * (dual.alpha + dual.alpha_hat)


def student_variability_linear(setting: CorruptionSetting, teacher: TeacherDual,
                               student: StudentDual) -> float:
    """Student spread via the affine identity on the summed dual pairs."""
    return 1.0 - setting.lambda_hat * (
        teacher.alpha + student.beta + teacher.alpha_hat + student.beta_hat
    )


def maclaurin_residual(z):
    """Error of the first-order sigmoid expansion: sigma(z) - 1/2 - z/4.

    Negative for z > 0, zero at z = 0, positive for z < 0.
    """
    z = np.asarray(z, dtype=np.float64)
    out = expit(z) - 0.5 - z / 4.0
    return float(out) if out.ndim == 0 else out


def maclaurin_residuals(teacher: TeacherDual, student: StudentDual,
                        setting: CorruptionSetting) -> tuple[float, float]:
    """Summed linearization residuals at the four solved sigmoid arguments."""
    n, p, c = setting.n, setting.p, setting.c
    zt = c * n * (teacher.alpha - (teacher.alpha + teacher.alpha_hat) * p)
    eps1 = maclaurin_residual(zt - (1.0 - c) * teacher.alpha_hat)
    eps2 = maclaurin_residual(-zt - (1.0 - c) * teacher.alpha)
    zs = c * n * (student.beta - (student.beta + student.beta_hat) * p)
    eps3 = maclaurin_residual(zs - (1.0 - c) * student.beta_hat)
    eps4 = maclaurin_residual(-zs - (1.0 - c) * student.beta)
    return eps1 + eps2, eps3 + eps4


def solve_teacher_two_class(setting: CorruptionSetting, tol: float = 1e-12):
    """Solve the un-reduced four-variable system, one dual pair per class.

    Sanity route for the two-variable reduction: the two classes' pairs must
    coincide.  Returns (alpha, alpha_hat, alpha2, alpha_hat2).
    """
    n, p, c, lam = setting.n, setting.p, setting.c, setting.lambda_hat
    nhat = n * p

    def residuals(x):
        a, ah, a2, ah2 = x
        s1 = a * n - (a + ah) * nhat
        s0 = ah2 * nhat - a2 * (n - nhat)
        return [
            expit(-(1.0 - c) * ah + c * s1) - lam * ah,
            expit((1.0 - c) * a + c * s1) - (1.0 - lam * a),
            expit((1.0 - c) * ah2 + c * s0) - (1.0 - lam * ah2),
            expit(-(1.0 - c) * a2 + c * s0) - lam * a2,
        ]

    scale = lam + (1.0 - c) / 4.0
    x0 = np.array([1.02 * p / scale, 1.02 * (1.0 - p) / scale] * 2)
    solution = root(residuals, x0, method="hybr", tol=1e-14)
    residual = float(np.max(np.abs(residuals(solution.x))))
    if residual > tol:
        raise SolverError(
            f"four-variable system stalled at residual {residual:g}", residual=residual
        )
    return tuple(float(v) for v in solution.x)


def accuracy_row(setting: CorruptionSetting) -> dict:
    """Solve both models at one setting and summarize the derived quantities."""
    teacher = solve_teacher(setting)
    student = solve_student(setting, teacher)
    tp = teacher_predictions(teacher, setting)
    sp = student_predictions(student, teacher, setting)
    delta_t, delta_s = variability(tp, sp)
    zeta, zeta_prime = maclaurin_residuals(teacher, student, setting)
    return {
        "p": setting.p,
        "teacher_acc": group_accuracy(tp, setting.p),
        "student_acc": group_accuracy(sp, setting.p),
        "delta_t": delta_t,
        "delta_s": delta_s,
        "zeta": zeta,
        "zeta_prime": zeta_prime,
    }


def _advantage_pattern(setting: CorruptionSetting) -> bool:
    """True when the teacher errs exactly on flipped points but the student on none."""
    teacher = solve_teacher(setting)
    student = solve_student(setting, teacher)
    tp = teacher_predictions(teacher, setting)
    sp = student_predictions(student, teacher, setting)
    teacher_pattern = tp.bad1 <= 0.5 < tp.good1
    student_pattern = sp.bad1 > 0.5 and sp.good1 > 0.5
    return bool(teacher_pattern and student_pattern)


def scan_advantage_window(lambda_hat: float, c: float, n: int,
                          step: float = 0.005) -> AdvantageInterval | None:
    """Grid-scan p in (0, 0.5) for the maximal run where the student wins.

    Returns the longest contiguous run of grid points exhibiting the
    advantage pattern, or None if no grid point does.  Resolution is
    ``step``; the true window extends at most one step beyond each end.
    """
    grid = np.arange(step, 0.5, step)
    flags = []
    for p in grid:
        try:
            flags.append(_advantage_pattern(CorruptionSetting(
                n=n, p=float(p), c=c, lambda_hat=lambda_hat)))
        except (SolverError, InconsistentSolutionError):
            flags.append(False)
    best = None
    run_start = None
    for i, flag in enumerate(list(flags) + [False]):
        if flag and run_start is None:
            run_start = i
        elif not flag and run_start is not None:
            if best is None or i - run_start > best[1] - best[0]:
                best = (run_start, i)
            run_start = None
    if best is None:
        return None
    return AdvantageInterval(lo=float(grid[best[0]]), hi=float(grid[best[1] - 1]))
