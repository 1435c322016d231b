"""Random block Gram matrices and kernel logistic fits in the dual.

Two balanced classes get independent random within-class Gram blocks with
unit diagonal (cross-class inner products are zero).  Teacher and student
kernel logistic regressions are solved directly in the 2n-dimensional dual
through the per-sample stationarity condition, and their group-averaged
predictions are compared against the constant-correlation closed forms.
The Gram blocks are never materialized: everything works through factor
matvecs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import seeding
from .exceptions import SolverError
from .logistic import (
    CorruptionSetting,
    asymptotic_student_profile,
    asymptotic_teacher_profile,
    solve_student,
    solve_teacher,
    student_predictions,
    teacher_predictions,
)
from .validation import positive_scalar, require

_STREAM_CLASS1 = 0
_STREAM_CLASS0 = 1

DISTRIBUTIONS = ("uniform", "bernoulli")


@dataclass(frozen=True)
class GramSpec:
    """Size, flip fraction, factor distribution, scaled penalty and seed.

    ``dist`` selects the i.i.d. law of the factor entries: "uniform" draws
    from [0, 1] (expected off-diagonal 0.25), "bernoulli" draws {0, 1} with
    hit probability ``q`` (expected off-diagonal q^2).
    """

    n: int
    p: float
    dist: str
    lambda_hat: float
    seed: int = 0
    q: float = 0.8

    def __post_init__(self):
        require(int(self.n) >= 2, "n must be at least 2")
        require(0.0 <= float(self.p) < 0.5, "p must lie in [0, 0.5)")
        require(self.dist in DISTRIBUTIONS, f"dist must be one of {DISTRIBUTIONS}")
        require(0.0 < float(self.q) < 1.0, "q must lie in (0, 1)")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "lambda_hat", positive_scalar(self.lambda_hat, "lambda_hat"))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "q", float(self.q))

    @property
    def c_nominal(self) -> float:
        """Expected off-diagonal Gram entry, by definition of the factor law."""
        return 0.25 if self.dist == "uniform" else self.q**2

    @property
    def n_hat(self) -> int:
        return int(np.floor(self.n * self.p))

    def setting(self) -> CorruptionSetting:
        return CorruptionSetting(
            n=self.n, p=self.p, c=self.c_nominal, lambda_hat=self.lambda_hat
        )


@dataclass
class GramFactors:
    """Factor form of the block Gram matrix plus the label layout.

    Each class block is Z Z'/n with its diagonal replaced by ones; ``apply``
    computes the full block-diagonal matrix-vector product without forming
    the n x n blocks' Gram.  True labels are 1 for the first n samples and 0
    for the rest; the first floor(n p) samples of each class carry flipped
    labels.
    """

    z1: np.ndarray
    z0: np.ndarray
    labels_true: np.ndarray
    labels_corrupted: np.ndarray
    diag_fix1: np.ndarray = field(init=False)
    diag_fix0: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.z1.shape[0]
        require(self.z1.shape == (n, n) and self.z0.shape == (n, n),
                "factors must be square and equally sized")
        self.diag_fix1 = 1.0 - np.einsum("ij,ij->i", self.z1, self.z1) / n
        self.diag_fix0 = 1.0 - np.einsum("ij,ij->i", self.z0, self.z0) / n

    @property
    def n(self) -> int:
        return self.z1.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        n = self.n
        v1, v0 = v[:n], v[n:]
        w1 = self.z1 @ (self.z1.T @ v1) / n + self.diag_fix1 * v1
        w0 = self.z0 @ (self.z0.T @ v0) / n + self.diag_fix0 * v0
        return np.concatenate([w1, w0])

    def offdiagonal_mean(self) -> float:
        """Average off-diagonal Gram entry across both blocks (via row sums)."""
        n = self.n
        total = 0.0
        for z in (self.z1, self.z0):
            colsum = z.T @ np.ones(n)
            all_entries = float(colsum @ colsum) / n
            trace = float(np.einsum("ij,ij->", z, z)) / n
            total += (all_entries - trace) / (n * (n - 1))
        return total / 2.0


def build_factors(spec: GramSpec) -> GramFactors:
    """Draw the two class blocks and lay out true and corrupted labels."""
    n = spec.n
    blocks = []
    for stream_index in (_STREAM_CLASS1, _STREAM_CLASS0):
        rng = seeding.stream(spec.seed, stream_index)
        if spec.dist == "uniform":
            blocks.append(rng.random((n, n)))
        else:
            blocks.append((rng.random((n, n)) < spec.q).astype(np.float64))
    labels_true = np.concatenate([np.ones(n), np.zeros(n)])
    labels_corrupted = labels_true.copy()
    nhat = spec.n_hat
    labels_corrupted[:nhat] = 0.0
    labels_corrupted[n:n + nhat] = 1.0
    return GramFactors(z1=blocks[0], z0=blocks[1], labels_true=labels_true,
                       labels_corrupted=labels_corrupted)


@dataclass(frozen=True)
class KernelModel:
    """Solved dual vector, its targets, predictions and stationarity residual."""

    dual: np.ndarray
    targets: np.ndarray
    predictions: np.ndarray
    residual: float


def _residual(apply_gram, dual, targets, lambda_hat):
    values = expit(apply_gram(dual))
    return lambda_hat * dual - (targets - values), values


def fit_dual(apply_gram, targets, lambda_hat: float, tol: float = 1e-9,
             max_iter: int = 100_000, method: str = "auto",
             x0: np.ndarray | None = None) -> KernelModel:
    """Solve the per-sample stationarity system lam_hat*a = t - sigma(K a).

    The Gram matrix is positive semidefinite and ``lambda_hat`` positive, so
    the solution is unique and any convergent method reaches the same point;
    the residual is re-checked on the returned iterate.

    method="fixedpoint" runs the damped iteration
    a <- (1 - w) a + w (t - sigma(K a)) / lam_hat with w starting at 0.5 and
    halved (with the step rejected) whenever the residual grows.  Its per-step
    contraction degrades linearly with the top Gram eigenvalue, which grows
    with n, so method="newton" (inexact Newton with conjugate-gradient inner
    solves on the symmetrized system) is used above 3000 samples under
    method="auto".
    """
    targets = np.asarray(targets, dtype=np.float64)
    require(bool(np.all((targets >= 0.0) & (targets <= 1.0))),
            "targets must lie in [0, 1]")
    lambda_hat = positive_scalar(lambda_hat, "lambda_hat")
    require(method in ("auto", "fixedpoint", "newton"), f"unknown method {method!r}")
    if method == "auto":
        method = "fixedpoint" if targets.size <= 3000 else "newton"

    a = np.zeros_like(targets) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    require(a.shape == targets.shape, "warm start must match the target length")
    if method == "fixedpoint":
        a, norm = _fixed_point(apply_gram, a, targets, lambda_hat, tol, max_iter)
    else:
        a, norm = _newton_cg(apply_gram, a, targets, lambda_hat, tol, max_iter)
    if norm > tol:
        raise SolverError(
            f"dual solve stalled at residual {norm:g} (tolerance {tol:g})",
            residual=norm,
        )
    residual_vec, values = _residual(apply_gram, a, targets, lambda_hat)
    return KernelModel(dual=a, targets=targets, predictions=values,
                       residual=float(np.max(np.abs(residual_vec))))


def _fixed_point(apply_gram, a, targets, lambda_hat, tol, max_iter):
    # Residual growth is judged in the 2-norm: the iteration matrix is
    # non-normal, so the max norm is not monotone even for convergent steps.
    # Termination stays on the max norm.  After 20 accepted steps in a row
    # the damping is relaxed again so one early rejection cannot pin it low.
    omega = 0.5
    values = expit(apply_gram(a))
    res = lambda_hat * a - (targets - values)
    norm2 = float(np.linalg.norm(res))
    norm_inf = float(np.max(np.abs(res)))
    streak = 0
    for _ in range(max_iter):
        if norm_inf <= tol:
            break
        proposal = (1.0 - omega) * a + omega * (targets - values) / lambda_hat
        prop_values = expit(apply_gram(proposal))
        prop_res = lambda_hat * proposal - (targets - prop_values)
        prop_norm2 = float(np.linalg.norm(prop_res))
        if prop_norm2 < norm2:
            a, values, norm2 = proposal, prop_values, prop_norm2
            norm_inf = float(np.max(np.abs(prop_res)))
            streak += 1
            if streak >= 20:
                omega = min(1.25 * omega, 0.5)
                streak = 0
        else:
            omega *= 0.5
            streak = 0
            if omega < 1e-14:
                break
    return a, norm_inf


def _newton_cg(apply_gram, a, targets, lambda_hat, tol, max_iter):
    v = apply_gram(a)
    s = expit(v)
    F = lambda_hat * a + s - targets
    norm = float(np.max(np.abs(F)))
    spent = 0
    while norm > tol and spent < max_iter:
        d = np.maximum(s * (1.0 - s), 1e-300)
        sqrt_d = np.sqrt(d)
        rhs = -F / sqrt_d

        def matvec(u):
            return lambda_hat * u + sqrt_d * apply_gram(sqrt_d * u)

        inner_tol = max(min(0.1, np.sqrt(norm)), 1e-4) * np.linalg.norm(rhs)
        y, used = _conjugate_gradient(matvec, rhs, inner_tol, min(2000, max_iter - spent))
        spent += used + 1
        delta = sqrt_d * y
        scale = 1.0
        for _ in range(40):
            trial = a + scale * delta
            v_t = apply_gram(trial)
            spent += 1
            s_t = expit(v_t)
            F_t = lambda_hat * trial + s_t - targets
            norm_t = float(np.max(np.abs(F_t)))
            if norm_t < norm:
                a, v, s, F, norm = trial, v_t, s_t, F_t, norm_t
                break
            scale *= 0.5
        else:
            break
    return a, norm


def _conjugate_gradient(matvec, b, tol, max_iter):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    for k in range(max_iter):
        if np.sqrt(rs) <= tol:
            return x, k
        Ap = matvec(p)
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, max_iter


def _teacher_warm_start(spec: GramSpec) -> np.ndarray:
    scale = spec.lambda_hat * (1.0 + spec.setting().r)
    alpha = spec.p / scale
    alpha_hat = (1.0 - spec.p) / scale
    return _group_layout(spec, -alpha_hat, alpha, alpha_hat, -alpha)


def _student_warm_start(spec: GramSpec) -> np.ndarray:
    scale = spec.lambda_hat * (1.0 + spec.setting().r)
    shift = 1.0 - spec.lambda_hat / scale
    beta = spec.p * shift / scale
    beta_hat = (1.0 - spec.p) * shift / scale
    return _group_layout(spec, -beta_hat, beta, beta_hat, -beta)


def _group_layout(spec, bad1, good1, bad0, good0) -> np.ndarray:
    n, nhat = spec.n, spec.n_hat
    out = np.empty(2 * n)
    out[:nhat] = bad1
    out[nhat:n] = good1
    out[n:n + nhat] = bad0
    out[n + nhat:] = good0
    return out


def group_means(values: np.ndarray, spec: GramSpec) -> dict[str, float]:
    """Average ``values`` over the four (true class, flipped) groups."""
    n, nhat = spec.n, spec.n_hat
    return {
        "bad1": float(np.mean(values[:nhat])),
        "good1": float(np.mean(values[nhat:n])),
        "bad0": float(np.mean(values[n:n + nhat])),
        "good0": float(np.mean(values[n + nhat:])),
    }


def gram_table(spec: GramSpec, tol: float = 1e-9, method: str = "auto") -> list[dict]:
    """Fit teacher and student on one drawn Gram instance and tabulate.

    The teacher is fit on the corrupted hard labels, the student on the
    teacher's per-sample soft predictions.  Each row carries the group
    average of the fitted predictions over true-class-1 samples, two
    constant-correlation references at the factor law's nominal correlation
    (``a3_pred``, the first-order closed prediction, and ``exact_pred``, the
    exactly solved reduced system, which is what the simulated averages
    converge to), and the class-0 mirror average (one minus the matching
    class-0 group mean) for symmetry checks.
    """
    require(spec.n_hat >= 1,
            "flip fraction leaves no flipped samples to average at this n")
    factors = build_factors(spec)
    teacher = fit_dual(factors.apply, factors.labels_corrupted, spec.lambda_hat,
                       tol=tol, method=method, x0=_teacher_warm_start(spec))
    student = fit_dual(factors.apply, teacher.predictions, spec.lambda_hat,
                       tol=tol, method=method, x0=_student_warm_start(spec))

    setting = spec.setting()
    teacher_dual = solve_teacher(setting)
    student_dual = solve_student(setting, teacher_dual)
    closed = {
        "teacher": asymptotic_teacher_profile(setting),
        "student": asymptotic_student_profile(setting),
    }
    exact = {
        "teacher": teacher_predictions(teacher_dual, setting),
        "student": student_predictions(student_dual, teacher_dual, setting),
    }
    rows = []
    for name, model in (("teacher", teacher), ("student", student)):
        means = group_means(model.predictions, spec)
        for group in ("bad", "good"):
            rows.append({
                "model": name,
                "group": group,
                "avg_pred": means[f"{group}1"],
                "a3_pred": getattr(closed[name], f"{group}1"),
                "exact_pred": getattr(exact[name], f"{group}1"),
                "avg_pred_mirror": 1.0 - means[f"{group}0"],
                "residual": model.residual,
            })
    return rows
