"""Choosing the imitation weight and the ridge penalty.

For a fixed penalty ``lam`` the expected estimation error is an exact
quadratic in the imitation weight ``xi``; its minimizer ``optimal_xi`` has a
closed form.  Substituting it back gives the best-achievable-with-distillation
error curve ``sd_error(lam)``, to be compared against the plain-ridge curve
``reg_error(lam)``.  This module provides both curves, their derivatives, the
condition under which the plain-ridge optimum is a local maximum of the
distilled curve (so tuning ``lam`` jointly with ``xi`` strictly helps), and
one-dimensional minimizers over ``lam``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import BracketingError, DegenerateDesignError
from .ridge import NoiseSpec, SpectralDesign
from .validation import positive_scalar, require

_GOLDEN_RATIO = (np.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# closed-form curves and derivatives
# ---------------------------------------------------------------------------

def reg_error(design: SpectralDesign, noise: NoiseSpec, lam: float) -> float:
    """Expected estimation error of plain ridge (imitation weight zero)."""
    lam = positive_scalar(lam, "lam")
    sig2 = design.sigma**2
    denom = (lam + sig2) ** 2
    bias = lam**2 * np.sum(design.theta_sq / denom) + design.null_mass
    var = noise.gamma_sq * np.sum(sig2 / denom)
    return float(bias + var)


def reg_error_deriv(design: SpectralDesign, noise: NoiseSpec, lam: float) -> float:
    """d/dlam of :func:`reg_error`, from the bias and variance pieces separately."""
    lam = positive_scalar(lam, "lam")
    sig2 = design.sigma**2
    denom = (lam + sig2) ** 3
    bias_part = 2.0 * lam * np.sum(design.theta_sq * sig2 / denom)
    var_part = -2.0 * noise.gamma_sq * np.sum(sig2 / denom)
    return float(bias_part + var_part)


def reg_error_second_deriv(design: SpectralDesign, noise: NoiseSpec, lam: float) -> float:
    lam = positive_scalar(lam, "lam")
    sig2 = design.sigma**2
    denom = (lam + sig2) ** 4
    terms = 2.0 * sig2 * (design.theta_sq * (sig2 - 2.0 * lam) + 3.0 * noise.gamma_sq)
    return float(np.sum(terms / denom))


def stationarity_sum(design: SpectralDesign, noise: NoiseSpec, lam: float) -> float:
    """The weighted sum whose zero locates the plain-ridge optimum.

    Equals half of :func:`reg_error_deriv`; both are computed from distinct
    expressions so the identity can be checked numerically.
    """
    lam = positive_scalar(lam, "lam")
    sig2 = design.sigma**2
    terms = (lam * design.theta_sq - noise.gamma_sq) * sig2 / (lam + sig2) ** 3
    return float(np.sum(terms))


def sd_curvature(design: SpectralDesign, noise: NoiseSpec, lam: float) -> float:
    """Twice the second xi-derivative of the error at fixed lam (always >= 0)."""
    lam = positive_scalar(lam, "lam")
    sig2 = design.sigma**2
    terms = (noise.gamma_sq * sig2 + design.theta_sq * sig2**2) / (lam + sig2) ** 4
    return float(4.0 * np.sum(terms))


def sd_curvature_deriv(design: SpectralDesign, noise: NoiseSpec, lam: float) -> float:
    lam = positive_scalar(lam, "lam")
    sig2 = design.sigma**2
    terms = (noise.gamma_sq * sig2 + design.theta_sq * sig2**2) / (lam + sig2) ** 5
    return float(-16.0 * np.sum(terms))


def optimal_xi(design: SpectralDesign, noise: NoiseSpec, lam: float) -> float:
    """Imitation weight minimizing the expected error at fixed ``lam``.

    Unrestricted real: it exceeds 1 in the high-noise regime and is negative
    when the noise is small relative to the signal.
    """
    lam = positive_scalar(lam, "lam")
    sig2 = design.sigma**2
    numer = lam * np.sum((noise.gamma_sq - lam * design.theta_sq) * sig2 / (lam + sig2) ** 3)
    denom = lam**2 * np.sum(
        (noise.gamma_sq * sig2 + design.theta_sq * sig2**2) / (lam + sig2) ** 4
    )
    if denom <= 0.0:
        raise DegenerateDesignError("zero signal and zero noise leave xi undetermined")
    return float(numer / denom)


def optimal_xi_noise_limit(design: SpectralDesign, lam: float) -> float:
    """Limit of :func:`optimal_xi` as the noise variance grows; always > 1."""
    lam = positive_scalar(lam, "lam")
    sig2 = design.sigma**2
    numer = np.sum(lam**2 * sig2 / (lam + sig2) ** 3)
    denom = np.sum(lam**3 * sig2 / (lam + sig2) ** 4)
    return float(numer / denom)


def sd_error(design: SpectralDesign, noise: NoiseSpec, lam: float) -> float:
    """Expected error with the per-``lam`` optimal imitation weight.

    Never exceeds :func:`reg_error`, with equality exactly where the
    plain-ridge curve is stationary.
    """
    h = sd_curvature(design, noise, lam)
    if h <= 0.0:
        raise DegenerateDesignError("zero signal and zero noise make the error curve flat")
    deriv = reg_error_deriv(design, noise, lam)
    return float(reg_error(design, noise, lam) - deriv**2 / h)


def sd_error_deriv(design: SpectralDesign, noise: NoiseSpec, lam: float) -> float:
    """Analytic d/dlam of :func:`sd_error`."""
    h = sd_curvature(design, noise, lam)
    if h <= 0.0:
        raise DegenerateDesignError("zero signal and zero noise make the error curve flat")
    d1 = reg_error_deriv(design, noise, lam)
    d2 = reg_error_second_deriv(design, noise, lam)
    hp = sd_curvature_deriv(design, noise, lam)
    return float(d1 * (1.0 - 2.0 * d2 / h + d1 * hp / h**2))


def local_max_condition(design: SpectralDesign, lambda_star: float) -> tuple[float, bool]:
    """Pairwise-ordering sum deciding whether ``lambda_star`` is a local max.

    Returns the sum and the flag ``sum < 0``.  When the flag is true at the
    plain-ridge optimum, the distilled error curve has a strict local maximum
    there, so its global minimum over ``lam`` is strictly better than the
    plain-ridge optimum.
    """
    lambda_star = positive_scalar(lambda_star, "lambda_star")
    sig2 = design.sigma**2
    weight = sig2 / (lambda_star + sig2) ** 4
    gaps_sigma = sig2[:, None] - sig2[None, :]
    gaps_theta = design.theta_sq[None, :] - design.theta_sq[:, None]
    t3 = 0.5 * float(np.sum(weight[:, None] * weight[None, :] * gaps_sigma * gaps_theta))
    return t3, bool(t3 < 0.0)


def sd_local_max_sufficient(
    design: SpectralDesign, noise: NoiseSpec, q: int, nu: float
) -> bool:
    """Sufficient condition for the plain-ridge optimum to be a local maximum.

    Requires a normalized design (unit signal norm, leading singular value 1).
    Checks, for a head of ``q`` modes and any margin ``nu > 1``: the spectrum
    tail beyond the head is small enough, the head's squared signal
    projections are strictly decreasing, and the noise variance is large
    enough.  The condition is conservative; when it passes,
    :func:`local_max_condition` holds as well.
    """
    require(abs(design.signal_norm_sq - 1.0) <= 1e-9, "signal must have unit norm")
    require(abs(float(design.sigma[0]) - 1.0) <= 1e-12, "leading singular value must be 1")
    q = int(q)
    require(1 <= q <= design.rank, "q must lie in [1, rank]")
    require(float(nu) > 1.0, "nu must exceed 1")

    theta = design.theta_sq
    head = theta[:q]
    ordered = bool(np.all(np.diff(head) < 0.0)) if q > 1 else True

    sig2_head = design.sigma[:q] ** 2
    floor = float(np.min(sig2_head * (1.0 - sig2_head) * (head[0] - head)))
    delta = float(np.max(design.sigma[q:])) if q < design.rank else 0.0
    tail_small = delta <= np.sqrt(max(floor, 0.0) / (2.0 * float(nu) * design.rank))

    noisy_enough = noise.gamma_sq >= float(np.max(theta)) / (float(nu) - 1.0)
    return bool(ordered and tail_small and noisy_enough)


# ---------------------------------------------------------------------------
# one-dimensional minimization over lam
# ---------------------------------------------------------------------------

def default_bracket(design: SpectralDesign) -> tuple[float, float]:
    """Search interval covering the useful range of penalties for a design."""
    sig2 = design.sigma**2
    return 1e-6 * float(sig2[-1]), 1e3 * float(sig2[0])


def _golden_section(f, lo: float, hi: float, iters: int = 200) -> float:
    a, b = lo, hi
    x1 = b - _GOLDEN_RATIO * (b - a)
    x2 = a + _GOLDEN_RATIO * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN_RATIO * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN_RATIO * (b - a)
            f2 = f(x2)
        if b - a <= 1e-14 * b:
            break
    return 0.5 * (a + b)


def _bisect_sign_change(fprime, lo: float, hi: float, flo: float, fhi: float) -> float:
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = fprime(mid)
        if fm == 0.0:
            return mid
        if (fm < 0.0) == (flo < 0.0):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
        if hi - lo <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def _newton_polish(f, fprime, fsecond, x0: float, lo: float, hi: float) -> float:
    """Newton on the derivative, damped 0.5 on non-improving steps."""
    x = x0
    grad = fprime(x)
    for _ in range(200):
        if abs(grad) <= 1e-12 * (1.0 + abs(f(x))):
            break
        curv = fsecond(x)
        if curv == 0.0 or not np.isfinite(curv):
            break
        step = -grad / curv
        scale = 1.0
        improved = False
        for _ in range(60):
            trial = x + scale * step
            if lo < trial < hi:
                trial_grad = fprime(trial)
                if abs(trial_grad) < abs(grad):
                    x, grad = trial, trial_grad
                    improved = True
                    break
            scale *= 0.5
        if not improved:
            break
    return x


def _refine_interior(f, fprime, fsecond, left: float, right: float) -> float:
    fl, fr = fprime(left), fprime(right)
    if np.isfinite(fl) and np.isfinite(fr) and fl < 0.0 < fr:
        x = _bisect_sign_change(fprime, left, right, fl, fr)
    else:
        x = _golden_section(f, left, right)
    return _newton_polish(f, fprime, fsecond, x, left, right)


def _scan_minimize(f, fprime, fsecond, lo, hi, points, extra_candidates=()):
    lo = positive_scalar(lo, "bracket lower end")
    hi = positive_scalar(hi, "bracket upper end")
    require(lo < hi, "bracket must be non-empty")
    grid = np.geomspace(lo, hi, points)
    values = np.array([f(x) for x in grid])
    if not np.all(np.isfinite(values)):
        raise BracketingError("objective is not finite over the bracket")

    candidates = [float(c) for c in extra_candidates if lo <= c <= hi]
    best = int(np.argmin(values))
    if best == 0 or best == points - 1:
        candidates.append(float(grid[best]))
    interior = [
        i for i in range(1, points - 1)
        if values[i] <= values[i - 1] and values[i] <= values[i + 1]
    ]
    for i in interior:
        candidates.append(
            _refine_interior(f, fprime, fsecond, float(grid[i - 1]), float(grid[i + 1]))
        )
    if not candidates:
        raise BracketingError("no sign change and no interior grid minimum")

    # ties resolved to the smallest lam
    candidates = sorted(set(candidates))
    cand_values = [f(c) for c in candidates]
    floor_value = min(cand_values)
    tol = 1e-12 * (1.0 + abs(floor_value))
    for lam, value in zip(candidates, cand_values):
        if value <= floor_value + tol:
            return float(lam)
    return float(candidates[int(np.argmin(cand_values))])


def minimize_reg_error(
    design: SpectralDesign, noise: NoiseSpec, bracket: tuple[float, float] | None = None
) -> float:
    """Penalty minimizing the plain-ridge error curve.

    Scans 64 log-spaced points, then refines an interior minimum by bisection
    on the derivative plus damped Newton.  A minimum sitting on the bracket
    boundary (noise-free designs push the optimum to zero penalty) is
    returned as the boundary point itself.
    """
    lo, hi = bracket if bracket is not None else default_bracket(design)
    return _scan_minimize(
        lambda x: reg_error(design, noise, x),
        lambda x: reg_error_deriv(design, noise, x),
        lambda x: reg_error_second_deriv(design, noise, x),
        lo, hi, 64,
    )


def minimize_sd_error(
    design: SpectralDesign, noise: NoiseSpec, bracket: tuple[float, float] | None = None
) -> float:
    """Penalty minimizing the distilled error curve.

    The curve can be multi-modal (the plain-ridge optimum may be one of its
    local maxima), so a denser 256-point scan seeds the refinement, and the
    plain-ridge optimum itself is always included as a candidate: it is a
    stationary point of this curve and, in flat quartic-bottom cases, the
    scan alone cannot localize it precisely.
    """
    lo, hi = bracket if bracket is not None else default_bracket(design)
    extra = []
    try:
        extra.append(minimize_reg_error(design, noise, (lo, hi)))
    except BracketingError:
        pass
    return _scan_minimize(
        lambda x: sd_error(design, noise, x),
        lambda x: sd_error_deriv(design, noise, x),
        lambda x: _sd_second_diff(design, noise, x),
        lo, hi, 256, extra_candidates=extra,
    )


def _sd_second_diff(design: SpectralDesign, noise: NoiseSpec, lam: float) -> float:
    step = 1e-6 * lam
    up = sd_error_deriv(design, noise, lam + step)
    down = sd_error_deriv(design, noise, lam - step) if lam - step > 0 else sd_error_deriv(
        design, noise, lam
    )
    return (up - down) / (2.0 * step)


# ---------------------------------------------------------------------------
# benchmark designs and sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurveRecord:
    """One evaluated penalty on the two error curves."""

    lam: float
    e_reg: float
    e_sd: float
    xi_star: float
    e_sd_prime: float

    def __post_init__(self):
        require(
            self.e_sd <= self.e_reg + 1e-12 * (1.0 + abs(self.e_reg)),
            "distilled error cannot exceed the plain-ridge error",
        )


def powerlaw_design(dim: int = 100) -> SpectralDesign:
    """Full-rank design with a 1/j spectrum and signal split over the top two modes."""
    require(dim >= 2, "dim must be at least 2")
    sigma = 1.0 / np.arange(1, dim + 1, dtype=np.float64)
    signal = np.zeros(dim)
    signal[:2] = 1.0 / np.sqrt(2.0)
    return SpectralDesign(sigma=sigma, signal=signal, null_mass=0.0, dim=dim)


def two_mode_design() -> SpectralDesign:
    """Two-mode design with equal signal split; its optimal penalty is 2*gamma^2."""
    return SpectralDesign(
        sigma=np.array([1.0, 0.5]),
        signal=np.full(2, 1.0 / np.sqrt(2.0)),
        null_mass=0.0,
        dim=2,
    )


def sweep_lambdas(gamma: float) -> np.ndarray:
    """The ten penalties 2^(i-3) * gamma^2, i = 1..10."""
    gamma = positive_scalar(gamma, "gamma")
    return gamma**2 * 2.0 ** (np.arange(1, 11) - 3.0)


def error_curve_sweep(gamma: float, design: SpectralDesign | None = None) -> list[CurveRecord]:
    """Evaluate both error curves on the standard penalty grid for ``gamma``."""
    design = design if design is not None else powerlaw_design()
    noise = NoiseSpec(gamma_sq=float(gamma) ** 2)
    records = []
    for lam in sweep_lambdas(gamma):
        records.append(
            CurveRecord(
                lam=float(lam),
                e_reg=reg_error(design, noise, lam),
                e_sd=sd_error(design, noise, lam),
                xi_star=optimal_xi(design, noise, lam),
                e_sd_prime=sd_error_deriv(design, noise, lam),
            )
        )
    return records
