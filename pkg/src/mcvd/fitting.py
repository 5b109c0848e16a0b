"""Nonlinear least-squares estimation of channel-model coefficients from a
simulated received signal, via damped Gauss-Newton (Levenberg-Marquardt).

The residual is F_model(t_k; b) - S(t_k) over the grid's bin-end times, with
analytic Jacobians for both model kinds. Steps are clipped to the coefficient
bounds and additionally capped per coordinate at a quarter of the bound range
per iteration; without that cap the solver can overshoot into a far corner of
the box and then crawl along a curved valley for hundreds of iterations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import _amplitude, erfc
from .types import (
    ModelKind,
    ModelParams,
    NumericError,
    ReceivedSignal,
    SystemParams,
    ValidationError,
)

__all__ = [
    "FitProblem",
    "FitResult",
    "default_problem",
    "default_bounds",
    "fit",
    "jacobian_check",
]

_SQRT_PI = math.sqrt(math.pi)

# Per-coefficient closed intervals; chosen wide around the point-transmitter
# identity (1, 0.5, 0.5).
BOUNDS_B1 = (0.1, 5.0)
BOUNDS_B2 = (0.05, 1.5)
BOUNDS_B3 = (0.05, 1.5)

LAMBDA_INIT_FACTOR = 1e-3     # scaled by max diag of J^T J at the start
LAMBDA_MIN = 1e-12
LAMBDA_MAX = 1e12
MAX_ITERATIONS = 200
RSS_REL_TOL = 1e-10
GRAD_TOL = 1e-10
STEP_CAP_FRACTION = 0.25


def default_bounds(kind: ModelKind) -> tuple[tuple[float, float], ...]:
    if ModelKind(kind) is ModelKind.PRIMITIVE:
        return (BOUNDS_B1,)
    return (BOUNDS_B1, BOUNDS_B2, BOUNDS_B3)


@dataclass
class FitProblem:
    params: SystemParams
    target: ReceivedSignal
    kind: ModelKind
    initial_guess: ModelParams
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        self.kind = ModelKind(self.kind)
        if self.initial_guess.kind is not self.kind:
            raise ValidationError("initial guess kind does not match problem kind")
        if np.count_nonzero(self.target.cumulative_fraction) < 10:
            raise ValidationError("target needs at least 10 nonzero bins to fit")
        guess = self.initial_guess.coefficients()
        lo, hi = self._bound_arrays()
        if len(self.bounds) != guess.size:
            raise ValidationError("one bound interval required per coefficient")
        if np.any(guess < lo) or np.any(guess > hi):
            raise ValidationError("initial guess must lie within bounds")

    def _bound_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([b[0] for b in self.bounds], dtype=float)
        hi = np.array([b[1] for b in self.bounds], dtype=float)
        return lo, hi


@dataclass
class FitResult:
    model: ModelParams
    rss: float
    n_iterations: int
    converged: bool
    final_lambda: float


def default_problem(p: SystemParams, target: ReceivedSignal, kind: ModelKind) -> FitProblem:
    """Standard problem: start from the point-transmitter identity."""
    kind = ModelKind(kind)
    if kind is ModelKind.PRIMITIVE:
        guess = ModelParams(kind, 1.0)
    else:
        guess = ModelParams(kind, 1.0, 0.5, 0.5)
    return FitProblem(p, target, kind, guess, default_bounds(kind))


def _curve_and_jacobian(p: SystemParams, kind: ModelKind, coeffs: np.ndarray,
                        times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Model values and the analytic Jacobian d f / d b at bin-end times."""
    amp = _amplitude(p)
    if kind is ModelKind.PRIMITIVE:
        z = p.d / ((4.0 * p.diff_coeff) ** 0.5 * times ** 0.5)
        e = erfc(z)
        f = coeffs[0] * amp * e
        jac = (amp * e)[:, None]
        return f, jac
    b1, b2, b3 = coeffs
    four_d = 4.0 * p.diff_coeff
    z = p.d / (four_d ** b2 * times ** b3)
    e = erfc(z)
    f = b1 * amp * e
    d_erfc = -2.0 / _SQRT_PI * np.exp(-z * z)
    common = b1 * amp * d_erfc * z
    jac = np.empty((times.size, 3))
    jac[:, 0] = amp * e
    jac[:, 1] = common * (-math.log(four_d))
    jac[:, 2] = common * (-np.log(times))
    return f, jac


def fit(problem: FitProblem) -> FitResult:
    """Levenberg-Marquardt minimization of the summed squared deviation.

    Damping follows the multiply-by-10 on rejection / divide-by-10 on
    acceptance schedule within [1e-12, 1e12]; candidates are projected onto
    the bounds before evaluation so accepted steps never increase the RSS.
    Convergence means the relative RSS improvement of an uncapped
    near-Gauss-Newton step fell below 1e-10, or the projected gradient
    max-norm fell below 1e-10.
    """
    times = problem.target.grid.times()
    target = problem.target.cumulative_fraction
    lo, hi = problem._bound_arrays()
    cap = STEP_CAP_FRACTION * (hi - lo)
    x = problem.initial_guess.coefficients()

    def residual(c: np.ndarray) -> np.ndarray:
        return _curve_and_jacobian(problem.params, problem.kind, c, times)[0] - target

    resid = residual(x)
    if not np.all(np.isfinite(resid)):
        raise NumericError("non-finite residuals at the initial guess")
    rss = float(resid @ resid)
    lam = 0.0
    lam_floor_set = False
    converged = False
    n_iter = 0
    eye = np.eye(x.size)
    for _ in range(MAX_ITERATIONS):
        n_iter += 1
        f, jac = _curve_and_jacobian(problem.params, problem.kind, x, times)
        grad = 2.0 * (jac.T @ (f - target))
        proj = grad.copy()
        proj[np.isclose(x, lo) & (proj > 0)] = 0.0
        proj[np.isclose(x, hi) & (proj < 0)] = 0.0
        if np.max(np.abs(proj)) < GRAD_TOL:
            converged = True
            break
        jtj = jac.T @ jac
        if not lam_floor_set:
            lam = LAMBDA_INIT_FACTOR * max(float(np.max(np.diag(jtj))), 1.0)
            lam_floor_set = True
        accepted = False
        while lam <= LAMBDA_MAX:
            try:
                delta = np.linalg.solve(jtj + lam * eye, -0.5 * grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            over = float(np.max(np.abs(delta) / cap))
            was_capped = over > 1.0
            if was_capped:
                delta = delta / over
            x_new = np.clip(x + delta, lo, hi)
            r_new = residual(x_new)
            rss_new = float(r_new @ r_new)
            if np.isfinite(rss_new) and rss_new < rss:
                rel_drop = (rss - rss_new) / max(rss, 1e-300)
                step = x_new - x
                predicted = -(step @ grad + step @ (jtj @ step))
                gain = (rss - rss_new) / predicted if predicted > 0 else 1.0
                x, resid, rss = x_new, r_new, rss_new
                lam = max(lam / 10.0, LAMBDA_MIN)
                accepted = True
                # a tiny improvement only counts as convergence when the step
                # was a trusted near-Gauss-Newton one, not a collapsed-damping
                # crawl along a valley
                if rel_drop < RSS_REL_TOL and gain > 0.25 and not was_capped:
                    converged = True
                break
            lam *= 10.0
        if not accepted:
            converged = bool(np.max(np.abs(proj)) < 1e-6)
            break
        if converged:
            break
    model = ModelParams.from_coefficients(problem.kind, x)
    return FitResult(model=model, rss=rss, n_iterations=n_iter,
                     converged=converged, final_lambda=min(lam, LAMBDA_MAX))


def jacobian_check(p: SystemParams, kind: ModelKind, coeffs,
                   times: np.ndarray | None = None) -> float:
    """Max masked relative deviation of the analytic Jacobian from central
    finite differences with step 1e-6 * max(1, |b_i|).

    Entries below 1e-3 of the Jacobian's overall scale are excluded: there
    the central difference is dominated by rounding (eps * f / h ~ 1e-10
    absolute), while entries that small carry under 1e-6 relative weight in
    the normal equations. Genuine defects show up at full scale.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    kind = ModelKind(kind)
    if times is None:
        times = np.arange(1, 1001) * 1e-3
    _, analytic = _curve_and_jacobian(p, kind, coeffs, times)
    numeric = np.empty_like(analytic)
    for i in range(coeffs.size):
        h = 1e-6 * max(1.0, abs(coeffs[i]))
        up = coeffs.copy()
        up[i] += h
        dn = coeffs.copy()
        dn[i] -= h
        f_up, _ = _curve_and_jacobian(p, kind, up, times)
        f_dn, _ = _curve_and_jacobian(p, kind, dn, times)
        numeric[:, i] = (f_up - f_dn) / (2.0 * h)
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-300)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    mask = denom > 1e-3 * scale
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(analytic[mask] - numeric[mask]) / denom[mask]))
