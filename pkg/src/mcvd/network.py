"""Feedforward network mapping system parameters to channel-model
coefficients, trained by Levenberg-Marquardt under Bayesian regularization.

Architecture: 4 inputs -> H tanh units -> linear outputs (1 coefficient for
the primitive model, 3 for the enhanced). Inputs and targets are scaled to
[-1, 1] by training-set min/max. The training objective is

    F = beta * E_D + alpha * E_W,    E_D = sum of squared normalized errors,
                                     E_W = 0.5 * sum of squared weights,

with (alpha, beta) re-estimated each epoch from the evidence approximation:
gamma = k - alpha * tr(H^-1), alpha = gamma / (2 E_W),
beta = (N - gamma) / (2 E_D), H the Gauss-Newton approximation of the
objective Hessian at the settled weights.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .fitting import default_bounds
from .types import ModelKind, ModelParams, Provenance, SystemParams, ValidationError

__all__ = [
    "CaseRecord",
    "Network",
    "TrainReport",
    "train",
    "forward",
    "gradient_check",
]

logger = logging.getLogger(__name__)

N_INPUTS = 4
DEFAULT_HIDDEN = 10
MAX_EPOCHS = 300
OBJECTIVE_REL_TOL = 1e-9
INNER_MAX_STEPS = 60
LAMBDA_MIN = 1e-12
LAMBDA_MAX = 1e12
HYPER_MIN = 1e-12
HYPER_MAX = 1e12


@dataclass(frozen=True)
class CaseRecord:
    """One (system parameters -> model coefficients) pair."""

    input: SystemParams
    output: ModelParams
    provenance: Provenance

    def __post_init__(self) -> None:
        object.__setattr__(self, "provenance", Provenance(self.provenance))


@dataclass
class TrainReport:
    epochs: int
    e_d: float
    e_w: float
    alpha: float
    beta: float
    gamma: float
    degenerate_targets: bool = False

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.beta <= 0:
            raise ValidationError("alpha and beta must be positive")


@dataclass
class Network:
    """Weights plus the normalization metadata needed to apply them."""

    kind: ModelKind
    w1: np.ndarray            # (hidden, 4)
    b1: np.ndarray            # (hidden,)
    w2: np.ndarray            # (out, hidden)
    b2: np.ndarray            # (out,)
    in_min: np.ndarray
    in_max: np.ndarray
    out_min: np.ndarray
    out_max: np.ndarray

    def __post_init__(self) -> None:
        self.kind = ModelKind(self.kind)
        if np.any(self.in_min >= self.in_max) or np.any(self.out_min >= self.out_max):
            raise ValidationError("normalization mins must be strictly below maxes")

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    @property
    def n_weights(self) -> int:
        h, o = self.hidden, self.out_dim
        return h * (N_INPUTS + 1) + o * (h + 1)

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def set_flat_weights(self, w: np.ndarray) -> None:
        h, o = self.hidden, self.out_dim
        i = 0
        self.w1 = w[i:i + h * N_INPUTS].reshape(h, N_INPUTS).copy(); i += h * N_INPUTS
        self.b1 = w[i:i + h].copy(); i += h
        self.w2 = w[i:i + o * h].reshape(o, h).copy(); i += o * h
        self.b2 = w[i:i + o].copy()

    def normalize_inputs(self, raw: np.ndarray) -> np.ndarray:
        return 2.0 * (raw - self.in_min) / (self.in_max - self.in_min) - 1.0

    def denormalize_outputs(self, scaled: np.ndarray) -> np.ndarray:
        return self.out_min + (scaled + 1.0) * (self.out_max - self.out_min) / 2.0

    def normalize_targets(self, raw: np.ndarray) -> np.ndarray:
        return 2.0 * (raw - self.out_min) / (self.out_max - self.out_min) - 1.0


def _params_as_row(p: SystemParams) -> np.ndarray:
    return np.array([p.d, p.r_tx, p.r_rx, p.diff_coeff])


def _forward_scaled(net: Network, x_scaled: np.ndarray) -> np.ndarray:
    """Network map in normalized coordinates; x_scaled is (n, 4)."""
    hidden = np.tanh(x_scaled @ net.w1.T + net.b1)
    return hidden @ net.w2.T + net.b2


def _output_jacobian(net: Network, x_scaled: np.ndarray) -> np.ndarray:
    """d y[n, o] / d w for all records; rows ordered record-major.

    Same backward pass the trainer uses for its Gauss-Newton matrices.
    """
    n = x_scaled.shape[0]
    h, o = net.hidden, net.out_dim
    hid = np.tanh(x_scaled @ net.w1.T + net.b1)          # (n, h)
    gate = 1.0 - hid**2                                   # (n, h)
    k = net.n_weights
    jac = np.zeros((n * o, k))
    d_w1 = (net.w2[None, :, :] * gate[:, None, :])[:, :, :, None] * x_scaled[:, None, None, :]
    jac[:, :h * N_INPUTS] = d_w1.reshape(n * o, h * N_INPUTS)
    ofs = h * N_INPUTS
    jac[:, ofs:ofs + h] = (net.w2[None, :, :] * gate[:, None, :]).reshape(n * o, h)
    ofs += h
    d_w2 = np.zeros((n, o, o, h))
    idx = np.arange(o)
    d_w2[:, idx, idx, :] = hid[:, None, :]
    jac[:, ofs:ofs + o * h] = d_w2.reshape(n * o, o * h)
    ofs += o * h
    d_b2 = np.zeros((n, o, o))
    d_b2[:, idx, idx] = 1.0
    jac[:, ofs:] = d_b2.reshape(n * o, o)
    return jac


def _normalization_bounds(values: np.ndarray, pad: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Column min/max, widened symmetrically where a column is constant."""
    vmin = values.min(axis=0).astype(float)
    vmax = values.max(axis=0).astype(float)
    flat = vmax - vmin <= 0
    vmin[flat] -= pad
    vmax[flat] += pad
    return vmin, vmax


def _init_network(kind: ModelKind, hidden: int, out_dim: int, seed: int,
                  in_min, in_max, out_min, out_max) -> Network:
    rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence(seed)))
    w1 = rng.uniform(-1.0, 1.0, (hidden, N_INPUTS)) / np.sqrt(N_INPUTS)
    w2 = rng.uniform(-1.0, 1.0, (out_dim, hidden)) / np.sqrt(hidden)
    return Network(kind, w1, np.zeros(hidden), w2, np.zeros(out_dim),
                   np.asarray(in_min, float), np.asarray(in_max, float),
                   np.asarray(out_min, float), np.asarray(out_max, float))


def train(dataset: list[CaseRecord], hidden: int = DEFAULT_HIDDEN,
          seed: int = 0, max_epochs: int = MAX_EPOCHS) -> tuple[Network, TrainReport]:
    """Bayesian-regularized Levenberg-Marquardt training.

    Each epoch runs the damped Gauss-Newton inner loop to convergence at the
    current (alpha, beta), then re-estimates the hyperparameters from the
    evidence approximation. Training stops when an epoch's inner loop no
    longer improves the objective by more than 1e-9 relative, or after
    max_epochs. Fully deterministic for a fixed seed.
    """
    if len(dataset) < 10:
        raise ValidationError("training requires at least 10 records")
    kinds = {r.output.kind for r in dataset}
    if len(kinds) != 1:
        raise ValidationError("dataset mixes model kinds")
    kind = kinds.pop()
    out_dim = 1 if kind is ModelKind.PRIMITIVE else 3

    x_raw = np.array([_params_as_row(r.input) for r in dataset])
    t_raw = np.array([r.output.coefficients() for r in dataset])
    degenerate = bool(np.any(t_raw.max(axis=0) - t_raw.min(axis=0) <= 0))
    if degenerate:
        warnings.warn("constant target column(s): fit is degenerate in those outputs",
                      stacklevel=2)
    in_min, in_max = _normalization_bounds(x_raw)
    out_min, out_max = _normalization_bounds(t_raw)
    net = _init_network(kind, hidden, out_dim, seed, in_min, in_max, out_min, out_max)

    x = net.normalize_inputs(x_raw)
    t = net.normalize_targets(t_raw)
    n_targets = t.size
    k = net.n_weights
    w = net.flat_weights()
    eye = np.eye(k)

    def evaluate(wv: np.ndarray) -> tuple[np.ndarray, float, float]:
        net.set_flat_weights(wv)
        r = (_forward_scaled(net, x) - t).ravel()
        return r, float(r @ r), 0.5 * float(wv @ wv)

    resid, e_d, e_w = evaluate(w)
    alpha, beta = 0.0, 1.0
    gamma = float(k)
    lam = 1e-3
    epochs = 0
    for _ in range(max_epochs):
        epochs += 1
        # anchor at this epoch's (alpha, beta): the stop test below compares
        # against the same hyperparameters, since the evidence re-estimate
        # renormalizes F to a constant and would otherwise mask progress
        f_anchor = beta * e_d + alpha * e_w
        # inner damped Gauss-Newton loop at fixed (alpha, beta)
        for _ in range(INNER_MAX_STEPS):
            f_cur = beta * e_d + alpha * e_w
            net.set_flat_weights(w)
            jac = _output_jacobian(net, x)
            jtj = jac.T @ jac
            grad = 2.0 * beta * (jac.T @ resid) + alpha * w
            if np.max(np.abs(grad)) < 1e-12:
                break
            stepped = False
            while lam <= LAMBDA_MAX:
                try:
                    delta = np.linalg.solve(2.0 * beta * jtj + (alpha + lam) * eye, -grad)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                r_new, e_d_new, e_w_new = evaluate(w + delta)
                f_new = beta * e_d_new + alpha * e_w_new
                if np.isfinite(f_new) and f_new < f_cur:
                    w = w + delta
                    resid, e_d, e_w = r_new, e_d_new, e_w_new
                    lam = max(lam / 10.0, LAMBDA_MIN)
                    stepped = True
                    break
                lam *= 10.0
            if not stepped:
                lam = 1e-3
                break
            if (f_cur - (beta * e_d + alpha * e_w)) <= 1e-12 * max(f_cur, 1e-300):
                break
        f_after_inner = beta * e_d + alpha * e_w
        # evidence re-estimation at the settled weights
        net.set_flat_weights(w)
        jac = _output_jacobian(net, x)
        hess = 2.0 * beta * (jac.T @ jac) + alpha * eye
        if alpha == 0.0:
            gamma = float(k)
        else:
            try:
                gamma = float(k - alpha * np.trace(np.linalg.inv(hess)))
            except np.linalg.LinAlgError:
                gamma = float(k)
        gamma = float(np.clip(gamma, 0.0, k))
        alpha = float(np.clip(gamma / max(2.0 * e_w, 1e-300), HYPER_MIN, HYPER_MAX))
        beta = float(np.clip(max(n_targets - gamma, 1e-3) / max(2.0 * e_d, 1e-300),
                             HYPER_MIN, HYPER_MAX))
        if epochs > 1 and \
                (f_anchor - f_after_inner) <= OBJECTIVE_REL_TOL * max(abs(f_anchor), 1e-300):
            break
    net.set_flat_weights(w)
    report = TrainReport(epochs=epochs, e_d=e_d, e_w=e_w, alpha=alpha, beta=beta,
                         gamma=gamma, degenerate_targets=degenerate)
    return net, report


def forward(net: Network, p: SystemParams) -> ModelParams:
    """Predict model coefficients for one case, clamped to the fitter bounds.

    Inputs outside the training normalization range are allowed and logged:
    the standard validation grid probes radii below the training radii, so
    extrapolation is an expected use, not an error.
    """
    raw = _params_as_row(p)
    if np.any(raw < net.in_min) or np.any(raw > net.in_max):
        logger.info("forward: input %s extrapolates beyond the training range", p)
    scaled = net.normalize_inputs(raw[None, :])
    out = net.denormalize_outputs(_forward_scaled(net, scaled)[0])
    bounds = default_bounds(net.kind)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return ModelParams.from_coefficients(net.kind, np.clip(out, lo, hi))


def gradient_check(net: Network, record: CaseRecord) -> float:
    """Max masked relative deviation between the analytic Jacobian of the
    normalized network outputs w.r.t. the weights and central finite
    differences with step 1e-6.

    Entries below 1e-3 of the Jacobian's overall magnitude are excluded:
    there the comparison would measure finite-difference rounding, not the
    backward pass. A wrong backward pass shows up at full scale.
    """
    x_scaled = net.normalize_inputs(_params_as_row(record.input)[None, :])
    analytic = _output_jacobian(net, x_scaled)
    w0 = net.flat_weights()
    numeric = np.empty_like(analytic)
    h = 1e-6
    for i in range(w0.size):
        wp = w0.copy(); wp[i] += h
        wm = w0.copy(); wm[i] -= h
        net.set_flat_weights(wp)
        y_up = _forward_scaled(net, x_scaled).ravel()
        net.set_flat_weights(wm)
        y_dn = _forward_scaled(net, x_scaled).ravel()
        numeric[:, i] = (y_up - y_dn) / (2.0 * h)
    net.set_flat_weights(w0)
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-300)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    mask = denom > 1e-3 * scale
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(analytic[mask] - numeric[mask]) / denom[mask]))
