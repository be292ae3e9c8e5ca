"""Exact Gaussian process regression with an in-place label-correction rule.

A model holds a set of D-dimensional inputs, M-dimensional targets, a
squared-exponential ARD kernel and a cached Cholesky factorization of
(K + sigma_n^2 I).  All outputs share the same kernel and factorization;
only the target columns differ.

Models are treated as immutable: every mutating operation (``fit``,
``append``, ``correct_labels``) returns a new model and never touches the
caller's copy, so a model can be handed between threads freely.

Two update modes are distinguished:

* ``train``   -- optimize the kernel hyperparameters by maximizing the log
                 marginal likelihood (quasi-Newton, L-BFGS-B), then build
                 the factorization.
* ``fit``     -- rebuild (or grow) the factorization for new data while
                 keeping the hyperparameters fixed.

``correct_labels`` implements the data-efficient correction update: given a
desired output shift ``eps`` at a query point, the targets move by the
minimum-norm increment ``A+ eps`` (pseudoinverse of the prediction-weight
row), which shifts the posterior mean at that point by exactly ``eps``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg as sla
from scipy import optimize as sopt

__all__ = [
    "Hyperparameters",
    "GPModel",
    "Prediction",
    "NumericalFailure",
    "CorrectionUndefined",
    "kernel_eval",
    "kernel_matrix",
    "train",
    "fit",
    "predict",
    "predict_batch",
    "variance_gradient",
    "correct_labels",
    "append",
    "log_marginal_likelihood",
    "model_to_json",
    "model_from_json",
]

# Diagonal jitter escalation, as fractions of the signal variance.
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

# Inputs closer than this (euclidean) are treated as the same point.
DUPLICATE_TOL = 1e-9

# Below this weight-row norm the correction update is ill-defined.
CORRECTION_TOL = 1e-8


class NumericalFailure(RuntimeError):
    """Covariance matrix not positive definite after jitter escalation."""


class CorrectionUndefined(RuntimeError):
    """Prediction weights vanish at the query point; append instead."""


@dataclass(frozen=True)
class Hyperparameters:
    """ARD squared-exponential kernel parameters plus observation noise."""

    lengthscales: np.ndarray        # (D,) one per input dimension, > 0
    signal_variance: float          # sigma_f^2 > 0
    noise_variance: float           # sigma_n^2 >= 0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if not np.all(ls > 0):
            raise ValueError("lengthscales must be positive")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")


@dataclass(frozen=True)
class Prediction:
    """Posterior at one query point."""

    mean: np.ndarray       # (M,)
    variance: float        # scalar, in [0, sigma_f^2]
    weights: np.ndarray    # (n,) row A(xi, x) = k_*^T (K + sigma_n^2 I)^-1


@dataclass(frozen=True)
class GPModel:
    inputs: np.ndarray        # (n, D)
    targets: np.ndarray       # (n, M)
    prior_mean: np.ndarray    # (M,)
    hyper: Hyperparameters
    chol: np.ndarray          # (n, n) lower Cholesky of K + sigma_n^2 I (+ jitter)
    alpha: np.ndarray         # (n, M) solve of (targets - prior_mean)
    jitter: float             # jitter actually applied (fraction of sigma_f^2)
    train_warning: str | None = None

    @property
    def n_points(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

def _scaled_sqdist(x1: np.ndarray, x2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Pairwise squared distance of lengthscale-scaled points, (n1, n2)."""
    a = x1 / lengthscales
    b = x2 / lengthscales
    # (a-b)^2 = a^2 + b^2 - 2ab, clipped against roundoff
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    return np.maximum(sq, 0.0)


def kernel_matrix(x1: np.ndarray, x2: np.ndarray, hyper: Hyperparameters) -> np.ndarray:
    """Squared-exponential covariance between two point sets."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    if x1.shape[1] != hyper.lengthscales.shape[0] or x2.shape[1] != hyper.lengthscales.shape[0]:
        raise ValueError("input dimension does not match lengthscales")
    return hyper.signal_variance * np.exp(-0.5 * _scaled_sqdist(x1, x2, hyper.lengthscales))


def kernel_eval(x1: np.ndarray, x2: np.ndarray, hyper: Hyperparameters) -> float:
    """k(x1, x2) = sigma_f^2 exp(-1/2 sum_d ((x1_d - x2_d)/l_d)^2)."""
    x1 = np.asarray(x1, dtype=float).reshape(1, -1)
    x2 = np.asarray(x2, dtype=float).reshape(1, -1)
    return float(kernel_matrix(x1, x2, hyper)[0, 0])


# ---------------------------------------------------------------------------
# factorization
# ---------------------------------------------------------------------------

def _build_chol(inputs: np.ndarray, hyper: Hyperparameters) -> tuple[np.ndarray, float]:
    """Cholesky of K + sigma_n^2 I, escalating jitter until PD."""
    K = kernel_matrix(inputs, inputs, hyper)
    n = K.shape[0]
    diag = hyper.noise_variance * np.eye(n)
    for level in JITTER_LADDER:
        try:
            L = sla.cholesky(K + diag + level * hyper.signal_variance * np.eye(n), lower=True)
            return L, level
        except sla.LinAlgError:
            continue
    raise NumericalFailure(
        f"covariance matrix of {n} points not positive definite after jitter escalation"
    )


def _chol_append(L: np.ndarray, c12: np.ndarray, c22: float) -> np.ndarray:
    """Grow a lower Cholesky factor by one row/column.

    Falls back to the caller if the appended diagonal loses positivity.
    """
    n = L.shape[0]
    l12 = sla.solve_triangular(L, c12, lower=True)
    d = c22 - float(l12 @ l12)
    if d <= 0.0:
        raise sla.LinAlgError("appended point breaks positive definiteness")
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = L
    out[n, :n] = l12
    out[n, n] = np.sqrt(d)
    return out


def _solve_alpha(L: np.ndarray, targets: np.ndarray, prior_mean: np.ndarray) -> np.ndarray:
    return sla.cho_solve((L, True), targets - prior_mean[None, :])


def _as_model_arrays(inputs, targets, prior_mean, out_dim_hint=None):
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    if prior_mean is None:
        prior_mean = np.zeros(targets.shape[1])
    prior_mean = np.atleast_1d(np.asarray(prior_mean, dtype=float))
    if inputs.shape[0] != targets.shape[0]:
        raise ValueError("inputs and targets must have the same length")
    if inputs.shape[0] < 1:
        raise ValueError("need at least one training point")
    if prior_mean.shape[0] != targets.shape[1]:
        raise ValueError("prior_mean dimension does not match targets")
    return inputs, targets, prior_mean


# ---------------------------------------------------------------------------
# marginal likelihood and training
# ---------------------------------------------------------------------------

def log_marginal_likelihood(
    inputs: np.ndarray,
    targets: np.ndarray,
    hyper: Hyperparameters,
    prior_mean: np.ndarray | None = None,
) -> float:
    """Sum of per-output log marginal likelihoods under the shared kernel."""
    inputs, targets, prior_mean = _as_model_arrays(inputs, targets, prior_mean)
    L, _ = _build_chol(inputs, hyper)
    alpha = _solve_alpha(L, targets, prior_mean)
    r = targets - prior_mean[None, :]
    n, m = targets.shape
    return float(
        -0.5 * np.sum(r * alpha)
        - m * np.sum(np.log(np.diag(L)))
        - 0.5 * n * m * np.log(2.0 * np.pi)
    )


def _nll_and_grad(z, inputs, resid, n, d, m, jitter_floor):
    """Negative LML and gradient in log-parameter space.

    z = [log l_1..log l_D, log sigma_f^2, log sigma_n^2].
    """
    ls = np.exp(z[:d])
    sf2 = np.exp(z[d])
    sn2 = np.exp(z[d + 1])

    sq = _scaled_sqdist(inputs, inputs, ls)
    K = sf2 * np.exp(-0.5 * sq)
    C = K + (sn2 + jitter_floor * sf2) * np.eye(n)
    try:
        L = sla.cholesky(C, lower=True)
    except sla.LinAlgError:
        # escalate jitter locally; optimizer still sees a smooth-ish surface
        for level in JITTER_LADDER[1:]:
            try:
                L = sla.cholesky(C + level * sf2 * np.eye(n), lower=True)
                break
            except sla.LinAlgError:
                continue
        else:
            return 1e25, np.zeros_like(z)

    alpha = sla.cho_solve((L, True), resid)                      # (n, m)
    nll = (
        0.5 * np.sum(resid * alpha)
        + m * np.sum(np.log(np.diag(L)))
        + 0.5 * n * m * np.log(2.0 * np.pi)
    )

    # Q = sum_j alpha_j alpha_j^T - m C^-1 ; dLML/dtheta = 1/2 tr(Q dC/dtheta)
    Cinv = sla.cho_solve((L, True), np.eye(n))
    Q = alpha @ alpha.T - m * Cinv

    grad = np.empty_like(z)
    for k in range(d):
        diff = inputs[:, k][:, None] - inputs[:, k][None, :]
        dC = K * (diff * diff) / ls[k] ** 2
        grad[k] = -0.5 * np.sum(Q * dC)
    grad[d] = -0.5 * np.sum(Q * K)
    grad[d + 1] = -0.5 * sn2 * np.trace(Q)
    return nll, grad


def train(
    inputs: np.ndarray,
    targets: np.ndarray,
    init_hyper: Hyperparameters,
    prior_mean: np.ndarray | None = None,
    lengthscale_bounds: tuple[float, float] = (1e-4, 1e3),
    signal_bounds: tuple[float, float] = (1e-12, 1e8),
    noise_bounds: tuple[float, float] = (1e-12, 1e4),
    maxiter: int = 200,
) -> GPModel:
    """Optimize hyperparameters by marginal-likelihood maximization, then fit.

    A local optimum reached by L-BFGS-B from ``init_hyper`` is accepted.  If
    the optimizer fails or ends below the initial likelihood, the model falls
    back to ``init_hyper`` and carries a ``train_warning``.
    """
    inputs, targets, prior_mean = _as_model_arrays(inputs, targets, prior_mean)
    n, d = inputs.shape
    m = targets.shape[1]
    if n < 2:
        raise ValueError("training requires at least 2 points")

    resid = targets - prior_mean[None, :]
    z0 = np.concatenate([
        np.log(init_hyper.lengthscales),
        [np.log(init_hyper.signal_variance)],
        [np.log(max(init_hyper.noise_variance, noise_bounds[0]))],
    ])
    bounds = (
        [(np.log(lengthscale_bounds[0]), np.log(lengthscale_bounds[1]))] * d
        + [(np.log(signal_bounds[0]), np.log(signal_bounds[1]))]
        + [(np.log(noise_bounds[0]), np.log(noise_bounds[1]))]
    )
    z0 = np.clip(z0, [b[0] for b in bounds], [b[1] for b in bounds])

    warning = None
    try:
        res = sopt.minimize(
            _nll_and_grad,
            z0,
            args=(inputs, resid, n, d, m, JITTER_LADDER[1]),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": maxiter},
        )
        z_opt = res.x
    except Exception as exc:  # optimizer blow-up: keep the initial guess
        warning = f"hyperparameter optimization failed ({exc}); kept initial values"
        z_opt = z0

    if warning is None:
        nll_opt, _ = _nll_and_grad(z_opt, inputs, resid, n, d, m, JITTER_LADDER[1])
        nll_init, _ = _nll_and_grad(z0, inputs, resid, n, d, m, JITTER_LADDER[1])
        if not np.isfinite(nll_opt) or nll_opt > nll_init:
            warning = "optimizer did not improve the marginal likelihood; kept initial values"
            z_opt = z0

    hyper = Hyperparameters(
        lengthscales=np.exp(z_opt[:d]),
        signal_variance=float(np.exp(z_opt[d])),
        noise_variance=float(np.exp(z_opt[d + 1])),
    )
    model = fit_new(inputs, targets, hyper, prior_mean)
    return replace(model, train_warning=warning)


def fit_new(
    inputs: np.ndarray,
    targets: np.ndarray,
    hyper: Hyperparameters,
    prior_mean: np.ndarray | None = None,
) -> GPModel:
    """Build a model from scratch with fixed hyperparameters."""
    inputs, targets, prior_mean = _as_model_arrays(inputs, targets, prior_mean)
    L, jitter = _build_chol(inputs, hyper)
    alpha = _solve_alpha(L, targets, prior_mean)
    return GPModel(inputs=inputs, targets=targets, prior_mean=prior_mean,
                   hyper=hyper, chol=L, alpha=alpha, jitter=jitter)


def fit(model: GPModel, inputs: np.ndarray, targets: np.ndarray) -> GPModel:
    """Rebuild the factorization for new data; hyperparameters untouched."""
    return fit_new(inputs, targets, model.hyper, model.prior_mean)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def predict(model: GPModel, x: np.ndarray) -> Prediction:
    """Posterior mean, variance and the prediction-weight row at ``x``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != model.input_dim:
        raise ValueError("query dimension does not match model inputs")
    kstar = kernel_matrix(model.inputs, x, model.hyper)[:, 0]      # (n,)
    weights = sla.cho_solve((model.chol, True), kstar)             # A^T = C^-1 k*
    mean = model.prior_mean + weights @ (model.targets - model.prior_mean[None, :])
    sf2 = model.hyper.signal_variance
    var = float(np.clip(sf2 - kstar @ weights, 0.0, sf2))
    return Prediction(mean=mean, variance=var, weights=weights)


def predict_batch(model: GPModel, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized means and variances at many points: (m, M), (m,)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    kstar = kernel_matrix(model.inputs, xs, model.hyper)           # (n, m)
    v = sla.cho_solve((model.chol, True), kstar)                   # (n, m)
    means = model.prior_mean[None, :] + v.T @ (model.targets - model.prior_mean[None, :])
    sf2 = model.hyper.signal_variance
    var = np.clip(sf2 - np.sum(kstar * v, axis=0), 0.0, sf2)
    return means, var


def variance_gradient(model: GPModel, x: np.ndarray) -> np.ndarray:
    """Analytic gradient of the posterior variance at ``x``.

    d Sigma / dx = -2 (dk*/dx)^T (K + sigma_n^2 I)^-1 k*
    with dk*_i/dx_d = k(xi_i, x) (xi_i,d - x_d) / l_d^2.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    kstar = kernel_matrix(model.inputs, x[None, :], model.hyper)[:, 0]
    v = sla.cho_solve((model.chol, True), kstar)
    ls2 = model.hyper.lengthscales ** 2
    dk = kstar[:, None] * (model.inputs - x[None, :]) / ls2[None, :]   # (n, D)
    return -2.0 * (dk.T @ v)


def variance_gradient_batch(model: GPModel, xs: np.ndarray) -> np.ndarray:
    """Vectorized ``variance_gradient`` over rows of ``xs``: (m, D)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    kstar = kernel_matrix(model.inputs, xs, model.hyper)           # (n, m)
    v = sla.cho_solve((model.chol, True), kstar)                   # (n, m)
    ls2 = model.hyper.lengthscales ** 2
    # diff[i, j, d] = inputs[i, d] - xs[j, d]
    diff = model.inputs[:, None, :] - xs[None, :, :]
    dk = kstar[:, :, None] * diff / ls2[None, None, :]             # (n, m, D)
    return -2.0 * np.einsum("nmd,nm->md", dk, v)


# ---------------------------------------------------------------------------
# database updates
# ---------------------------------------------------------------------------

def correct_labels(model: GPModel, x: np.ndarray, eps: np.ndarray) -> GPModel:
    """Shift the posterior mean at ``x`` by ``eps`` via the minimum-norm
    target update  y_new = y + A^+ eps  (A^+ = a / (a a^T) for a weight row a).

    Raises ``CorrectionUndefined`` when the weight row is numerically zero,
    in which case the caller should append a new point instead.
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    if eps.shape[0] != model.output_dim:
        raise ValueError("correction dimension does not match model outputs")
    a = predict(model, x).weights
    norm_sq = float(a @ a)
    if np.sqrt(norm_sq) <= CORRECTION_TOL:
        raise CorrectionUndefined(
            "prediction weights vanish at the correction point; append instead"
        )
    new_targets = model.targets + np.outer(a / norm_sq, eps)
    alpha = _solve_alpha(model.chol, new_targets, model.prior_mean)
    return replace(model, targets=new_targets, alpha=alpha)


def append(model: GPModel, x: np.ndarray, y_point: np.ndarray) -> GPModel:
    """Add one training point, growing the factorization in place.

    A point duplicating an existing input (within ``DUPLICATE_TOL``)
    overwrites that input's target instead, keeping the covariance
    well-conditioned.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    y_point = np.atleast_1d(np.asarray(y_point, dtype=float))
    if x.shape[0] != model.input_dim or y_point.shape[0] != model.output_dim:
        raise ValueError("appended point has wrong dimensions")

    dists = np.linalg.norm(model.inputs - x[None, :], axis=1)
    idx = int(np.argmin(dists))
    if dists[idx] <= DUPLICATE_TOL:
        new_targets = model.targets.copy()
        new_targets[idx] = y_point
        alpha = _solve_alpha(model.chol, new_targets, model.prior_mean)
        return replace(model, targets=new_targets, alpha=alpha)

    new_inputs = np.vstack([model.inputs, x[None, :]])
    new_targets = np.vstack([model.targets, y_point[None, :]])
    c12 = kernel_matrix(model.inputs, x[None, :], model.hyper)[:, 0]
    c22 = (
        model.hyper.signal_variance * (1.0 + model.jitter)
        + model.hyper.noise_variance
    )
    try:
        L = _chol_append(model.chol, c12, c22)
        jitter = model.jitter
    except sla.LinAlgError:
        L, jitter = _build_chol(new_inputs, model.hyper)
    alpha = _solve_alpha(L, new_targets, model.prior_mean)
    return replace(model, inputs=new_inputs, targets=new_targets,
                   chol=L, alpha=alpha, jitter=jitter)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def model_to_json(model: GPModel) -> str:
    doc = {
        "inputs": model.inputs.tolist(),
        "targets": model.targets.tolist(),
        "prior_mean": model.prior_mean.tolist(),
        "hyper": {
            "lengthscales": model.hyper.lengthscales.tolist(),
            "signal_variance": model.hyper.signal_variance,
            "noise_variance": model.hyper.noise_variance,
        },
    }
    return json.dumps(doc)


def model_from_json(doc: str | dict) -> GPModel:
    if isinstance(doc, str):
        doc = json.loads(doc)
    hyper = Hyperparameters(
        lengthscales=np.asarray(doc["hyper"]["lengthscales"], dtype=float),
        signal_variance=doc["hyper"]["signal_variance"],
        noise_variance=doc["hyper"]["noise_variance"],
    )
    return fit_new(
        np.asarray(doc["inputs"], dtype=float),
        np.asarray(doc["targets"], dtype=float),
        hyper,
        np.asarray(doc["prior_mean"], dtype=float),
    )
