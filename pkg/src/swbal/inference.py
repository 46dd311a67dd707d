"""Variance estimation for the weighted M-estimates.

Two routes to the asymptotic variance of sqrt(N)(beta_hat - beta):

* ``variance`` implements the influence-function plug-in: a product
  Gaussian kernel supplies the conditional expectations entering the
  efficient influence function

      psi_i = pi_i L'(r_i) m_i  -  pi_i E[L'|T_i,X_i] m_i
              + E[pi L' m | T=T_i]  +  E[pi L' m | X=X_i]

  and V = H^{-1} (1/N sum psi psi') H^{-T}.  The Jacobian H is computed
  by direct differentiation for smooth losses and, for the check loss,
  by the integration-by-parts form built on the kernel density's
  y-derivative.

* ``sandwich_variance_smooth`` stacks the balance moments and the fit
  moment into one M-estimation system over (vec Lambda, beta) and
  returns the lower-right block of the usual sandwich.  Valid for the
  twice-differentiable losses only.

Both return a VarianceEstimate whose intervals come from
``confidence_interval`` using standard normal critical values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .balance import WeightSolution, _pair_features
from .errors import DataError, RankDeficientError
from .mestimate import FitResult
from .model import Dataset

__all__ = [
    "KernelConfig",
    "VarianceEstimate",
    "kernel_density",
    "estimate_H",
    "estimate_influence",
    "variance",
    "sandwich_variance_smooth",
    "confidence_interval",
]

_SQRT2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian product-kernel bandwidths for (Y, T, X1..Xr).

    delta is the density floor used wherever a kernel denominator is
    divided by; None defers to 1e-8 times the average sample density,
    computed per call.
    """

    h_y: float
    h_t: float
    h_x: np.ndarray
    delta: float | None = None

    def __post_init__(self):
        h_x = np.atleast_1d(np.asarray(self.h_x, dtype=float))
        object.__setattr__(self, "h_x", h_x)
        if self.h_y <= 0 or self.h_t <= 0 or np.any(h_x <= 0):
            raise ValueError("bandwidths must be positive")
        if self.delta is not None and self.delta < 0:
            raise ValueError("density floor must be nonnegative")

    @staticmethod
    def from_data(dataset: Dataset, factor: float = 1.06) -> "KernelConfig":
        """Rule-of-thumb bandwidths 1.06 sigma_j N^(-1/(r+6)) per coordinate."""
        n, r = dataset.n, dataset.r
        rate = n ** (-1.0 / (r + 6.0))

        def h(col):
            return factor * max(float(np.std(col, ddof=1)), 1e-12) * rate

        return KernelConfig(
            h_y=h(dataset.y),
            h_t=h(dataset.t),
            h_x=np.array([h(dataset.x[:, j]) for j in range(r)]),
        )


@dataclass(frozen=True)
class VarianceEstimate:
    """Sandwich pieces and the assembled asymptotic variance."""

    h: np.ndarray
    psi_outer: np.ndarray
    v: np.ndarray
    method: str
    cond_h: float
    n_fallback: int = 0

    def se(self, n: int) -> np.ndarray:
        """Standard errors sqrt(diag(V)/n)."""
        return np.sqrt(np.diag(self.v) / n)


# ---------------------------------------------------------------------------
# Kernel building blocks


def _sq_diff(a: np.ndarray, h: float) -> np.ndarray:
    z = (a[None, :] - a[:, None]) / h
    return z * z


def _drop_own(kern: np.ndarray) -> np.ndarray:
    # Plug-ins evaluated at sample points use leave-one-out sums: the
    # own-observation term otherwise dominates small-bandwidth
    # denominators and biases density-score estimates toward zero.
    out = kern.copy()
    np.fill_diagonal(out, 0.0)
    return out


def _kernel_t(dataset: Dataset, config: KernelConfig) -> np.ndarray:
    return np.exp(-0.5 * _sq_diff(dataset.t, config.h_t))


def _kernel_x(dataset: Dataset, config: KernelConfig) -> np.ndarray:
    d = _sq_diff(dataset.x[:, 0], config.h_x[0])
    for j in range(1, dataset.r):
        d += _sq_diff(dataset.x[:, j], config.h_x[j])
    return np.exp(-0.5 * d)


def _density_scale(dims: int, n: int, h_prod: float) -> float:
    # Converts a raw kernel row-sum into a density value.
    return 1.0 / (n * _SQRT2PI**dims * h_prod)


def _resolve_delta(dataset: Dataset, config: KernelConfig, k_y, k_t, k_x) -> float:
    if config.delta is not None:
        return max(config.delta, 1e-12)
    h_prod = config.h_y * config.h_t * float(np.prod(config.h_x))
    f_all = (k_y * k_t * k_x).sum(axis=1) * _density_scale(dataset.r + 2, dataset.n, h_prod)
    return max(1e-8 * float(f_all.mean()), 1e-300)


def kernel_density(point, dataset: Dataset, config: KernelConfig):
    """Density f(y, t, x) and its partial derivative in y.

    point is a (y, t, x-vector) triple.  The density is floored at the
    configured delta; the derivative is returned as computed.
    """
    y0, t0, x0 = point
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    zy = (dataset.y - y0) / config.h_y
    k = np.exp(-0.5 * zy * zy)
    k *= np.exp(-0.5 * ((dataset.t - t0) / config.h_t) ** 2)
    for j in range(dataset.r):
        k *= np.exp(-0.5 * ((dataset.x[:, j] - x0[j]) / config.h_x[j]) ** 2)
    h_prod = config.h_y * config.h_t * float(np.prod(config.h_x))
    scale = _density_scale(dataset.r + 2, dataset.n, h_prod)
    f = float(k.sum()) * scale
    df_dy = float((k * (dataset.y - y0)).sum()) / config.h_y**2 * scale
    delta = config.delta if config.delta is not None else 0.0
    return max(f, delta), df_dy


def _nw_rows(kern: np.ndarray, z: np.ndarray, dens: np.ndarray, delta: float,
             counter: list):
    """Nadaraya-Watson fitted values at the sample points.

    kern is the N x N kernel matrix, z the regressand (N,) or (N, p);
    rows whose density denominator falls below delta fall back to the
    global mean and are counted.
    """
    z2 = z if z.ndim == 2 else z[:, None]
    num = kern @ z2
    den = kern.sum(axis=1)
    bad = dens < delta
    counter[0] += int(bad.sum())
    den = np.where(bad, 1.0, den)
    out = num / den[:, None]
    if bad.any():
        out[bad] = z2.mean(axis=0)
    return out if z.ndim == 2 else out[:, 0]


# ---------------------------------------------------------------------------
# H, psi, and the assembled variance


def estimate_H(
    dataset: Dataset,
    weights: np.ndarray,
    fit: FitResult,
    config: KernelConfig | None = None,
    method: str | None = None,
) -> np.ndarray:
    """Jacobian H of the weighted first-order condition at beta_hat.

    method "direct" differentiates the moment exactly,
    H = (1/N) sum pi L''(r) m m' (smooth losses only; for the squared
    loss this is (2/N) sum pi m m').  method "kernel" uses the
    integration-by-parts identity
    H = -(1/N) sum pi L'(r) (d_y f / f) m m', which also covers the
    check loss.  Links are linear in beta, so the grad-m term is zero.
    """
    w = np.asarray(weights, dtype=float)
    m = fit.link.gradient(dataset.t)
    r = dataset.y - fit.link.predict(dataset.t, fit.beta)
    if method is None:
        method = "direct" if fit.loss.smooth else "kernel"
    if method == "direct":
        if not fit.loss.smooth:
            raise ValueError("direct H needs a twice-differentiable loss")
        return m.T @ (m * (w * fit.loss.second_derivative(r))[:, None]) / dataset.n
    if method != "kernel":
        raise ValueError(f"unknown H method {method!r}")
    config = config or KernelConfig.from_data(dataset)
    k_y = np.exp(-0.5 * _sq_diff(dataset.y, config.h_y))
    k_t = _kernel_t(dataset, config)
    k_x = _kernel_x(dataset, config)
    delta = _resolve_delta(dataset, config, k_y, k_t, k_x)
    k_full = _drop_own(k_y * k_t * k_x)
    h_prod = config.h_y * config.h_t * float(np.prod(config.h_x))
    scale = _density_scale(dataset.r + 2, dataset.n - 1, h_prod)
    f = k_full.sum(axis=1) * scale
    df_dy = (k_full @ dataset.y - k_full.sum(axis=1) * dataset.y) / config.h_y**2 * scale
    ratio = df_dy / np.maximum(f, delta)
    lp = fit.loss.derivative(r)
    return -(m.T @ (m * (w * lp * ratio)[:, None])) / dataset.n


def estimate_influence(
    dataset: Dataset,
    weights: np.ndarray,
    fit: FitResult,
    config: KernelConfig | None = None,
):
    """Plug-in of the efficient influence function at each observation.

    Returns (psi, n_fallback) where psi is N x p and n_fallback counts
    kernel regressions that hit an empty effective neighborhood.
    """
    config = config or KernelConfig.from_data(dataset)
    w = np.asarray(weights, dtype=float)
    n, r = dataset.n, dataset.r
    m = fit.link.gradient(dataset.t)
    resid = dataset.y - fit.link.predict(dataset.t, fit.beta)
    lp = fit.loss.derivative(resid)

    k_t = _kernel_t(dataset, config)
    k_x = _kernel_x(dataset, config)
    k_y = np.exp(-0.5 * _sq_diff(dataset.y, config.h_y))
    delta = _resolve_delta(dataset, config, k_y, k_t, k_x)
    del k_y
    k_t = _drop_own(k_t)
    k_x = _drop_own(k_x)
    k_tx = k_t * k_x

    dens_t = k_t.sum(axis=1) * _density_scale(1, n - 1, config.h_t)
    dens_x = k_x.sum(axis=1) * _density_scale(r, n - 1, float(np.prod(config.h_x)))
    dens_tx = k_tx.sum(axis=1) * _density_scale(
        r + 1, n - 1, config.h_t * float(np.prod(config.h_x))
    )

    counter = [0]
    e_lp_tx = _nw_rows(k_tx, lp, dens_tx, delta, counter)
    g = (w * lp)[:, None] * m
    c_t = _nw_rows(k_t, g, dens_t, delta, counter)
    c_x = _nw_rows(k_x, g, dens_x, delta, counter)

    psi = g - (w * e_lp_tx)[:, None] * m + c_t + c_x
    return psi, counter[0]


def variance(
    dataset: Dataset,
    weights: np.ndarray,
    fit: FitResult,
    config: KernelConfig | None = None,
    h_method: str | None = None,
) -> VarianceEstimate:
    """Influence-function variance estimate V = H^-1 Psi H^-T."""
    config = config or KernelConfig.from_data(dataset)
    h = estimate_H(dataset, weights, fit, config, h_method)
    cond = float(np.linalg.cond(h))
    if not np.isfinite(cond) or cond > 1e12:
        raise RankDeficientError(f"singular H in variance estimate (cond ~ {cond:.2e})")
    psi, n_fallback = estimate_influence(dataset, weights, fit, config)
    psi_outer = psi.T @ psi / dataset.n
    hinv = np.linalg.inv(h)
    v = hinv @ psi_outer @ hinv.T
    v = 0.5 * (v + v.T)
    return VarianceEstimate(
        h=h, psi_outer=psi_outer, v=v, method="kernel", cond_h=cond,
        n_fallback=n_fallback,
    )


def fixed_weight_variance(dataset: Dataset, weights: np.ndarray, fit: FitResult) -> VarianceEstimate:
    """Sandwich treating the weights as known constants.

    This is the asymptotic variance of the estimator that uses true
    stabilized weights rather than estimated ones:
    H^-1 E[pi^2 L'(r)^2 m m'] H^-T.  Requires a smooth loss for the
    direct H.
    """
    w = np.asarray(weights, dtype=float)
    m = fit.link.gradient(dataset.t)
    r = dataset.y - fit.link.predict(dataset.t, fit.beta)
    h = estimate_H(dataset, w, fit, method="direct")
    cond = float(np.linalg.cond(h))
    if not np.isfinite(cond) or cond > 1e12:
        raise RankDeficientError(f"singular H in variance estimate (cond ~ {cond:.2e})")
    score = (w * fit.loss.derivative(r))[:, None] * m
    psi_outer = score.T @ score / dataset.n
    hinv = np.linalg.inv(h)
    v = hinv @ psi_outer @ hinv.T
    v = 0.5 * (v + v.T)
    return VarianceEstimate(h=h, psi_outer=psi_outer, v=v, method="fixed-weight", cond_h=cond)


def sandwich_variance_smooth(
    dataset: Dataset,
    u: np.ndarray,
    v: np.ndarray,
    solution: WeightSolution,
    fit: FitResult,
) -> VarianceEstimate:
    """Stacked-moment sandwich over (vec Lambda, beta) for smooth losses.

    The moment vector per observation stacks the K1*K2 centered balance
    moments phi_i with the p fit moments pi_i L'(r_i) m_i; the variance
    of beta_hat is the lower-right p x p block of J^-1 M J^-T with
    J the average moment Jacobian and M the average moment outer
    product.
    """
    if not fit.loss.smooth:
        raise ValueError("sandwich variance requires a twice-differentiable loss")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = dataset.n
    k1, k2 = u.shape[1], v.shape[1]
    k = k1 * k2
    p = fit.p

    w_feat = _pair_features(u, v)
    lam_vec = solution.lam.reshape(k, order="F")
    s = w_feat @ lam_vec
    pi = np.exp(-s - 1.0)
    ubar = u.mean(axis=0)
    vbar = v.mean(axis=0)

    phi = (
        pi[:, None] * w_feat
        - np.einsum("a,ib->iba", ubar, v).reshape(n, k)
        - np.einsum("ia,b->iba", u, vbar).reshape(n, k)
        + np.kron(vbar, ubar)[None, :]
    )
    m = fit.link.gradient(dataset.t)
    r = dataset.y - fit.link.predict(dataset.t, fit.beta)
    lp = fit.loss.derivative(r)
    lpp = fit.loss.second_derivative(r)
    g = (pi * lp)[:, None] * m

    h_all = np.hstack([phi, g])
    mom_outer = h_all.T @ h_all / n

    jac = np.zeros((k + p, k + p))
    jac[:k, :k] = -(w_feat.T @ (w_feat * pi[:, None])) / n
    jac[k:, :k] = -(m * (pi * lp)[:, None]).T @ w_feat / n
    jac[k:, k:] = -(m.T @ (m * (pi * lpp)[:, None])) / n

    cond = float(np.linalg.cond(jac))
    if not np.isfinite(cond) or cond > 1e12:
        raise RankDeficientError(f"singular stacked Jacobian (cond ~ {cond:.2e})")
    jinv = np.linalg.inv(jac)
    v_full = jinv @ mom_outer @ jinv.T
    v_beta = v_full[k:, k:]
    v_beta = 0.5 * (v_beta + v_beta.T)
    # Sign matches estimate_H: the moment Jacobian block is -H.
    h_beta = -jac[k:, k:]
    psi_outer = mom_outer[k:, k:]
    return VarianceEstimate(
        h=h_beta, psi_outer=psi_outer, v=v_beta, method="sandwich", cond_h=cond
    )


def confidence_interval(beta: np.ndarray, v: np.ndarray, n: int, level: float = 0.95):
    """Per-coefficient normal bands beta_j +- z sqrt(V_jj / n)."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    beta = np.asarray(beta, dtype=float)
    diag = np.diag(np.asarray(v, dtype=float))
    if np.any(diag < -1e-12):
        raise DataError("variance matrix has a negative diagonal entry")
    z = stats.norm.ppf(0.5 + level / 2.0)
    half = z * np.sqrt(np.maximum(diag, 0.0) / n)
    return beta - half, beta + half
