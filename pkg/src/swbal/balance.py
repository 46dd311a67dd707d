"""Stabilized balancing weights via a concave dual program.

The weights solve the maximum-entropy primal

    max_{pi > 0}  - sum_i pi_i log pi_i
    s.t.          (1/N) sum_i pi_i u(T_i) v(X_i)' = u-bar v-bar'

whose dual is the strictly concave, unconstrained problem

    max_Lambda  G(Lambda) = (1/N) sum_i rho(u_i' Lambda v_i) - u-bar' Lambda v-bar

with rho(s) = -exp(-s - 1).  The optimal weights are
pi_i = rho'(u_i' Lambda v_i) = exp(-u_i' Lambda v_i - 1) > 0, and the
dual gradient at the solution equals the balance residual, so balance
holds to solver tolerance by construction.

``solve_weights`` runs a damped Newton ascent with the exact Hessian
(rho'' = -rho', so the Hessian is -(1/N) sum_i pi_i w_i w_i' with
w_i = v_i kron u_i).  ``primal_entropy_oracle`` solves the same program
by Newton iteration on the primal KKT system instead; it shares no code
with the dual route and exists to cross-check it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BalanceInfeasibleError, NotConvergedError

__all__ = [
    "WeightSolution",
    "dual_objective",
    "solve_weights",
    "balance_residual",
    "primal_entropy_oracle",
]


def _pair_features(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rows w_i = vec(u_i v_i') in column-major order, shape (N, K1*K2)."""
    n, k1 = u.shape
    k2 = v.shape[1]
    return np.einsum("ia,ib->iba", u, v).reshape(n, k1 * k2)


def dual_objective(lam: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Dual value and gradient at Lambda.

    Returns (value, gradient) with the gradient shaped K1 x K2;
    the gradient equals the balance residual of the implied weights.
    Overflow of exp for very negative scores yields -inf in the value,
    which callers treat as a diverged trial point.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    lam = np.asarray(lam, dtype=float)
    s = np.einsum("ia,ab,ib->i", u, lam, v)
    with np.errstate(over="ignore", under="ignore"):
        pi = np.exp(-s - 1.0)
    ubar = u.mean(axis=0)
    vbar = v.mean(axis=0)
    value = -pi.mean() - ubar @ lam @ vbar
    grad = (u * pi[:, None]).T @ v / u.shape[0] - np.outer(ubar, vbar)
    return value, grad


def balance_residual(weights: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(1/N) sum_i pi_i u_i v_i' - u-bar v-bar', shape K1 x K2."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(weights, dtype=float)
    return (u * w[:, None]).T @ v / u.shape[0] - np.outer(u.mean(axis=0), v.mean(axis=0))


@dataclass(frozen=True)
class WeightSolution:
    """Weights and dual multipliers from one balance solve."""

    weights: np.ndarray
    lam: np.ndarray
    converged: bool
    iterations: int
    gradient_norm: float
    objective: float

    @property
    def ess(self) -> float:
        """Effective sample size (sum pi)^2 / sum pi^2."""
        s = self.weights.sum()
        return float(s * s / (self.weights @ self.weights))


# Multiplier norm beyond which the dual is treated as unbounded
# (infeasible primal constraints).
_DIVERGE_NORM = 1e6


def solve_weights(
    u: np.ndarray,
    v: np.ndarray,
    *,
    tol: float = 1e-9,
    max_iter: int = 200,
    ridge: float = 1e-10,
) -> WeightSolution:
    """Maximize the dual by damped Newton with Armijo backtracking.

    Parameters
    ----------
    u, v : ndarray
        Treatment and covariate basis matrices, shape (N, K1) and
        (N, K2).  Expected to be orthonormalized (see sieve module);
        the resulting weights are invariant to that choice, but the
        Newton system is best conditioned with it.
    tol : float
        Convergence when the gradient max-norm is below
        tol * (1 + |objective|).
    ridge : float
        Relative Tikhonov term added to the Newton system when the
        Hessian factorization fails.

    Raises
    ------
    BalanceInfeasibleError
        If the multiplier norm exceeds 1e6 with the gradient still far
        from zero, the telltale of inconsistent balance constraints.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n, k1 = u.shape
    k2 = v.shape[1]
    if v.shape[0] != n:
        raise ValueError("u and v must have the same number of rows")
    w = _pair_features(u, v)
    wbar = np.kron(v.mean(axis=0), u.mean(axis=0))

    lam_vec = np.zeros(k1 * k2)
    cu = _constant_col(u)
    cv = _constant_col(v)
    if cu is not None and cv is not None:
        # Start at uniform weights: with unit constant columns the
        # score is -1 for every observation, so pi = 1.
        lam_vec[cu + k1 * cv] = -1.0 / (u[0, cu] * v[0, cv])

    value, grad_vec, pi = _dual_parts(lam_vec, w, wbar)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        gnorm = np.abs(grad_vec).max()
        # Divergence check first: an unbounded ascent inflates |value|
        # and with it the relative tolerance, so the order matters.
        if np.abs(lam_vec).max() > _DIVERGE_NORM:
            raise BalanceInfeasibleError(
                "balance constraints look infeasible: multiplier norm "
                f"exceeded {_DIVERGE_NORM:g} with gradient max-norm {gnorm:.3e}"
            )
        if gnorm <= tol * (1.0 + abs(value)):
            return WeightSolution(
                weights=pi,
                lam=lam_vec.reshape(k1, k2, order="F"),
                converged=True,
                iterations=iterations - 1,
                gradient_norm=float(gnorm),
                objective=float(value),
            )
        neg_hess = w.T @ (w * pi[:, None]) / n
        step = _solve_spd(neg_hess, grad_vec, ridge)
        descent = grad_vec @ step
        if not np.isfinite(descent) or descent <= 0:
            step = grad_vec.copy()
            descent = grad_vec @ step
        alpha = 1.0
        while alpha > 1e-13:
            trial = lam_vec + alpha * step
            t_value, t_grad, t_pi = _dual_parts(trial, w, wbar)
            if np.isfinite(t_value) and t_value >= value + 1e-4 * alpha * descent:
                lam_vec, value, grad_vec, pi = trial, t_value, t_grad, t_pi
                break
            alpha *= 0.5
        else:
            # No ascent possible at floating-point resolution.
            break

    gnorm = float(np.abs(grad_vec).max())
    return WeightSolution(
        weights=pi,
        lam=lam_vec.reshape(k1, k2, order="F"),
        converged=bool(gnorm <= tol * (1.0 + abs(value))),
        iterations=iterations,
        gradient_norm=gnorm,
        objective=float(value),
    )


def _dual_parts(lam_vec, w, wbar):
    s = w @ lam_vec
    with np.errstate(over="ignore", under="ignore"):
        pi = np.exp(-s - 1.0)
    value = -pi.mean() - wbar @ lam_vec if np.all(np.isfinite(pi)) else -np.inf
    grad = w.T @ pi / w.shape[0] - wbar if np.isfinite(value) else np.full_like(lam_vec, np.nan)
    return value, grad, pi


def _solve_spd(a: np.ndarray, b: np.ndarray, ridge: float) -> np.ndarray:
    scale = np.trace(a) / a.shape[0]
    bump = 0.0
    for _ in range(8):
        try:
            c = np.linalg.cholesky(a + bump * np.eye(a.shape[0]))
        except np.linalg.LinAlgError:
            bump = ridge * scale if bump == 0.0 else bump * 100.0
            continue
        y = np.linalg.solve(c, b)
        return np.linalg.solve(c.T, y)
    return b.copy()


def _constant_col(a: np.ndarray) -> int | None:
    for j in range(a.shape[1]):
        if np.ptp(a[:, j]) == 0.0 and a[0, j] != 0.0:
            return j
    return None


def primal_entropy_oracle(
    u: np.ndarray,
    v: np.ndarray,
    *,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> np.ndarray:
    """Solve the entropy primal directly via Newton on its KKT system.

    Independent of the dual route: iterates on (pi, nu) where nu are the
    equality multipliers, eliminating pi from the linearized system at
    each step and holding pi > 0 with a fraction-to-boundary rule.
    Returns the weight vector.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = u.shape[0]
    a = _pair_features(u, v).T / n  # K x N, so a @ pi is the moment vector
    b = np.kron(v.mean(axis=0), u.mean(axis=0))
    k = a.shape[0]

    pi = np.ones(n)
    nu = np.zeros(k)
    for _ in range(max_iter):
        f1 = -np.log(pi) - 1.0 - a.T @ nu
        f2 = a @ pi - b
        if max(np.abs(f1).max(), np.abs(f2).max()) < tol:
            return pi
        # Eliminate the pi block: [a diag(pi) a'] dnu = f2 + a (pi * f1).
        m = (a * pi[None, :]) @ a.T
        rhs = f2 + a @ (pi * f1)
        try:
            dnu = np.linalg.solve(m + 1e-14 * np.trace(m) / k * np.eye(k), rhs)
        except np.linalg.LinAlgError as exc:
            raise NotConvergedError("singular KKT system in entropy oracle") from exc
        dpi = pi * (f1 - a.T @ dnu)
        alpha = 1.0
        shrink = dpi < 0
        if shrink.any():
            alpha = min(1.0, 0.995 * np.min(-pi[shrink] / dpi[shrink]))
        pi = pi + alpha * dpi
        nu = nu + alpha * dnu
        if not np.all(np.isfinite(pi)) or np.abs(np.log(np.abs(pi) + 1e-300)).max() > 700:
            raise BalanceInfeasibleError("entropy oracle diverged; constraints likely infeasible")
    raise NotConvergedError(f"entropy oracle did not reach tol={tol:g} in {max_iter} steps")
