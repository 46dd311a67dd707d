"""Core data and model types: datasets, loss functions, outcome links.

The estimators in this package minimize a weighted sum of a convex loss
``L`` applied to residuals ``Y - g(T; beta)``, where the link ``g`` is
linear in ``beta``: ``g(t; beta) = m(t)' beta`` with gradient ``m``.
Losses target the weighted mean (squared error), a quantile (check loss),
or an expectile (asymmetric squared error) of the balanced outcome.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = [
    "Dataset",
    "LossSpec",
    "squared_error",
    "check",
    "asymmetric_squared",
    "LinkSpec",
    "polynomial_link",
    "indicator_link",
]


@dataclass(frozen=True)
class Dataset:
    """Outcome, treatment, and covariates for one sample.

    Parameters
    ----------
    y : ndarray, shape (N,)
        Outcome.
    t : ndarray, shape (N,)
        Treatment, binary, discrete, or continuous.
    x : ndarray, shape (N, r)
        Covariates, one row per observation.
    """

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.t, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise DataError(f"x must be 2-D (N, r), got ndim={x.ndim}")
        if y.ndim != 1 or t.ndim != 1:
            raise DataError("y and t must be 1-D")
        n = y.shape[0]
        if t.shape[0] != n or x.shape[0] != n:
            raise DataError(
                f"length mismatch: y has {n}, t has {t.shape[0]}, x has {x.shape[0]}"
            )
        if n < 2:
            raise DataError(f"need at least 2 observations, got {n}")
        if x.shape[1] < 1:
            raise DataError("x must have at least one column")
        for name, arr in (("y", y), ("t", t), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in {name}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def r(self) -> int:
        return self.x.shape[1]


# ---------------------------------------------------------------------------
# Losses


@dataclass(frozen=True)
class LossSpec:
    """Convex residual loss with kind "squared", "check", or "expectile".

    ``derivative`` uses the convention I(0 <= 0) = 1 at the check-loss
    kink, so L'(0) = tau - 1 there. ``second_derivative`` is defined
    almost everywhere for the smooth losses and unavailable for the
    check loss.
    """

    kind: str
    tau: float | None = None

    def __post_init__(self):
        if self.kind not in ("squared", "check", "expectile"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "squared":
            if self.tau is not None:
                raise ValueError("squared loss takes no tau")
        else:
            if self.tau is None or not 0.0 < self.tau < 1.0:
                raise ValueError(f"tau must lie in (0, 1), got {self.tau}")

    @property
    def smooth(self) -> bool:
        """True when L' is continuous (squared and expectile losses)."""
        return self.kind != "check"

    def value(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "squared":
            return v * v
        a = np.abs(self.tau - (v <= 0))
        if self.kind == "check":
            return np.abs(v) * a
        return v * v * a

    def derivative(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "squared":
            return 2.0 * v
        if self.kind == "check":
            return self.tau - (v <= 0)
        return 2.0 * v * np.abs(self.tau - (v <= 0))

    def second_derivative(self, v: np.ndarray) -> np.ndarray:
        """L'' almost everywhere; raises for the check loss."""
        v = np.asarray(v, dtype=float)
        if self.kind == "squared":
            return np.full_like(v, 2.0)
        if self.kind == "expectile":
            return 2.0 * np.abs(self.tau - (v <= 0))
        raise ValueError("check loss has no second derivative")


def squared_error() -> LossSpec:
    """Squared-error loss; the fit targets the weighted mean."""
    return LossSpec("squared")


def check(tau: float) -> LossSpec:
    """Check loss; the fit targets the weighted tau-quantile."""
    return LossSpec("check", tau)


def asymmetric_squared(tau: float) -> LossSpec:
    """Asymmetric squared loss; the fit targets the weighted tau-expectile."""
    return LossSpec("expectile", tau)


# ---------------------------------------------------------------------------
# Links


@dataclass(frozen=True)
class LinkSpec:
    """Outcome model g(t; beta) = m(t)' beta, linear in beta.

    kind "poly": m(t) = (1, t, ..., t^degree).
    kind "levels": m(t) one-hot over the sorted distinct levels, so the
    coefficients are per-level locations.
    """

    kind: str
    degree: int = 1
    levels: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind == "poly":
            if self.degree < 0:
                raise ValueError("degree must be >= 0")
        elif self.kind == "levels":
            lv = tuple(float(v) for v in self.levels)
            if len(lv) < 1:
                raise ValueError("levels link needs at least one level")
            if sorted(set(lv)) != list(lv):
                raise ValueError("levels must be sorted and distinct")
            object.__setattr__(self, "levels", lv)
        else:
            raise ValueError(f"unknown link kind {self.kind!r}")

    @property
    def p(self) -> int:
        """Number of coefficients."""
        return self.degree + 1 if self.kind == "poly" else len(self.levels)

    def gradient(self, t: np.ndarray) -> np.ndarray:
        """m(t) stacked row-wise, shape (len(t), p)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == "poly":
            return np.vander(t, self.degree + 1, increasing=True)
        m = t[:, None] == np.asarray(self.levels)[None, :]
        if not np.all(m.any(axis=1)):
            bad = t[~m.any(axis=1)][:5]
            raise DataError(f"treatment values outside link levels: {bad}")
        return m.astype(float)

    def predict(self, t: np.ndarray, beta: np.ndarray) -> np.ndarray:
        return self.gradient(t) @ np.asarray(beta, dtype=float)


def polynomial_link(degree: int) -> LinkSpec:
    return LinkSpec("poly", degree=degree)


def indicator_link(levels) -> LinkSpec:
    return LinkSpec("levels", levels=tuple(levels))
