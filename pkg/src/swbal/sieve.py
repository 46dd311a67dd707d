"""Sieve bases for treatment and covariates.

Balance constraints are built on finite polynomial bases: a treatment
basis ``u(t)`` and a covariate basis ``v(x)``.  Both are orthonormalized
against the empirical inner product ``<a, b> = (1/N) sum a_i b_i`` before
the dual solve; the weights are invariant to any nonsingular
reparameterization of either basis, so orthonormalization only improves
conditioning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

__all__ = [
    "BasisSpec",
    "treatment_poly",
    "covariate_poly",
    "explicit_columns",
    "multi_indices",
    "evaluate_raw",
    "SieveBasis",
    "orthonormalize",
    "build_basis",
    "evaluate_at",
]

# Relative residual-norm threshold below which a column is treated as
# collinear with its predecessors and dropped.
DROP_TOL = 1e-12


def multi_indices(r: int, degree: int) -> list[tuple[int, ...]]:
    """All exponent tuples over r variables with total degree <= degree.

    Graded ordering: sorted by total degree, then lexicographically with
    the leading variable's exponent decreasing, e.g. for r=2, degree=2:
    (0,0), (1,0), (0,1), (2,0), (1,1), (0,2).  The count is
    C(r + degree, degree).
    """
    if r < 1 or degree < 0:
        raise ValueError("need r >= 1 and degree >= 0")

    def compositions(total: int, parts: int):
        if parts == 1:
            yield (total,)
            return
        for head in range(total, -1, -1):
            for rest in compositions(total - head, parts - 1):
                yield (head,) + rest

    out: list[tuple[int, ...]] = []
    for d in range(degree + 1):
        out.extend(compositions(d, r))
    return out


@dataclass(frozen=True)
class BasisSpec:
    """Recipe for a raw (un-orthonormalized) basis matrix.

    kind "treatment-poly": powers 1, t, ..., t^(n_terms-1) of a scalar
    treatment.  kind "covariate-poly": monomials x^lam over all graded
    multi-indices with total degree <= degree; with interactions=False
    only pure powers of single covariates are kept (1 + r*degree terms).
    kind "explicit": the data matrix is used as-is.
    """

    kind: str
    n_terms: int = 0
    degree: int = 0
    interactions: bool = True
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind == "treatment-poly":
            if self.n_terms < 1:
                raise ValueError("treatment basis needs at least one term")
        elif self.kind == "covariate-poly":
            if self.degree < 0:
                raise ValueError("degree must be >= 0")
        elif self.kind != "explicit":
            raise ValueError(f"unknown basis kind {self.kind!r}")


def treatment_poly(n_terms: int) -> BasisSpec:
    return BasisSpec("treatment-poly", n_terms=n_terms)


def covariate_poly(degree: int, interactions: bool = True) -> BasisSpec:
    return BasisSpec("covariate-poly", degree=degree, interactions=interactions)


def explicit_columns(names=()) -> BasisSpec:
    return BasisSpec("explicit", names=tuple(names))


def _covariate_indices(r: int, spec: BasisSpec) -> list[tuple[int, ...]]:
    idx = multi_indices(r, spec.degree)
    if not spec.interactions:
        idx = [lam for lam in idx if sum(e > 0 for e in lam) <= 1]
    return idx


def evaluate_raw(spec: BasisSpec, data: np.ndarray) -> np.ndarray:
    """Raw basis matrix, shape (N, K), before orthonormalization."""
    data = np.asarray(data, dtype=float)
    if spec.kind == "treatment-poly":
        if data.ndim != 1:
            raise DataError("treatment basis expects a 1-D treatment vector")
        return np.vander(data, spec.n_terms, increasing=True)
    if spec.kind == "covariate-poly":
        if data.ndim != 2:
            raise DataError("covariate basis expects a 2-D covariate matrix")
        idx = _covariate_indices(data.shape[1], spec)
        cols = [np.prod(data**np.asarray(lam), axis=1) for lam in idx]
        return np.column_stack(cols)
    if data.ndim != 2:
        raise DataError("explicit basis expects a 2-D matrix")
    return data.copy()


def term_labels(spec: BasisSpec, r: int) -> list[str]:
    """Human-readable names for the raw columns."""
    if spec.kind == "treatment-poly":
        return ["1" if k == 0 else ("t" if k == 1 else f"t^{k}") for k in range(spec.n_terms)]
    if spec.kind == "covariate-poly":
        labels = []
        for lam in _covariate_indices(r, spec):
            parts = [
                f"x{j + 1}" if e == 1 else f"x{j + 1}^{e}"
                for j, e in enumerate(lam)
                if e > 0
            ]
            labels.append("*".join(parts) if parts else "1")
        return labels
    return list(spec.names) if spec.names else [f"c{j}" for j in range(r)]


@dataclass(frozen=True)
class SieveBasis:
    """Orthonormalized basis tied to the sample it was built on.

    matrix has empirical Gram (1/N) Q'Q = I on the kept columns;
    matrix = raw @ transform.T, so the same transform maps raw
    evaluations at new points into the orthonormalized coordinates.
    """

    spec: BasisSpec
    matrix: np.ndarray
    transform: np.ndarray
    dropped: tuple[int, ...]
    labels: tuple[str, ...]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]

    @property
    def constant_column(self) -> int | None:
        """Index of a constant column if one survives, else None."""
        q = self.matrix
        for j in range(q.shape[1]):
            if np.ptp(q[:, j]) == 0.0 and q[0, j] != 0.0:
                return j
        return None


def orthonormalize(raw: np.ndarray, spec: BasisSpec | None = None,
                   labels=None) -> SieveBasis:
    """Empirical Gram-Schmidt with a re-orthogonalization sweep.

    Columns whose residual norm after projection falls below
    DROP_TOL times their original norm are dropped as collinear.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise DataError("basis matrix must be 2-D")
    n, k = raw.shape
    spec = spec if spec is not None else explicit_columns()
    if labels is None:
        labels = term_labels(spec, k)

    kept_q: list[np.ndarray] = []
    kept_c: list[np.ndarray] = []
    kept_j: list[int] = []
    dropped: list[int] = []
    for j in range(k):
        q = raw[:, j].copy()
        c = np.zeros(k)
        c[j] = 1.0
        orig_norm = math.sqrt(q @ q / n)
        # Two projection sweeps keep orthogonality at machine precision
        # even when the new column is nearly collinear with the span.
        for _ in range(2):
            for qi, ci in zip(kept_q, kept_c):
                coef = q @ qi / n
                q -= coef * qi
                c -= coef * ci
        norm = math.sqrt(q @ q / n)
        if norm <= DROP_TOL * orig_norm:
            dropped.append(j)
            continue
        kept_q.append(q / norm)
        kept_c.append(c / norm)
        kept_j.append(j)

    if not kept_q:
        raise DataError("all basis columns are degenerate")
    matrix = np.column_stack(kept_q)
    transform = np.vstack(kept_c)
    return SieveBasis(
        spec=spec,
        matrix=matrix,
        transform=transform,
        dropped=tuple(dropped),
        labels=tuple(labels[j] for j in kept_j),
    )


def build_basis(spec: BasisSpec, data: np.ndarray) -> SieveBasis:
    """Evaluate a raw basis on data and orthonormalize it."""
    raw = evaluate_raw(spec, data)
    r = data.shape[1] if np.ndim(data) == 2 else 1
    return orthonormalize(raw, spec, term_labels(spec, r))


def evaluate_at(basis: SieveBasis, data: np.ndarray) -> np.ndarray:
    """Orthonormalized basis evaluated at new points, shape (M, k)."""
    if basis.spec.kind == "explicit":
        raw = np.asarray(data, dtype=float)
        if raw.ndim != 2 or raw.shape[1] != basis.transform.shape[1]:
            raise DataError("explicit basis needs a matrix with the original columns")
    else:
        raw = evaluate_raw(basis.spec, data)
    return raw @ basis.transform.T
