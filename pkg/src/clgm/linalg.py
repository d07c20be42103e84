"""Dense symmetric-positive-definite linear algebra.

Everything the Laplace engine needs from a precision matrix: Cholesky
factorization, log-determinant, solves, and marginal variances. Dense
storage only; the models this package targets stay below a few hundred
latent dimensions, so sparse machinery would buy nothing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from clgm.errors import NotPositiveDefinite

_ASYMMETRY_TOL = 1e-12


class SpdMatrix:
    """Dense symmetric matrix intended to be positive definite.

    Symmetry is enforced on construction by averaging the input with its
    transpose; asymmetry beyond 1e-12 relative to the largest entry draws
    a warning. Positive definiteness is only established when `cholesky`
    succeeds. Instances are immutable by convention: do not write to
    `values` after construction.
    """

    __slots__ = ("values", "n")

    def __init__(self, values):
        a = np.asarray(values, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        scale = max(np.max(np.abs(a)), 1.0) if a.size else 1.0
        asym = np.max(np.abs(a - a.T)) if a.size else 0.0
        if asym > _ASYMMETRY_TOL * scale:
            warnings.warn(
                f"asymmetry {asym:.3e} exceeds {_ASYMMETRY_TOL:g} relative; symmetrizing",
                stacklevel=2,
            )
        self.values = 0.5 * (a + a.T)
        self.n = a.shape[0]


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular factor L with L Lᵀ equal to the factored matrix."""

    lower: np.ndarray

    @property
    def n(self) -> int:
        return self.lower.shape[0]


def cholesky(a: SpdMatrix) -> CholFactor:
    """Factor an SPD matrix, raising NotPositiveDefinite on failure.

    No pivoting and no fallback: a matrix that does not factorize is an
    invalid precision matrix (for instance a spatial autocorrelation
    parameter outside its admissible range) and the caller must decide
    what that means.
    """
    try:
        lower = np.linalg.cholesky(a.values)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    return CholFactor(lower)


def log_det(f: CholFactor) -> float:
    """Log-determinant of the factored matrix, 2·Σ ln Lᵢᵢ."""
    return 2.0 * float(np.sum(np.log(np.diag(f.lower))))


def solve_spd(f: CholFactor, b: np.ndarray) -> np.ndarray:
    """Solve A x = b given the Cholesky factor of A."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise ValueError(f"right-hand side has length {b.shape[0]}, expected {f.n}")
    return cho_solve((f.lower, True), b)


def diag_of_inverse(f: CholFactor) -> np.ndarray:
    """Diagonal of A⁻¹ via n solves against unit vectors."""
    inv = cho_solve((f.lower, True), np.eye(f.n))
    return np.diag(inv).copy()
