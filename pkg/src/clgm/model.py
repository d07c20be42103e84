"""Latent Gaussian model specification.

A model couples a likelihood family (Gaussian with known or unknown
precision, Poisson with log link), a latent structure (design matrix plus
a prior precision builder), an optional offset, and zero to two
hyperparameter priors. Responses may carry missing values (NaN); missing
observations contribute nothing to any likelihood sum but their latent
coordinates remain part of the field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from clgm.errors import DimensionMismatch, DomainError
from clgm.linalg import SpdMatrix, cholesky, log_det

LOG_2PI = math.log(2.0 * math.pi)

# Floor for the negated loglik curvature, keeping Q + AᵀCA factorizable
# when the likelihood goes locally flat.
C_FLOOR = 1e-12

# Default priors: Ga(1, 0.00005) on precisions, N(0, precision 0.001) on
# fixed effects. An improper flat intercept prior is approximated by this
# near-zero precision.
DEFAULT_GAMMA_SHAPE = 1.0
DEFAULT_GAMMA_RATE = 5e-5
DEFAULT_FIXED_EFFECT_PREC = 1e-3
IMPROPER_INTERCEPT_PREC = 1e-9


@dataclass(frozen=True)
class GaussianKnownPrec:
    """Gaussian observations with a fixed, known precision."""

    tau: float
    n_theta1 = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise DomainError(f"known precision must be positive, got {self.tau}")

    def terms(self, y, eta, theta1):
        tau = self.tau
        resid = y - eta
        value = 0.5 * np.log(tau / (2.0 * np.pi)) - 0.5 * tau * resid**2
        d1 = tau * resid
        c = np.full_like(eta, max(tau, C_FLOOR))
        return value, d1, c


@dataclass(frozen=True)
class GaussianUnknownPrec:
    """Gaussian observations whose precision is the first hyperparameter."""

    n_theta1 = 1

    def terms(self, y, eta, theta1):
        tau = float(theta1[0])
        if tau <= 0:
            raise DomainError(f"precision must be positive, got {tau}")
        resid = y - eta
        value = 0.5 * np.log(tau / (2.0 * np.pi)) - 0.5 * tau * resid**2
        d1 = tau * resid
        c = np.full_like(eta, max(tau, C_FLOOR))
        return value, d1, c


@dataclass(frozen=True)
class PoissonLog:
    """Poisson counts with log link, no likelihood hyperparameters."""

    n_theta1 = 0

    def terms(self, y, eta, theta1):
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise DomainError("Poisson response must be non-negative integers")
        mu = np.exp(eta)
        value = y * eta - mu - gammaln(y + 1.0)
        d1 = y - mu
        c = np.maximum(mu, C_FLOOR)
        return value, d1, c


@dataclass(frozen=True)
class HyperPrior:
    """Prior for one hyperparameter.

    `log_prior` is the log-density on the user scale. `transform` names the
    internal scale used for optimization and gridding: "log" maps positive
    user values to the whole real line (the Jacobian is added by
    `log_prior_internal`), "identity" leaves them alone. `bounds` is the
    open admissible interval on the user scale and `init` the user-scale
    starting point for the mode search.
    """

    name: str
    log_prior: Callable[[float], float]
    transform: str = "log"
    bounds: tuple[float, float] = (0.0, math.inf)
    init: float = 1.0

    def __post_init__(self):
        if self.transform not in ("log", "identity"):
            raise ValueError(f"unknown transform {self.transform!r}")

    def to_internal(self, value: float) -> float:
        return math.log(value) if self.transform == "log" else value

    def from_internal(self, t: float) -> float:
        return math.exp(t) if self.transform == "log" else t

    def log_prior_internal(self, t: float) -> float:
        """Log-prior on the internal scale, Jacobian included."""
        if self.transform == "log":
            return self.log_prior(math.exp(t)) + t
        return self.log_prior(t)


def gamma_prior(name: str, shape: float = DEFAULT_GAMMA_SHAPE,
                rate: float = DEFAULT_GAMMA_RATE, init: float = 1.0) -> HyperPrior:
    """Gamma(shape, rate) prior on a precision, log-scaled internally."""
    const = shape * math.log(rate) - gammaln(shape)

    def log_density(v: float) -> float:
        if v <= 0:
            return -math.inf
        return const + (shape - 1.0) * math.log(v) - rate * v

    return HyperPrior(name=name, log_prior=log_density, transform="log",
                      bounds=(0.0, math.inf), init=init)


class LatentStructure:
    """Linear predictor structure: η = A x + offset, x ~ N(0, Q(θ)⁻¹).

    `prior_precision` receives the full user-scale hyperparameter tuple
    and returns Q as an SpdMatrix; builders for models whose latent prior
    ignores the likelihood hyperparameters simply do not read them.
    """

    def __init__(self, design, prior_precision: Callable[[tuple], SpdMatrix]):
        self.design = np.asarray(design, dtype=float)
        if self.design.ndim != 2:
            raise DimensionMismatch("design must be a 2-d array")
        self.prior_precision = prior_precision
        self.n_latent = self.design.shape[1]


def fixed_effects_structure(design, precisions=None) -> LatentStructure:
    """Structure for pure fixed effects with a constant diagonal prior.

    `precisions` gives the per-column prior precision; the default is
    DEFAULT_FIXED_EFFECT_PREC for every column.
    """
    design = np.asarray(design, dtype=float)
    p = design.shape[1]
    if precisions is None:
        prec = np.full(p, DEFAULT_FIXED_EFFECT_PREC)
    else:
        prec = np.asarray(precisions, dtype=float)
        if prec.shape != (p,):
            raise DimensionMismatch(f"expected {p} precisions, got {prec.shape}")
    q = SpdMatrix(np.diag(prec))
    return LatentStructure(design, lambda theta: q)


class LgmSpec:
    """One latent Gaussian model, immutable after construction.

    The response `y` uses NaN to mark missing observations; the observed
    index set drives every likelihood sum. Construction precomputes the
    observed rows of the design and, for Gaussian families, the Gram
    matrix of those rows (the curvature term AᵀCA is then a scalar
    multiple of it).
    """

    def __init__(self, y, family, structure: LatentStructure, offset=None,
                 hyper: Sequence[HyperPrior] = ()):
        self.y = np.asarray(y, dtype=float)
        if self.y.ndim != 1:
            raise DimensionMismatch("response must be a vector")
        n_obs = self.y.shape[0]
        if structure.design.shape[0] != n_obs:
            raise DimensionMismatch(
                f"design has {structure.design.shape[0]} rows for {n_obs} responses")
        self.family = family
        self.structure = structure
        if offset is None:
            self.offset = np.zeros(n_obs)
        else:
            self.offset = np.asarray(offset, dtype=float)
            if self.offset.shape != (n_obs,):
                raise DimensionMismatch("offset length must match the response")
            if not np.all(np.isfinite(self.offset)):
                raise ValueError("offset must be finite")
        self.hyper = tuple(hyper)
        if len(self.hyper) > 2:
            raise ValueError("at most two hyperparameters are supported")
        if len(self.hyper) < family.n_theta1:
            raise ValueError("family requires more hyperparameters than supplied")
        self.observed = ~np.isnan(self.y)
        self.n_obs = int(np.sum(self.observed))
        self.y_obs = self.y[self.observed]
        self.design_obs = structure.design[self.observed]
        self.offset_obs = self.offset[self.observed]

    @property
    def n_latent(self) -> int:
        return self.structure.n_latent

    @cached_property
    def gram_obs(self) -> np.ndarray:
        """AᵀA over observed rows, cached for constant-curvature families."""
        return self.design_obs.T @ self.design_obs

    def theta1(self, theta: tuple) -> tuple:
        return tuple(theta[: self.family.n_theta1])

    def eta_obs(self, x: np.ndarray) -> np.ndarray:
        return self.design_obs @ x + self.offset_obs


def loglik_terms(spec: LgmSpec, eta, theta1=()):
    """Per-observation log-likelihood value, d(loglik)/dη, and curvature.

    `eta` holds the linear predictor at the observed indices (length
    spec.n_obs). Returns three arrays over those indices: the term value,
    its first derivative in η, and c ≥ C_FLOOR, the negated second
    derivative.
    """
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (spec.n_obs,):
        raise DimensionMismatch(
            f"eta has shape {eta.shape}, expected ({spec.n_obs},)")
    return spec.family.terms(spec.y_obs, eta, theta1)


def log_joint(spec: LgmSpec, x, theta: tuple = ()) -> float:
    """log π(y|x,θ) + log π(x|θ) + log π(θ), all fully normalized.

    θ is on the user scale; the hyperprior term carries no internal-scale
    Jacobian here. Raises NotPositiveDefinite if Q(θ) does not factorize.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n_latent,):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({spec.n_latent},)")
    q = spec.structure.prior_precision(theta)
    lp_x = 0.5 * log_det(cholesky(q)) - 0.5 * spec.n_latent * LOG_2PI \
        - 0.5 * float(x @ q.values @ x)
    lp_y = 0.0
    if spec.n_obs:
        value, _, _ = loglik_terms(spec, spec.eta_obs(x), spec.theta1(theta))
        lp_y = float(np.sum(value))
    lp_theta = sum(h.log_prior(v) for h, v in zip(spec.hyper, theta))
    return lp_y + lp_x + lp_theta
