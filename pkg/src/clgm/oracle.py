"""Ground-truth references the rest of the package is validated against.

Two independent sources of truth: the exact conjugate posterior of a
Gaussian linear model with unknown precision (Normal-Inverse-Gamma), and
a deliberately plain random-walk sampler over the complete parameter
vector. Neither touches the nested-Laplace engine; agreement between
those and the conditioned-chain path is the core evidence of correctness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln

from clgm.errors import RankDeficient
from clgm.mh import ChainConfig, ChainResult, StepStats


@dataclass(frozen=True)
class StudentTMarginal:
    """Location-scale Student-t density."""

    df: float
    loc: float
    scale: float

    def pdf(self, x):
        return stats.t.pdf(x, df=self.df, loc=self.loc, scale=self.scale)

    def cdf(self, x):
        return stats.t.cdf(x, df=self.df, loc=self.loc, scale=self.scale)

    def support(self):
        half = 50.0 * self.scale
        return (self.loc - half, self.loc + half)


@dataclass(frozen=True)
class GammaMarginal:
    """Gamma density in shape/rate form."""

    shape: float
    rate: float

    def pdf(self, x):
        return stats.gamma.pdf(x, a=self.shape, scale=1.0 / self.rate)

    def cdf(self, x):
        return stats.gamma.cdf(x, a=self.shape, scale=1.0 / self.rate)

    def support(self):
        lo = stats.gamma.ppf(1e-12, a=self.shape, scale=1.0 / self.rate)
        hi = stats.gamma.ppf(1.0 - 1e-12, a=self.shape, scale=1.0 / self.rate)
        return (float(lo), float(hi))

    @property
    def mean(self):
        return self.shape / self.rate

    @property
    def sd(self):
        return math.sqrt(self.shape) / self.rate


@dataclass(frozen=True)
class NigPosterior:
    """Normal-Inverse-Gamma posterior of a Gaussian linear model.

    Coefficients given the precision are N(m, V/tau); the precision is
    Gamma(a, b). Marginally each coefficient is Student-t with 2a degrees
    of freedom.
    """

    m: np.ndarray
    v: np.ndarray
    a: float
    b: float
    log_evidence: float

    def beta_marginal(self, j: int) -> StudentTMarginal:
        scale = math.sqrt(self.b / self.a * self.v[j, j])
        return StudentTMarginal(df=2.0 * self.a, loc=float(self.m[j]),
                                scale=scale)

    def tau_marginal(self) -> GammaMarginal:
        return GammaMarginal(shape=self.a, rate=self.b)

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Exact joint draws (betas, taus), for sampling-based checks."""
        taus = rng.gamma(shape=self.a, scale=1.0 / self.b, size=n)
        chol = np.linalg.cholesky(self.v)
        noise = rng.standard_normal((n, self.m.size))
        betas = self.m + (noise @ chol.T) / np.sqrt(taus)[:, None]
        return betas, taus


def conjugate_regression(y, design, prior_precision, a0: float,
                         b0: float) -> NigPosterior:
    """Exact posterior for y = X beta + noise with NIG(0, P0, a0, b0) prior.

    The coefficient prior precision scales with the noise precision
    (beta | tau ~ N(0, (tau P0)^-1)), which is what makes the update
    closed-form.
    """
    y = np.asarray(y, dtype=float)
    design = np.asarray(design, dtype=float)
    p0 = np.asarray(prior_precision, dtype=float)
    if p0.ndim == 1:
        p0 = np.diag(p0)
    n, p = design.shape
    if a0 <= 0 or b0 <= 0:
        raise ValueError("prior shape and rate must be positive")
    if n > 0 and np.linalg.matrix_rank(design) < min(n, p):
        raise RankDeficient("design has linearly dependent columns")
    pn = p0 + design.T @ design
    m = np.linalg.solve(pn, design.T @ y) if n > 0 else np.zeros(p)
    a_n = a0 + 0.5 * n
    b_n = b0 + 0.5 * float(y @ y - m @ pn @ m)
    log_ev = (-0.5 * n * math.log(2.0 * math.pi)
              + 0.5 * (np.linalg.slogdet(p0)[1] - np.linalg.slogdet(pn)[1])
              + a0 * math.log(b0) - a_n * math.log(b_n)
              + gammaln(a_n) - gammaln(a0))
    return NigPosterior(m=m, v=np.linalg.inv(pn), a=a_n, b=b_n,
                        log_evidence=float(log_ev))


def full_mcmc(log_posterior, step_sds, config: ChainConfig) -> ChainResult:
    """Random-walk sampler over the complete parameter vector.

    Written independently of the conditioned-chain engine on purpose:
    one joint Gaussian step, plain accept/reject, identical burn-in and
    thinning bookkeeping. `log_posterior` owns the parametrization (put
    positive parameters on the log scale, Jacobian included).
    """
    step_sds = np.asarray(step_sds, dtype=float)
    x = np.asarray(config.init, dtype=float).copy()
    if step_sds.shape != x.shape:
        raise ValueError("step_sds must match the parameter vector")
    lp = float(log_posterior(x))
    if not math.isfinite(lp):
        raise ValueError("log-posterior not finite at the start point")
    rng = np.random.default_rng(config.seed)
    d = x.size
    kept = np.empty((config.kept_count, d))
    kept_steps = np.empty(config.kept_count, dtype=int)
    stats_ = StepStats()
    k = 0
    post_proposals = 0
    post_accepted = 0
    for step in range(1, config.iters + 1):
        stats_.proposals += 1
        prop = x + step_sds * rng.standard_normal(d)
        lp_prop = float(log_posterior(prop))
        u = rng.uniform()
        accept = lp_prop - lp >= 0.0 or u < math.exp(lp_prop - lp)
        if accept:
            x, lp = prop, lp_prop
            stats_.accepted += 1
        if step > config.burn_in:
            post_proposals += 1
            post_accepted += accept
            if (step - config.burn_in) % config.thin == 0:
                kept[k] = x
                kept_steps[k] = step
                k += 1
    return ChainResult(samples=kept, kept_steps=kept_steps, kept_marginals=[],
                       config=config, stats=stats_,
                       post_burn_proposals=post_proposals,
                       post_burn_accepted=post_accepted)
