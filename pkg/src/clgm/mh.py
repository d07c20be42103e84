"""Block Metropolis-Hastings over conditioned parameters.

The chain moves a parameter block z through proposals scored by a target
that returns the conditional log marginal likelihood of the rest of the
model given z (typically the nested-Laplace engine fitted to the
conditioned model, but any log-density works, which is how the kernel is
validated against known targets). Acceptance uses the usual ratio of
target x prior x proposal terms; random-walk proposal terms cancel and
are skipped rather than computed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np

from clgm.errors import (
    ConfigError,
    DimensionMismatch,
    ModeSearchFailure,
    NoConvergence,
    NotPositiveDefinite,
    SingularTransform,
)

log = logging.getLogger(__name__)

ENGINE_ERRORS = (NotPositiveDefinite, NoConvergence, ModeSearchFailure,
                 SingularTransform)

ADAPT_TARGET_RATE = 0.30
ADAPT_DECAY = 0.6


@dataclass(frozen=True)
class GaussianTerm:
    """Gaussian prior factor with a precision parameter."""

    mean: float
    precision: float

    def __post_init__(self):
        if self.precision <= 0:
            raise ValueError("precision must be positive")

    def log_density(self, v: float) -> float:
        return 0.5 * math.log(self.precision / (2.0 * math.pi)) \
            - 0.5 * self.precision * (v - self.mean) ** 2


@dataclass(frozen=True)
class LaplaceTerm:
    """Double-exponential prior factor with location and scale."""

    mean: float
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def log_density(self, v: float) -> float:
        return -math.log(2.0 * self.scale) - abs(v - self.mean) / self.scale


@dataclass(frozen=True)
class UniformTerm:
    """Flat prior factor on an open interval."""

    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("interval must have positive width")

    def log_density(self, v: float) -> float:
        if self.low < v < self.high:
            return -math.log(self.high - self.low)
        return -math.inf


@dataclass(frozen=True)
class ZcPrior:
    """Independent product prior over the conditioned block."""

    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def dim(self) -> int:
        return len(self.terms)

    def log_density(self, z: np.ndarray) -> float:
        if len(z) != len(self.terms):
            raise DimensionMismatch(
                f"prior has {len(self.terms)} terms, z has {len(z)}")
        total = 0.0
        for term, v in zip(self.terms, z):
            lp = term.log_density(float(v))
            if lp == -math.inf:
                return -math.inf
            total += lp
        return total


@dataclass(frozen=True)
class RandomWalkGaussian:
    """Symmetric Gaussian random walk; proposal terms cancel in the ratio."""

    sds: np.ndarray
    symmetric = True

    def __post_init__(self):
        sds = np.asarray(self.sds, dtype=float)
        if sds.ndim != 1 or np.any(sds <= 0):
            raise ValueError("sds must be a vector of positive values")
        object.__setattr__(self, "sds", sds)

    def propose(self, z: np.ndarray, rng, scale: float = 1.0) -> np.ndarray:
        return z + scale * self.sds * rng.standard_normal(self.sds.size)


@dataclass(frozen=True)
class IndependenceGaussian:
    """Proposal drawn afresh from a fixed Gaussian, ignoring the current state."""

    means: np.ndarray
    sds: np.ndarray
    symmetric = False

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        sds = np.asarray(self.sds, dtype=float)
        if means.shape != sds.shape or means.ndim != 1 or np.any(sds <= 0):
            raise ValueError("means and sds must be matching positive vectors")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sds", sds)

    def propose(self, z: np.ndarray, rng, scale: float = 1.0) -> np.ndarray:
        # adaptation never rescales an independence kernel
        return self.means + self.sds * rng.standard_normal(self.sds.size)

    def log_q(self, z: np.ndarray) -> float:
        resid = (z - self.means) / self.sds
        return float(-0.5 * np.sum(resid**2)
                     - np.sum(np.log(self.sds))
                     - 0.5 * self.sds.size * math.log(2.0 * math.pi))


@dataclass(frozen=True)
class TargetEval:
    """One evaluation of the target at a block value.

    `marginals`, when present, lazily yields the named conditional
    marginal densities of everything that is not in the block; the chain
    collects them for kept samples only.
    """

    log_cml: float
    marginals: Optional[Callable[[], Mapping]] = None


class Target(Protocol):
    def evaluate(self, z: np.ndarray) -> TargetEval: ...


class CallableTarget:
    """Wraps a plain log-density; used to run the kernel on known targets."""

    def __init__(self, log_density: Callable[[np.ndarray], float]):
        self._log_density = log_density

    def evaluate(self, z: np.ndarray) -> TargetEval:
        return TargetEval(log_cml=float(self._log_density(z)))


@dataclass(frozen=True)
class ChainState:
    z: np.ndarray
    log_cml: float
    log_prior: float
    step_index: int
    target_eval: TargetEval


@dataclass
class StepStats:
    """Mutable counters a chain accumulates across steps."""

    proposals: int = 0
    accepted: int = 0
    prior_rejections: int = 0
    engine_failures: int = 0


def log_accept_ratio(current: ChainState, proposed_log_cml: float,
                     proposed_log_prior: float, log_q_ratio: float) -> float:
    """log alpha before truncation at 0; q terms already folded in."""
    return (proposed_log_cml + proposed_log_prior) \
        - (current.log_cml + current.log_prior) + log_q_ratio


def mh_step(state: ChainState, target: Target, prior: ZcPrior,
            kernel, rng, scale: float = 1.0,
            stats: Optional[StepStats] = None) -> ChainState:
    """One proposal: returns the new state, or `state` itself on rejection.

    Proposals outside the prior support are rejected before any model
    fit. Engine failures on a proposal count as rejections with a logged
    warning rather than aborting the chain; they occur only at block
    values implausible enough that the fit degenerates.
    """
    if stats is None:
        stats = StepStats()
    stats.proposals += 1
    z_new = kernel.propose(state.z, rng, scale)
    lp_new = prior.log_density(z_new)
    if lp_new == -math.inf:
        stats.prior_rejections += 1
        return _advance(state)
    try:
        ev = target.evaluate(z_new)
    except ENGINE_ERRORS as exc:
        stats.engine_failures += 1
        log.warning("engine failure at proposal %s: %s", z_new, exc)
        return _advance(state)
    if kernel.symmetric:
        log_q_ratio = 0.0
    else:
        log_q_ratio = kernel.log_q(state.z) - kernel.log_q(z_new)
    log_alpha = log_accept_ratio(state, ev.log_cml, lp_new, log_q_ratio)
    u = rng.uniform()
    if log_alpha >= 0.0 or u < math.exp(log_alpha):
        stats.accepted += 1
        return ChainState(z=z_new, log_cml=ev.log_cml, log_prior=lp_new,
                          step_index=state.step_index + 1, target_eval=ev)
    return _advance(state)


def _advance(state: ChainState) -> ChainState:
    # rejection: same block value and caches, one step later
    return ChainState(z=state.z, log_cml=state.log_cml,
                      log_prior=state.log_prior,
                      step_index=state.step_index + 1,
                      target_eval=state.target_eval)


@dataclass(frozen=True)
class ChainConfig:
    iters: int
    burn_in: int
    thin: int
    seed: int
    init: np.ndarray
    adapt: bool = False

    def __post_init__(self):
        object.__setattr__(self, "init", np.asarray(self.init, dtype=float))
        if self.iters <= self.burn_in:
            raise ConfigError("iters must exceed burn_in")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be non-negative")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")
        if not np.all(np.isfinite(self.init)):
            raise ConfigError("initial block value must be finite")

    @property
    def kept_count(self) -> int:
        return (self.iters - self.burn_in) // self.thin


@dataclass
class ChainResult:
    """Kept samples plus everything needed to reproduce and diagnose a run."""

    samples: np.ndarray
    kept_steps: np.ndarray
    kept_marginals: list
    config: ChainConfig
    stats: StepStats
    post_burn_proposals: int = 0
    post_burn_accepted: int = 0
    final_scale: float = 1.0
    coord_names: tuple = ()
    marginal_handles: list = field(default_factory=list)

    @property
    def kept_count(self) -> int:
        return self.samples.shape[0]


def run_chain(config: ChainConfig, target: Target, prior: ZcPrior,
              kernel, collect_marginals: bool = True,
              coord_names: Sequence[str] = ()) -> ChainResult:
    """Run the chain and keep every `thin`-th post-burn-in state.

    Deterministic given the seed. When the optional burn-in adaptation is
    on, a Robbins-Monro recursion rescales random-walk steps toward a 0.30
    acceptance rate during burn-in only, so the kept chain still targets
    the exact posterior.
    """
    d = config.init.size
    if prior.dim != d:
        raise ConfigError(f"prior covers {prior.dim} coordinates, init has {d}")
    lp0 = prior.log_density(config.init)
    if lp0 == -math.inf:
        raise ConfigError("initial block value has zero prior density")
    rng = np.random.default_rng(config.seed)
    ev0 = target.evaluate(config.init)
    state = ChainState(z=config.init.copy(), log_cml=ev0.log_cml,
                       log_prior=lp0, step_index=0, target_eval=ev0)
    stats = StepStats()
    scale = 1.0
    samples = np.empty((config.kept_count, d))
    kept_steps = np.empty(config.kept_count, dtype=int)
    kept_marginals: list = []
    kept = 0
    post_proposals = 0
    post_accepted = 0
    last_eval = None
    last_marginals = None
    adaptable = config.adapt and kernel.symmetric
    for step in range(1, config.iters + 1):
        before = stats.accepted
        state = mh_step(state, target, prior, kernel, rng, scale, stats)
        accepted = stats.accepted > before
        if step <= config.burn_in and adaptable:
            scale *= math.exp((float(accepted) - ADAPT_TARGET_RATE)
                              * step**-ADAPT_DECAY)
        if step > config.burn_in:
            post_proposals += 1
            post_accepted += accepted
            if (step - config.burn_in) % config.thin == 0:
                samples[kept] = state.z
                kept_steps[kept] = step
                if collect_marginals and state.target_eval.marginals is not None:
                    if state.target_eval is last_eval:
                        kept_marginals.append(last_marginals)
                    else:
                        last_eval = state.target_eval
                        last_marginals = state.target_eval.marginals()
                        kept_marginals.append(last_marginals)
                kept += 1
    return ChainResult(samples=samples, kept_steps=kept_steps,
                       kept_marginals=kept_marginals, config=config,
                       stats=stats, post_burn_proposals=post_proposals,
                       post_burn_accepted=post_accepted, final_scale=scale,
                       coord_names=tuple(coord_names))


def acceptance_rate(result: ChainResult) -> float:
    """Share of accepted proposals after burn-in."""
    if result.post_burn_proposals == 0:
        return 0.0
    return result.post_burn_accepted / result.post_burn_proposals


def ess(result: ChainResult, coord: int) -> float:
    """Effective sample size from the initial positive autocorrelation run."""
    x = result.samples[:, coord]
    return ess_from_samples(x)


def ess_from_samples(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 kept samples")
    centered = x - np.mean(x)
    gamma0 = float(np.dot(centered, centered)) / n
    if gamma0 == 0.0:
        return 1.0
    s = 0.0
    for k in range(1, n):
        rho = float(np.dot(centered[:-k], centered[k:])) / (n * gamma0)
        if rho <= 0.0:
            break
        s += rho
    return float(min(max(n / (1.0 + 2.0 * s), 1.0), n))
