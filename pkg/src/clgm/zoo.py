"""Experiment catalog: datasets, simulators, conditioners, scenarios.

A conditioner turns one draw of the conditioned block z into a concrete
model spec the engine can fit; a scenario bundles a conditioner-backed
target with the block prior, the proposal kernel, and the starting
point. The bundled CSVs live in clgm/data and can be overridden through
the CLGM_DATA_DIR environment variable; the health-survey table is the
original 25-row dataset, while the spatial and salary files are labeled
synthetic stand-ins (see scripts/make_stand_ins.py).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from clgm.errors import DimensionMismatch, SingularTransform
from clgm.laplace import explore_theta_grid, latent_marginals, theta_marginals
from clgm.marginals import GaussianMixture
from clgm.mh import (
    GaussianTerm,
    IndependenceGaussian,
    LaplaceTerm,
    RandomWalkGaussian,
    TargetEval,
    UniformTerm,
    ZcPrior,
)
from clgm.model import (
    DEFAULT_FIXED_EFFECT_PREC,
    GaussianKnownPrec,
    GaussianUnknownPrec,
    IMPROPER_INTERCEPT_PREC,
    LatentStructure,
    LgmSpec,
    PoissonLog,
    SpdMatrix,
    fixed_effects_structure,
    gamma_prior,
)

DATA_ENV = "CLGM_DATA_DIR"

# observation precision pinning y to the linear predictor in the
# spatial-lag formulation (the latent field carries all the noise)
SPATIAL_OBS_PREC = math.exp(15.0)

DEFAULT_KERNEL_SD = 1.0 / 0.75

# Laplace prior scale under which the classical lasso solution on the
# bundled salary data (penalty 1/(n tau sigma), coordinate descent)
# zeroes three of the five coefficients; see scripts/make_stand_ins.py
# for the data provenance
DEFAULT_LASSO_SIGMA = 0.11

SIMULATED_N = 100


# ---------------------------------------------------------------------------
# bundled data

def _data_path(name: str) -> Path:
    override = os.environ.get(DATA_ENV)
    if override:
        candidate = Path(override) / name
        if candidate.exists():
            return candidate
    return Path(__file__).resolve().parent / "data" / name


def _read_columns(name: str) -> dict:
    path = _data_path(name)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols: dict = {f: [] for f in reader.fieldnames}
        for row in reader:
            for f in reader.fieldnames:
                cols[f].append(row[f])
    return cols


def _numeric(values) -> np.ndarray:
    return np.array([float(v) if v not in ("", None) else np.nan
                     for v in values])


def load_nhanes() -> dict:
    """25-row health survey: age group (1..3), bmi, hyp, chl; NaN = missing."""
    cols = _read_columns("nhanes.csv")
    return {"age": _numeric(cols["age"]).astype(int),
            "bmi": _numeric(cols["bmi"]),
            "hyp": _numeric(cols["hyp"]),
            "chl": _numeric(cols["chl"])}


def load_columbus() -> dict:
    """49 areas: crime response, income and housing-value covariates."""
    cols = _read_columns("columbus.csv")
    return {"crime": _numeric(cols["crime"]),
            "income": _numeric(cols["income"]),
            "hvalue": _numeric(cols["hvalue"])}


def load_columbus_w() -> np.ndarray:
    """Row-standardized contiguity weights from the triplet file."""
    cols = _read_columns("columbus_w.csv")
    rows = _numeric(cols["row"]).astype(int) - 1
    cls = _numeric(cols["col"]).astype(int) - 1
    n = int(max(rows.max(), cls.max())) + 1
    w = np.zeros((n, n))
    w[rows, cls] = _numeric(cols["weight"])
    if np.any(np.diag(w) != 0.0):
        raise ValueError("weights must have a zero diagonal")
    return w


def load_hitters() -> dict:
    """Player salaries with five season statistics (complete cases)."""
    cols = _read_columns("hitters.csv")
    names = ("AtBat", "Hits", "HmRun", "Runs", "RBI")
    design = np.column_stack([_numeric(cols[n]) for n in names])
    return {"salary": _numeric(cols["salary"]), "design": design,
            "names": names}


# ---------------------------------------------------------------------------
# simulators

@dataclass(frozen=True)
class SimulatedDataset:
    y: np.ndarray
    covariates: np.ndarray
    true_params: dict
    seed: int
    missing_rows: tuple = ()
    true_missing: tuple = ()


def simulate_linear(seed: int) -> SimulatedDataset:
    """Two uniform covariates, y = 3 + 2 u1 - 2 u2 + N(0, 1) noise."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(SIMULATED_N, 2))
    y = 3.0 + 2.0 * u[:, 0] - 2.0 * u[:, 1] + rng.normal(size=SIMULATED_N)
    return SimulatedDataset(y=y, covariates=u,
                            true_params={"alpha": 3.0, "beta1": 2.0,
                                         "beta2": -2.0, "tau": 1.0},
                            seed=seed)


def simulate_poisson(seed: int) -> SimulatedDataset:
    """Two uniform covariates, log mean = 0.5 + 2 u1 - 2 u2."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(SIMULATED_N, 2))
    y = rng.poisson(np.exp(0.5 + 2.0 * u[:, 0] - 2.0 * u[:, 1]))
    return SimulatedDataset(y=y.astype(float), covariates=u,
                            true_params={"alpha": 0.5, "beta1": 2.0,
                                         "beta2": -2.0},
                            seed=seed)


def simulate_missing(seed: int, n_missing: int = 9) -> SimulatedDataset:
    """One-covariate regression with covariate values removed at random."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(SIMULATED_N, 1))
    y = 3.0 + 2.0 * u[:, 0] + rng.normal(size=SIMULATED_N)
    missing = tuple(int(i) for i in
                    np.sort(rng.choice(SIMULATED_N, size=n_missing,
                                       replace=False)))
    truth = tuple(float(u[i, 0]) for i in missing)
    covs = u.copy()
    covs[list(missing), 0] = np.nan
    return SimulatedDataset(y=y, covariates=covs,
                            true_params={"alpha": 3.0, "beta1": 2.0,
                                         "tau": 1.0},
                            seed=seed, missing_rows=missing,
                            true_missing=truth)


# ---------------------------------------------------------------------------
# conditioners

@dataclass(frozen=True)
class ConditionerSpec:
    """Base data plus the binding between the block z and the model."""

    mode: str
    y: np.ndarray
    design: np.ndarray
    family: object
    hyper: tuple = ()
    latent_precisions: Optional[np.ndarray] = None
    conditioned_cols: tuple = ()
    missing_col: int = -1
    missing_rows: tuple = ()
    w: Optional[np.ndarray] = None

    def __post_init__(self):
        n, p = self.design.shape
        if self.mode == "offset_beta":
            if any(c < 0 or c >= p for c in self.conditioned_cols):
                raise ValueError("conditioned column out of range")
        elif self.mode == "missing_covariate":
            if not 0 <= self.missing_col < p:
                raise ValueError("missing column out of range")
            if any(r < 0 or r >= n for r in self.missing_rows):
                raise ValueError("missing row out of range")
        elif self.mode == "spatial_lag":
            if self.w is None or self.w.shape != (n, n):
                raise ValueError("square weight matrix required")
            if np.any(np.diag(self.w) != 0.0):
                raise ValueError("weight diagonal must be zero")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")

    def free_cols(self) -> tuple:
        return tuple(j for j in range(self.design.shape[1])
                     if j not in self.conditioned_cols)


def condition_offset_beta(cspec: ConditionerSpec, beta) -> LgmSpec:
    """Fix some coefficients: their contribution becomes a known offset."""
    beta = np.asarray(beta, dtype=float)
    if beta.size != len(cspec.conditioned_cols):
        raise DimensionMismatch(
            f"{len(cspec.conditioned_cols)} conditioned columns, "
            f"{beta.size} values")
    offset = cspec.design[:, list(cspec.conditioned_cols)] @ beta
    free = list(cspec.free_cols())
    design = cspec.design[:, free]
    prec = None if cspec.latent_precisions is None \
        else cspec.latent_precisions[free]
    return LgmSpec(y=cspec.y, family=cspec.family,
                   structure=fixed_effects_structure(design, prec),
                   offset=offset, hyper=cspec.hyper)


def condition_missing_covariate(cspec: ConditionerSpec, imputed) -> LgmSpec:
    """Fill the missing entries of one covariate column with given values."""
    imputed = np.asarray(imputed, dtype=float)
    if imputed.size != len(cspec.missing_rows):
        raise IndexError(f"{len(cspec.missing_rows)} missing entries, "
                         f"{imputed.size} values")
    design = cspec.design.copy()
    design[list(cspec.missing_rows), cspec.missing_col] = imputed
    return LgmSpec(y=cspec.y, family=cspec.family,
                   structure=fixed_effects_structure(design,
                                                     cspec.latent_precisions),
                   hyper=cspec.hyper)


def lagged_covariates(w: np.ndarray, rho: float,
                      design: np.ndarray) -> tuple:
    """(I - rho W)^-1 X and the factor I - rho W itself.

    Raises SingularTransform when the factor is numerically singular.
    """
    m = np.eye(w.shape[0]) - float(rho) * w
    sign, logdet = np.linalg.slogdet(m)
    if sign <= 0 or not np.isfinite(logdet) or logdet < -30.0:
        raise SingularTransform(f"I - rho W singular at rho={rho}")
    return np.linalg.solve(m, design), m


def condition_spatial_lag(cspec: ConditionerSpec, rho: float) -> LgmSpec:
    """Fix the spatial autocorrelation of a lag model.

    Model: y = X~ beta + eps with X~ = (I - rho W)^-1 X and the error
    precision tau_u (I - rho W)(I - rho W'). The latent field stacks the
    signal v = X~ beta + eps and the coefficients beta, with the
    coupling folded into the joint prior precision; observations pin y
    to v through a high fixed precision. Keeping the design [I | 0]
    confines that precision to rows whose curvature matches it, which
    the Newton solve needs at double precision. Coefficient columns are
    rescaled to unit norm internally (with the prior precision adjusted
    to match), a pure reparametrization with the same effect.
    """
    n, p = cspec.design.shape
    x_tilde, m = lagged_covariates(cspec.w, rho, cspec.design)
    col_scale = np.linalg.norm(x_tilde, axis=0)
    x_scaled = x_tilde / col_scale
    c_rho = m @ m.T
    c_xs = c_rho @ x_scaled
    xs_c_xs = x_scaled.T @ c_xs
    prec = np.full(p, DEFAULT_FIXED_EFFECT_PREC) \
        if cspec.latent_precisions is None else cspec.latent_precisions
    beta_prec = np.diag(prec / col_scale**2)
    design = np.hstack([np.eye(n), np.zeros((n, p))])

    def prior_precision(theta):
        q = np.empty((n + p, n + p))
        q[:n, :n] = theta[0] * c_rho
        q[:n, n:] = -theta[0] * c_xs
        q[n:, :n] = q[:n, n:].T
        q[n:, n:] = theta[0] * xs_c_xs + beta_prec
        return SpdMatrix(q)

    return LgmSpec(y=cspec.y, family=cspec.family,
                   structure=LatentStructure(design=design,
                                             prior_precision=prior_precision),
                   hyper=cspec.hyper)


def spatial_lag_col_scale(cspec: ConditionerSpec, rho: float) -> np.ndarray:
    """Internal column scaling used at this rho (to map marginals back)."""
    x_tilde, _ = lagged_covariates(cspec.w, rho, cspec.design)
    return np.linalg.norm(x_tilde, axis=0)


# ---------------------------------------------------------------------------
# engine-backed target

class LaplaceTarget:
    """Couples a conditioner to the nested-Laplace engine.

    `conditioner` maps a block value to an LgmSpec; `marginal_names`
    maps output names to latent indices, `theta_names` names the
    hyperparameter axes in grid order. `rescale` optionally maps the
    block value to per-latent scale factors that undo an internal
    reparametrization in the reported marginals.
    """

    def __init__(self, conditioner: Callable[[np.ndarray], LgmSpec],
                 marginal_names: dict = None, theta_names: tuple = (),
                 rescale: Callable[[np.ndarray], dict] = None):
        self.conditioner = conditioner
        self.marginal_names = dict(marginal_names or {})
        self.theta_names = tuple(theta_names)
        self.rescale = rescale

    def evaluate(self, z: np.ndarray) -> TargetEval:
        spec = self.conditioner(z)
        grid = explore_theta_grid(spec)
        scales = self.rescale(z) if self.rescale is not None else {}

        def marginals():
            latents = latent_marginals(spec, grid)
            out = {}
            for name, idx in self.marginal_names.items():
                m = latents[idx]
                s = scales.get(name)
                if s is not None:
                    m = GaussianMixture(means=m.means / s, sds=m.sds / s,
                                        weights=m.weights)
                out[name] = m
            for name, tm in zip(self.theta_names, theta_marginals(grid)):
                out[name] = tm
            return out

        return TargetEval(log_cml=grid.log_integral, marginals=marginals)


# ---------------------------------------------------------------------------
# scenarios

@dataclass
class Scenario:
    """Everything a chain needs for one experiment."""

    name: str
    target: LaplaceTarget
    prior: ZcPrior
    kernel: object
    init: np.ndarray
    z_names: tuple = ()


def linear_scenario(dataset: SimulatedDataset,
                    kernel_sd: float = DEFAULT_KERNEL_SD) -> Scenario:
    """Conditions the two-covariate Gaussian regression on its slopes."""
    design = np.column_stack([np.ones(dataset.y.size), dataset.covariates])
    cspec = ConditionerSpec(mode="offset_beta", y=dataset.y, design=design,
                            family=GaussianUnknownPrec(),
                            hyper=(gamma_prior("tau"),),
                            conditioned_cols=(1, 2))
    target = LaplaceTarget(lambda z: condition_offset_beta(cspec, z),
                           marginal_names={"alpha": 0},
                           theta_names=("tau",))
    prior = ZcPrior(terms=(GaussianTerm(0.0, DEFAULT_FIXED_EFFECT_PREC),
                           GaussianTerm(0.0, DEFAULT_FIXED_EFFECT_PREC)))
    kernel = RandomWalkGaussian(sds=np.full(2, kernel_sd))
    return Scenario(name="linear", target=target, prior=prior, kernel=kernel,
                    init=np.zeros(2), z_names=("beta1", "beta2"))


def poisson_scenario(dataset: SimulatedDataset,
                     kernel_sd: float = DEFAULT_KERNEL_SD) -> Scenario:
    """Conditions the two-covariate Poisson regression on its slopes."""
    design = np.column_stack([np.ones(dataset.y.size), dataset.covariates])
    cspec = ConditionerSpec(mode="offset_beta", y=dataset.y, design=design,
                            family=PoissonLog(), conditioned_cols=(1, 2))
    target = LaplaceTarget(lambda z: condition_offset_beta(cspec, z),
                           marginal_names={"alpha": 0})
    prior = ZcPrior(terms=(GaussianTerm(0.0, DEFAULT_FIXED_EFFECT_PREC),
                           GaussianTerm(0.0, DEFAULT_FIXED_EFFECT_PREC)))
    kernel = RandomWalkGaussian(sds=np.full(2, kernel_sd))
    return Scenario(name="poisson", target=target, prior=prior, kernel=kernel,
                    init=np.zeros(2), z_names=("beta1", "beta2"))


def missing_scenario(dataset: SimulatedDataset) -> Scenario:
    """Treats removed covariate values as a sampled block.

    Block prior: zero-mean Gaussians with variance four times that of a
    unit uniform. Kernel: independence Gaussian built from the observed
    covariate values' moments.
    """
    design = np.column_stack([np.ones(dataset.y.size), dataset.covariates])
    cspec = ConditionerSpec(mode="missing_covariate", y=dataset.y,
                            design=design, family=GaussianUnknownPrec(),
                            hyper=(gamma_prior("tau"),),
                            missing_col=1,
                            missing_rows=dataset.missing_rows)
    target = LaplaceTarget(lambda z: condition_missing_covariate(cspec, z),
                           marginal_names={"alpha": 0, "beta1": 1},
                           theta_names=("tau",))
    k = len(dataset.missing_rows)
    prior = ZcPrior(terms=tuple(GaussianTerm(0.0, 1.0 / (4.0 / 12.0))
                                for _ in range(k)))
    observed = dataset.covariates[~np.isnan(dataset.covariates[:, 0]), 0]
    kernel = IndependenceGaussian(means=np.full(k, float(np.mean(observed))),
                                  sds=np.full(k, float(np.std(observed,
                                                               ddof=1))))
    init = np.full(k, float(np.mean(observed)))
    return Scenario(name="missing", target=target, prior=prior, kernel=kernel,
                    init=init,
                    z_names=tuple(f"u1_{r}" for r in dataset.missing_rows))


def lasso_scenario(data: dict = None, sigma: float = DEFAULT_LASSO_SIGMA,
                   kernel_sd: float = 0.1) -> Scenario:
    """Double-exponential shrinkage on standardized season statistics.

    The block holds all five coefficients with independent Laplace(0,
    sigma) priors; the conditioned model is intercept plus Gaussian
    noise with unknown precision. Covariates and response are
    standardized (response centered), matching how shrinkage paths are
    usually computed.
    """
    if data is None:
        data = load_hitters()
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(data["design"], dtype=float)
    y = np.asarray(data["salary"], dtype=float)
    x_std = (x - x.mean(axis=0)) / x.std(axis=0)
    y_std = (y - y.mean()) / y.std()
    p = x.shape[1]
    design = np.column_stack([np.ones(y.size), x_std])
    cspec = ConditionerSpec(mode="offset_beta", y=y_std, design=design,
                            family=GaussianUnknownPrec(),
                            hyper=(gamma_prior("tau"),),
                            conditioned_cols=tuple(range(1, p + 1)))
    target = LaplaceTarget(lambda z: condition_offset_beta(cspec, z),
                           marginal_names={"intercept": 0},
                           theta_names=("tau",))
    prior = ZcPrior(terms=tuple(LaplaceTerm(0.0, sigma) for _ in range(p)))
    kernel = RandomWalkGaussian(sds=np.full(p, kernel_sd))
    return Scenario(name="lasso", target=target, prior=prior, kernel=kernel,
                    init=np.zeros(p), z_names=tuple(data["names"]))


def nhanes_scenario(data: dict = None) -> Scenario:
    """Imputes missing body mass index inside the cholesterol regression.

    chl = b0 + b1 bmi + b2 age2 + b3 age3 + noise; rows with observed
    cholesterol enter the likelihood, all nine missing bmi values are
    sampled. Their prior and the proposal kernel are Gaussians centered
    at the observed bmi mean; the prior variance is four times the
    observed variance.
    """
    if data is None:
        data = load_nhanes()
    bmi, chl, age = data["bmi"], data["chl"], data["age"]
    n = bmi.size
    missing = tuple(int(i) for i in np.flatnonzero(np.isnan(bmi)))
    observed = bmi[~np.isnan(bmi)]
    center = float(np.mean(observed))
    var4 = 4.0 * float(np.var(observed, ddof=1))
    design = np.column_stack([np.ones(n), bmi,
                              (age == 2).astype(float),
                              (age == 3).astype(float)])
    precisions = np.array([IMPROPER_INTERCEPT_PREC,
                           DEFAULT_FIXED_EFFECT_PREC,
                           DEFAULT_FIXED_EFFECT_PREC,
                           DEFAULT_FIXED_EFFECT_PREC])
    cspec = ConditionerSpec(mode="missing_covariate", y=chl, design=design,
                            family=GaussianUnknownPrec(),
                            hyper=(gamma_prior("tau"),),
                            latent_precisions=precisions,
                            missing_col=1, missing_rows=missing)
    target = LaplaceTarget(lambda z: condition_missing_covariate(cspec, z),
                           marginal_names={"beta0": 0, "beta1": 1,
                                           "beta2": 2, "beta3": 3},
                           theta_names=("tau",))
    k = len(missing)
    prior = ZcPrior(terms=tuple(GaussianTerm(center, 1.0 / var4)
                                for _ in range(k)))
    kernel = IndependenceGaussian(means=np.full(k, center),
                                  sds=np.full(k, float(np.std(observed,
                                                               ddof=1))))
    return Scenario(name="nhanes", target=target, prior=prior, kernel=kernel,
                    init=np.full(k, center),
                    z_names=tuple(f"bmi_{i + 1}" for i in missing))


def columbus_scenario(data: dict = None, w: np.ndarray = None,
                      kernel_sd: float = 0.25) -> Scenario:
    """Spatial lag model on the bundled area data, sampling rho.

    Latent field: 49 structured errors plus intercept, income, and
    housing-value coefficients; rho has a flat prior on (-1.5, 1).
    """
    if data is None:
        data = load_columbus()
    if w is None:
        w = load_columbus_w()
    n = data["crime"].size
    design = np.column_stack([np.ones(n), data["income"], data["hvalue"]])
    cspec = ConditionerSpec(mode="spatial_lag", y=data["crime"],
                            design=design,
                            family=GaussianKnownPrec(tau=SPATIAL_OBS_PREC),
                            hyper=(gamma_prior("tau_u"),), w=w)
    target = LaplaceTarget(
        lambda z: condition_spatial_lag(cspec, z[0]),
        marginal_names={"intercept": n, "beta_income": n + 1,
                        "beta_hvalue": n + 2},
        theta_names=("tau_u",),
        rescale=lambda z: dict(zip(("intercept", "beta_income", "beta_hvalue"),
                                   spatial_lag_col_scale(cspec, z[0]))))
    prior = ZcPrior(terms=(UniformTerm(-1.5, 1.0),))
    kernel = RandomWalkGaussian(sds=np.array([kernel_sd]))
    return Scenario(name="columbus", target=target, prior=prior,
                    kernel=kernel, init=np.zeros(1), z_names=("rho",))
