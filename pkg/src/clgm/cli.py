"""Config-driven experiment runner.

`clgm run <config.json>` executes one experiment: a conditioned-block
chain backed by the nested-Laplace engine, a plain MCMC run over the
full parameter vector, an exact conjugate posterior where one exists,
or any subset of those. Each method writes kept samples, per-parameter
marginal densities, a summary table, and diagnostics into its own
subdirectory. `clgm simulate` writes the synthetic datasets to disk and
`clgm compare` reports per-parameter distances between two finished
runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import gammaln

from clgm import zoo
from clgm.errors import ClgmError, ConfigError, MissingParameter
from clgm.marginals import (
    GridDensity,
    bma_average,
    grid_from_csv,
    grid_to_csv,
    ks_densities,
    moments,
    samples_to_grid,
    summary_record,
    to_grid,
)
from clgm.mh import (
    CallableTarget,
    ChainConfig,
    RandomWalkGaussian,
    UniformTerm,
    ZcPrior,
    acceptance_rate,
    ess_from_samples,
    run_chain,
)
from clgm.model import (
    DEFAULT_FIXED_EFFECT_PREC,
    IMPROPER_INTERCEPT_PREC,
    LOG_2PI,
    gamma_prior,
)
from clgm.oracle import conjugate_regression, full_mcmc

SCENARIOS = ("linear", "poisson", "missing-sim", "lasso", "nhanes",
             "columbus", "custom")
METHODS = ("inla-mcmc", "mcmc", "exact")
SIMULATED = ("linear", "poisson", "missing-sim")

DESK_PROTOCOL = (10500, 500, 10)
PAPER_PROTOCOL = (100500, 500, 10)

# offsets keep the methods' streams independent under one config seed
METHOD_SEED_OFFSET = {"inla-mcmc": 0, "mcmc": 1, "exact": 2}

# random-walk steps: per-coordinate spread estimates scaled by the
# usual 2.4/sqrt(d) rule
RW_SCALE = 2.4

_CONFIG_KEYS = {"scenario", "seed", "out", "methods", "iters", "burn_in",
                "thin", "adapt", "kernel_sd", "sigma", "data", "data_seed",
                "target_mean", "target_sd"}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    seed: int
    out: str
    methods: tuple
    iters: int
    burn_in: int
    thin: int
    adapt: bool
    kernel_sd: float | None
    sigma: float | None
    data: str | None
    data_seed: int
    target_mean: tuple
    target_sd: tuple
    raw: dict


def parse_config(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("scenario", "seed", "out", "methods"):
        if key not in raw:
            raise ConfigError(f"missing required config key {key!r}")
    scenario = raw["scenario"]
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    methods = tuple(raw["methods"])
    if not methods:
        raise ConfigError("methods must not be empty")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    if "exact" in methods and scenario != "linear":
        raise ConfigError("exact posteriors exist only for scenario linear")
    if scenario == "custom":
        if set(methods) != {"mcmc"}:
            raise ConfigError("custom scenarios support only method mcmc")
        if "target_mean" not in raw or "target_sd" not in raw:
            raise ConfigError("custom scenarios need target_mean, target_sd")
        if len(raw["target_mean"]) != len(raw["target_sd"]):
            raise ConfigError("target_mean and target_sd lengths differ")
    elif "target_mean" in raw or "target_sd" in raw:
        raise ConfigError("target_mean/target_sd apply only to custom")
    if "kernel_sd" in raw and scenario not in ("linear", "poisson", "lasso",
                                               "columbus"):
        raise ConfigError(f"kernel_sd does not apply to {scenario}")
    if "sigma" in raw and scenario != "lasso":
        raise ConfigError("sigma applies only to lasso")
    if ("data" in raw or "data_seed" in raw) and scenario not in SIMULATED:
        raise ConfigError(f"data/data_seed do not apply to {scenario}")
    iters = int(raw.get("iters", DESK_PROTOCOL[0]))
    burn_in = int(raw.get("burn_in", DESK_PROTOCOL[1]))
    thin = int(raw.get("thin", DESK_PROTOCOL[2]))
    if iters <= burn_in:
        raise ConfigError("iters must exceed burn_in")
    if (iters - burn_in) // thin < 100:
        raise ConfigError("protocol keeps fewer than 100 draws; "
                          "marginal densities need at least 100")
    return ExperimentConfig(
        scenario=scenario, seed=int(raw["seed"]), out=str(raw["out"]),
        methods=methods, iters=iters, burn_in=burn_in, thin=thin,
        adapt=bool(raw.get("adapt", False)),
        kernel_sd=float(raw["kernel_sd"]) if "kernel_sd" in raw else None,
        sigma=float(raw["sigma"]) if "sigma" in raw else None,
        data=str(raw["data"]) if "data" in raw else None,
        data_seed=int(raw.get("data_seed", 1)),
        target_mean=tuple(raw.get("target_mean", ())),
        target_sd=tuple(raw.get("target_sd", ())),
        raw=raw)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(json.load(fh))


# ---------------------------------------------------------------------------
# simulated-data files

def write_dataset_csv(path, dataset, covariate_names) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("y," + ",".join(covariate_names) + "\n")
        for i in range(dataset.y.size):
            cells = [repr(float(dataset.y[i]))]
            for j in range(dataset.covariates.shape[1]):
                v = dataset.covariates[i, j]
                cells.append("" if np.isnan(v) else repr(float(v)))
            fh.write(",".join(cells) + "\n")


def read_dataset_csv(path) -> zoo.SimulatedDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "y":
        raise ConfigError(f"{path}: expected a response column named y")
    y = np.array([float(r[0]) for r in body])
    covs = np.array([[float(c) if c else math.nan for c in r[1:]]
                     for r in body])
    missing = tuple(int(i) for i in np.flatnonzero(np.isnan(covs[:, 0])))
    return zoo.SimulatedDataset(y=y, covariates=covs, true_params={},
                                seed=-1, missing_rows=missing)


def _load_or_simulate(cfg: ExperimentConfig) -> zoo.SimulatedDataset:
    if cfg.data is not None:
        return read_dataset_csv(cfg.data)
    simulator = {"linear": zoo.simulate_linear,
                 "poisson": zoo.simulate_poisson,
                 "missing-sim": zoo.simulate_missing}[cfg.scenario]
    return simulator(cfg.data_seed)


# ---------------------------------------------------------------------------
# scenario assembly

def build_scenario(cfg: ExperimentConfig) -> zoo.Scenario:
    if cfg.scenario == "linear":
        kw = {} if cfg.kernel_sd is None else {"kernel_sd": cfg.kernel_sd}
        return zoo.linear_scenario(_load_or_simulate(cfg), **kw)
    if cfg.scenario == "poisson":
        kw = {} if cfg.kernel_sd is None else {"kernel_sd": cfg.kernel_sd}
        return zoo.poisson_scenario(_load_or_simulate(cfg), **kw)
    if cfg.scenario == "missing-sim":
        return zoo.missing_scenario(_load_or_simulate(cfg))
    if cfg.scenario == "lasso":
        kw = {}
        if cfg.sigma is not None:
            kw["sigma"] = cfg.sigma
        if cfg.kernel_sd is not None:
            kw["kernel_sd"] = cfg.kernel_sd
        return zoo.lasso_scenario(**kw)
    if cfg.scenario == "nhanes":
        return zoo.nhanes_scenario()
    if cfg.scenario == "columbus":
        kw = {} if cfg.kernel_sd is None else {"kernel_sd": cfg.kernel_sd}
        return zoo.columbus_scenario(**kw)
    raise ConfigError(f"scenario {cfg.scenario} has no engine-backed target")


# ---------------------------------------------------------------------------
# full-parameter posteriors for the plain MCMC route

@dataclass(frozen=True)
class FullPosterior:
    """Joint log density over one chain coordinate per parameter.

    `transforms` marks coordinates the chain carries on log scale;
    outputs are mapped back to the natural scale.
    """

    names: tuple
    transforms: tuple
    log_density: Callable[[np.ndarray], float]
    init: np.ndarray
    step_sds: np.ndarray


def _ols(x, y):
    beta, _, _, _ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    dof = max(x.shape[0] - x.shape[1], 1)
    s2 = float(resid @ resid) / dof
    se = np.sqrt(s2 * np.diag(np.linalg.inv(x.T @ x)))
    return beta, se, s2


def _poisson_irls(x, y):
    beta = np.zeros(x.shape[1])
    for _ in range(50):
        mu = np.exp(x @ beta)
        info = x.T @ (mu[:, None] * x)
        new = beta + np.linalg.solve(info, x.T @ (y - mu))
        if np.max(np.abs(new - beta)) < 1e-10:
            beta = new
            break
        beta = new
    return beta, np.sqrt(np.diag(np.linalg.inv(info)))


def _gaussian_loglik(resid, t):
    return 0.5 * resid.size * (t - LOG_2PI) \
        - 0.5 * math.exp(t) * float(resid @ resid)


def full_posterior_linear(dataset) -> FullPosterior:
    y, u = dataset.y, dataset.covariates
    x = np.column_stack([np.ones(y.size), u])
    beta_prior = 0.5 * math.log(DEFAULT_FIXED_EFFECT_PREC / (2.0 * math.pi))
    hp = gamma_prior("tau")
    beta0, se, s2 = _ols(x, y)

    def log_density(v):
        resid = y - x @ v[:3]
        lp = 3.0 * beta_prior \
            - 0.5 * DEFAULT_FIXED_EFFECT_PREC * float(v[:3] @ v[:3])
        return _gaussian_loglik(resid, v[3]) + lp + hp.log_prior_internal(v[3])

    init = np.append(beta0, math.log(1.0 / s2))
    sds = np.append(se, math.sqrt(2.0 / y.size))
    return FullPosterior(names=("alpha", "beta1", "beta2", "tau"),
                         transforms=("identity",) * 3 + ("log",),
                         log_density=log_density, init=init,
                         step_sds=RW_SCALE / 2.0 * sds)


def full_posterior_poisson(dataset) -> FullPosterior:
    y, u = dataset.y, dataset.covariates
    x = np.column_stack([np.ones(y.size), u])
    beta_prior = 0.5 * math.log(DEFAULT_FIXED_EFFECT_PREC / (2.0 * math.pi))
    lgamma = float(np.sum(gammaln(y + 1.0)))
    beta0, se = _poisson_irls(x, y)

    def log_density(v):
        eta = x @ v
        ll = float(y @ eta - np.sum(np.exp(eta))) - lgamma
        return ll + 3.0 * beta_prior \
            - 0.5 * DEFAULT_FIXED_EFFECT_PREC * float(v @ v)

    return FullPosterior(names=("alpha", "beta1", "beta2"),
                         transforms=("identity",) * 3,
                         log_density=log_density, init=beta0,
                         step_sds=RW_SCALE / math.sqrt(3.0) * se)


def full_posterior_missing(dataset) -> FullPosterior:
    y = dataset.y
    u1 = dataset.covariates[:, 0]
    rows = list(dataset.missing_rows)
    obs = ~np.isnan(u1)
    x_obs = np.column_stack([np.ones(int(obs.sum())), u1[obs]])
    beta0, _, s2 = _ols(x_obs, y[obs])
    beta_prior = 0.5 * math.log(DEFAULT_FIXED_EFFECT_PREC / (2.0 * math.pi))
    m_prec = 3.0
    m_prior = 0.5 * math.log(m_prec / (2.0 * math.pi))
    hp = gamma_prior("tau")
    k = len(rows)

    def log_density(v):
        filled = u1.copy()
        filled[rows] = v[3:]
        resid = y - v[0] - v[1] * filled
        lp = 2.0 * beta_prior \
            - 0.5 * DEFAULT_FIXED_EFFECT_PREC * float(v[:2] @ v[:2]) \
            + k * m_prior - 0.5 * m_prec * float(v[3:] @ v[3:])
        return _gaussian_loglik(resid, v[2]) + lp + hp.log_prior_internal(v[2])

    tau_hat = 1.0 / s2
    m_sd = 1.0 / math.sqrt(m_prec + beta0[1] ** 2 * tau_hat)
    init = np.concatenate([beta0, [math.log(tau_hat)],
                           np.full(k, float(np.mean(u1[obs])))])
    sds = np.concatenate([[0.3, 0.4, math.sqrt(2.0 / y.size)],
                          np.full(k, m_sd)])
    names = ("alpha", "beta1", "tau") + tuple(f"u1_{r}" for r in rows)
    return FullPosterior(names=names,
                         transforms=("identity", "identity", "log")
                         + ("identity",) * k,
                         log_density=log_density, init=init,
                         step_sds=RW_SCALE / math.sqrt(3.0 + k) * sds)


def full_posterior_lasso(sigma: float, data=None) -> FullPosterior:
    if data is None:
        data = zoo.load_hitters()
    x_raw = data["design"]
    x = (x_raw - x_raw.mean(axis=0)) / x_raw.std(axis=0)
    y = (data["salary"] - data["salary"].mean()) / data["salary"].std()
    n, p = x.shape
    beta_prior = 0.5 * math.log(DEFAULT_FIXED_EFFECT_PREC / (2.0 * math.pi))
    lap_const = -math.log(2.0 * sigma)
    hp = gamma_prior("tau")
    xfull = np.column_stack([np.ones(n), x])
    beta0, se, s2 = _ols(xfull, y)

    def log_density(v):
        resid = y - v[0] - x @ v[1:6]
        lp = beta_prior - 0.5 * DEFAULT_FIXED_EFFECT_PREC * v[0] ** 2 \
            + p * lap_const - float(np.sum(np.abs(v[1:6]))) / sigma
        return _gaussian_loglik(resid, v[6]) + lp + hp.log_prior_internal(v[6])

    init = np.concatenate([[0.0], beta0[1:], [math.log(1.0 / s2)]])
    sds = np.concatenate([se, [math.sqrt(2.0 / n)]])
    return FullPosterior(names=("intercept",) + tuple(data["names"])
                         + ("tau",),
                         transforms=("identity",) * 6 + ("log",),
                         log_density=log_density, init=init,
                         step_sds=RW_SCALE / math.sqrt(7.0) * sds)


def full_posterior_nhanes(data=None) -> FullPosterior:
    if data is None:
        data = zoo.load_nhanes()
    bmi, chl, age = data["bmi"], data["chl"], data["age"]
    rows = [int(i) for i in np.flatnonzero(np.isnan(bmi))]
    obs = ~np.isnan(chl)
    center = float(np.mean(bmi[~np.isnan(bmi)]))
    var4 = 4.0 * float(np.var(bmi[~np.isnan(bmi)], ddof=1))
    m_prec = 1.0 / var4
    m_prior = 0.5 * math.log(m_prec / (2.0 * math.pi))
    b_prec = np.array([IMPROPER_INTERCEPT_PREC] + [DEFAULT_FIXED_EFFECT_PREC] * 3)
    b_prior = float(np.sum(0.5 * np.log(b_prec / (2.0 * math.pi))))
    hp = gamma_prior("tau")
    age2 = (age == 2).astype(float)
    age3 = (age == 3).astype(float)
    k = len(rows)

    filled0 = bmi.copy()
    filled0[rows] = center
    x0 = np.column_stack([np.ones(25), filled0, age2, age3])[obs]
    beta0, se, s2 = _ols(x0, chl[obs])
    tau_hat = 1.0 / s2

    def log_density(v):
        filled = bmi.copy()
        filled[rows] = v[5:]
        eta = v[0] + v[1] * filled + v[2] * age2 + v[3] * age3
        resid = (chl - eta)[obs]
        dm = v[5:] - center
        lp = b_prior - 0.5 * float(b_prec @ (v[:4] ** 2)) \
            + k * m_prior - 0.5 * m_prec * float(dm @ dm)
        return _gaussian_loglik(resid, v[4]) + lp + hp.log_prior_internal(v[4])

    m_sd = 1.0 / math.sqrt(m_prec + beta0[1] ** 2 * tau_hat)
    init = np.concatenate([beta0, [math.log(tau_hat)], np.full(k, center)])
    sds = np.concatenate([se, [math.sqrt(2.0 / int(obs.sum()))],
                          np.full(k, m_sd)])
    names = ("beta0", "beta1", "beta2", "beta3", "tau") \
        + tuple(f"bmi_{r + 1}" for r in rows)
    return FullPosterior(names=names,
                         transforms=("identity",) * 4 + ("log",)
                         + ("identity",) * k,
                         log_density=log_density, init=init,
                         step_sds=RW_SCALE / math.sqrt(5.0 + k) * sds)


def full_posterior_columbus(data=None, w=None) -> FullPosterior:
    if data is None:
        data = zoo.load_columbus()
    if w is None:
        w = zoo.load_columbus_w()
    y = data["crime"]
    x = np.column_stack([np.ones(y.size), data["income"], data["hvalue"]])
    n = y.size
    beta_prior = 1.5 * math.log(DEFAULT_FIXED_EFFECT_PREC / (2.0 * math.pi))
    rho_term = UniformTerm(-1.5, 1.0)
    hp = gamma_prior("tau_u")
    beta0, se, s2 = _ols(x, y)

    def log_density(v):
        rho = v[0]
        lp_rho = rho_term.log_density(rho)
        if lp_rho == -math.inf:
            return -math.inf
        m = np.eye(n) - rho * w
        sign, logdet = np.linalg.slogdet(m)
        if sign <= 0:
            return -math.inf
        resid = m.T @ (y - np.linalg.solve(m, x @ v[1:4]))
        ll = 0.5 * n * (v[4] - LOG_2PI) + logdet \
            - 0.5 * math.exp(v[4]) * float(resid @ resid)
        lp = lp_rho + beta_prior \
            - 0.5 * DEFAULT_FIXED_EFFECT_PREC * float(v[1:4] @ v[1:4])
        return ll + lp + hp.log_prior_internal(v[4])

    init = np.concatenate([[0.0], beta0, [math.log(1.0 / s2)]])
    sds = np.concatenate([[0.12], se, [math.sqrt(2.0 / n)]])
    return FullPosterior(names=("rho", "intercept", "beta_income",
                                "beta_hvalue", "tau_u"),
                         transforms=("identity",) * 4 + ("log",),
                         log_density=log_density, init=init,
                         step_sds=RW_SCALE / math.sqrt(5.0) * sds)


def full_posterior_custom(cfg: ExperimentConfig) -> FullPosterior:
    mean = np.asarray(cfg.target_mean, dtype=float)
    sd = np.asarray(cfg.target_sd, dtype=float)
    if np.any(sd <= 0):
        raise ConfigError("target_sd must be positive")
    d = mean.size

    def log_density(v):
        z = (v - mean) / sd
        return float(-0.5 * z @ z - np.sum(np.log(sd))
                     - 0.5 * d * LOG_2PI)

    return FullPosterior(names=tuple(f"z{i + 1}" for i in range(d)),
                         transforms=("identity",) * d,
                         log_density=log_density, init=mean.copy(),
                         step_sds=RW_SCALE / math.sqrt(d) * sd)


def build_full_posterior(cfg: ExperimentConfig) -> FullPosterior:
    if cfg.scenario == "linear":
        return full_posterior_linear(_load_or_simulate(cfg))
    if cfg.scenario == "poisson":
        return full_posterior_poisson(_load_or_simulate(cfg))
    if cfg.scenario == "missing-sim":
        return full_posterior_missing(_load_or_simulate(cfg))
    if cfg.scenario == "lasso":
        return full_posterior_lasso(cfg.sigma if cfg.sigma is not None
                                    else zoo.DEFAULT_LASSO_SIGMA)
    if cfg.scenario == "nhanes":
        return full_posterior_nhanes()
    if cfg.scenario == "columbus":
        return full_posterior_columbus()
    return full_posterior_custom(cfg)


# ---------------------------------------------------------------------------
# output writing

def write_samples_csv(path, names, steps, samples) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step," + ",".join(names) + "\n")
        for s, row in zip(steps, samples):
            fh.write(str(int(s)) + ","
                     + ",".join(repr(float(v)) for v in row) + "\n")


def read_samples_csv(path) -> tuple:
    """Returns (coordinate names, kept steps, sample matrix)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    names = tuple(rows[0][1:])
    steps = np.array([int(r[0]) for r in rows[1:]])
    return names, steps, np.array([[float(c) for c in r[1:]]
                                   for r in rows[1:]])


def _write_method_outputs(method_dir: Path, names, steps, samples,
                          marginal_map: dict, diagnostics: dict) -> None:
    method_dir.mkdir(parents=True, exist_ok=True)
    (method_dir / "marginals").mkdir(exist_ok=True)
    write_samples_csv(method_dir / "samples.csv",
                      names[:samples.shape[1]], steps, samples)
    records = []
    for name in names:
        g = marginal_map[name]
        (method_dir / "marginals" / f"{name}.csv").write_text(
            grid_to_csv(g), encoding="utf-8")
        records.append(summary_record(name, g))
    with open(method_dir / "summary.csv", "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("param,mean,sd,q2.5,q50,q97.5\n")
        for r in records:
            fh.write(f"{r['name']},{r['mean']!r},{r['sd']!r},"
                     f"{r['q2.5']!r},{r['q50']!r},{r['q97.5']!r}\n")
    with open(method_dir / "diagnostics.json", "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(diagnostics, fh, indent=2)
        fh.write("\n")


def _chain_diagnostics(method, seed, cfg, result, names, samples,
                       runtime) -> dict:
    return {
        "method": method,
        "seed": seed,
        "iters": cfg.iters,
        "burn_in": cfg.burn_in,
        "thin": cfg.thin,
        "kept": int(samples.shape[0]),
        "acceptance_rate": acceptance_rate(result),
        "ess": {name: ess_from_samples(samples[:, j])
                for j, name in enumerate(names)},
        "prior_rejections": result.stats.prior_rejections,
        "engine_failures": result.stats.engine_failures,
        "final_scale": result.final_scale,
        "runtime_seconds": runtime,
    }


def run_inla_mcmc(cfg: ExperimentConfig, out: Path) -> None:
    sc = build_scenario(cfg)
    seed = cfg.seed + METHOD_SEED_OFFSET["inla-mcmc"]
    chain_cfg = ChainConfig(iters=cfg.iters, burn_in=cfg.burn_in,
                            thin=cfg.thin, seed=seed, init=sc.init,
                            adapt=cfg.adapt)
    t0 = time.perf_counter()
    result = run_chain(chain_cfg, sc.target, sc.prior, sc.kernel,
                       coord_names=sc.z_names)
    runtime = time.perf_counter() - t0
    marginal_map = {}
    for j, name in enumerate(sc.z_names):
        marginal_map[name] = samples_to_grid(result.samples[:, j])
    averaged = sorted(result.kept_marginals[0]) if result.kept_marginals \
        else []
    for name in averaged:
        marginal_map[name] = bma_average(
            [km[name] for km in result.kept_marginals])
    names = tuple(sc.z_names) + tuple(averaged)
    diag = _chain_diagnostics("inla-mcmc", seed, cfg, result, sc.z_names,
                              result.samples, runtime)
    _write_method_outputs(out / "inla-mcmc", names, result.kept_steps,
                          result.samples, marginal_map, diag)


def run_full_mcmc(cfg: ExperimentConfig, out: Path) -> None:
    post = build_full_posterior(cfg)
    seed = cfg.seed + METHOD_SEED_OFFSET["mcmc"]
    chain_cfg = ChainConfig(iters=cfg.iters, burn_in=cfg.burn_in,
                            thin=cfg.thin, seed=seed, init=post.init,
                            adapt=cfg.adapt)
    t0 = time.perf_counter()
    result = full_mcmc(post.log_density, post.step_sds, chain_cfg)
    runtime = time.perf_counter() - t0
    natural = result.samples.copy()
    for j, tr in enumerate(post.transforms):
        if tr == "log":
            natural[:, j] = np.exp(natural[:, j])
    marginal_map = {name: samples_to_grid(natural[:, j])
                    for j, name in enumerate(post.names)}
    diag = _chain_diagnostics("mcmc", seed, cfg, result, post.names,
                              natural, runtime)
    _write_method_outputs(out / "mcmc", post.names, result.kept_steps,
                          natural, marginal_map, diag)


def run_exact(cfg: ExperimentConfig, out: Path) -> None:
    dataset = _load_or_simulate(cfg)
    x = np.column_stack([np.ones(dataset.y.size), dataset.covariates])
    t0 = time.perf_counter()
    post = conjugate_regression(dataset.y, x,
                                np.full(3, DEFAULT_FIXED_EFFECT_PREC),
                                a0=1.0, b0=5e-5)
    names = ("alpha", "beta1", "beta2", "tau")
    marginal_map = {name: to_grid(post.beta_marginal(j))
                    for j, name in enumerate(names[:3])}
    marginal_map["tau"] = to_grid(post.tau_marginal())
    seed = cfg.seed + METHOD_SEED_OFFSET["exact"]
    rng = np.random.default_rng(seed)
    kept = (cfg.iters - cfg.burn_in) // cfg.thin
    betas, taus = post.sample(kept, rng)
    samples = np.column_stack([betas, taus])
    runtime = time.perf_counter() - t0
    diag = {"method": "exact", "seed": seed, "kept": kept,
            "log_evidence": post.log_evidence, "runtime_seconds": runtime}
    _write_method_outputs(out / "exact", names, np.arange(1, kept + 1),
                          samples, marginal_map, diag)


# ---------------------------------------------------------------------------
# commands

def apply_paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    iters, burn_in, thin = PAPER_PROTOCOL
    return parse_config(dict(cfg.raw, iters=iters, burn_in=burn_in,
                             thin=thin))


def cmd_run(config_path, paper_scale: bool = False) -> int:
    cfg = load_config(config_path)
    if paper_scale:
        cfg = apply_paper_scale(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config_echo.json", "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(cfg.raw, fh, indent=2)
        fh.write("\n")
    runners = {"inla-mcmc": run_inla_mcmc, "mcmc": run_full_mcmc,
               "exact": run_exact}
    for method in cfg.methods:
        t0 = time.perf_counter()
        runners[method](cfg, out)
        print(f"{cfg.scenario}/{method}: done in "
              f"{time.perf_counter() - t0:.1f}s -> {out / method}")
    return 0


def cmd_simulate(scenario, seed, out) -> int:
    if scenario not in SIMULATED:
        raise ConfigError(f"scenario {scenario!r} has no simulator")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if scenario == "missing-sim":
        dataset = zoo.simulate_missing(seed)
        write_dataset_csv(out / "dataset.csv", dataset, ("u1",))
        truth = dict(dataset.true_params)
        truth["held_out"] = {f"u1_{r}": v for r, v in
                             zip(dataset.missing_rows, dataset.true_missing)}
    else:
        simulator = {"linear": zoo.simulate_linear,
                     "poisson": zoo.simulate_poisson}[scenario]
        dataset = simulator(seed)
        write_dataset_csv(out / "dataset.csv", dataset, ("u1", "u2"))
        truth = dict(dataset.true_params)
    with open(out / "truth.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(truth, fh, indent=2)
        fh.write("\n")
    print(f"{scenario}: wrote {out / 'dataset.csv'} and {out / 'truth.json'}")
    return 0


def _read_marginal_dir(run_dir: Path) -> dict:
    mdir = run_dir / "marginals"
    if not mdir.is_dir():
        raise MissingParameter(f"{run_dir} has no marginals directory")
    return {p.stem: grid_from_csv(p.read_text(encoding="utf-8"))
            for p in sorted(mdir.glob("*.csv"))}


def cmd_compare(dir_a, dir_b, ks_threshold=None) -> int:
    a = _read_marginal_dir(Path(dir_a))
    b = _read_marginal_dir(Path(dir_b))
    if set(a) != set(b):
        only_a = sorted(set(a) - set(b))
        only_b = sorted(set(b) - set(a))
        raise MissingParameter(
            f"parameter sets differ: only in {dir_a}: {only_a}; "
            f"only in {dir_b}: {only_b}")
    lines = ["param,ks,mean_diff,sd_diff"]
    worst = 0.0
    for name in sorted(a):
        ks = ks_densities(a[name], b[name])
        mean_a, sd_a = moments(a[name])
        mean_b, sd_b = moments(b[name])
        lines.append(f"{name},{ks!r},{mean_a - mean_b!r},{sd_a - sd_b!r}")
        worst = max(worst, ks)
    Path("compare.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    if ks_threshold is not None and worst > ks_threshold:
        print(f"worst KS {worst:.4f} exceeds threshold {ks_threshold}")
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="clgm",
        description="conditioned latent Gaussian model experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.add_argument("--paper-scale", action="store_true",
                       help="override the run protocol to 100500/500/10")

    p_sim = sub.add_parser("simulate", help="write a simulated dataset")
    p_sim.add_argument("scenario", choices=SIMULATED)
    p_sim.add_argument("--seed", type=int, default=1)
    p_sim.add_argument("--out", required=True)

    p_cmp = sub.add_parser("compare", help="compare two finished runs")
    p_cmp.add_argument("dir_a")
    p_cmp.add_argument("dir_b")
    p_cmp.add_argument("--ks-threshold", type=float, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, paper_scale=args.paper_scale)
        if args.command == "simulate":
            return cmd_simulate(args.scenario, args.seed, args.out)
        return cmd_compare(args.dir_a, args.dir_b, args.ks_threshold)
    except (ConfigError, MissingParameter, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ClgmError as exc:
        print(f"engine abort: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
