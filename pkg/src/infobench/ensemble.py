"""Multi-model Bayesian probabilities under misspecified measurement noise.

Two candidate structures (Nash cascade, abc) are run over grids of sampled
parameters and perturbed forcings; Gaussian observation densities of varying
width turn the runs into marginal likelihoods, and bootstrap resampling of
observation days gives spread. The point of the exercise is that the
resulting model probabilities flip with the choice of the noise widths.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .dynamics import AbcParams, Forcing, HymodParams, NashParams
from .series import as_values

log = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class PerturbationSpec:
    """iid Gaussian noise on daily precipitation, clipped at zero."""

    sigma_u: float
    n_series: int = 500

    def __post_init__(self):
        if self.sigma_u <= 0:
            raise ValueError("sigma_u must be positive")
        if self.n_series < 1:
            raise ValueError("need at least one series")


@dataclass
class LikelihoodSpec:
    """iid Gaussian observation density on streamflow."""

    sigma_y: float

    def __post_init__(self):
        if self.sigma_y <= 0:
            raise ValueError("sigma_y must be positive")


def sample_parameters(model_kind: str, n: int, seed: int, n_quick: int = 3, n_slow: int = 3):
    """Uniform parameter draws over the documented ranges.

    abc draws are rejection-sampled onto a + b <= 1, which preserves
    uniformity on the admissible region (acceptance rate 1/2).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if model_kind == "nash":
        return [NashParams(k) for k in rng.uniform(0.0, 1.0, (n, 3))]
    if model_kind == "abc":
        out = []
        while len(out) < n:
            draws = rng.uniform(0.0, 1.0, (2 * (n - len(out)) + 8, 3))
            for a, b, c in draws:
                if a + b <= 1.0:
                    out.append(AbcParams(a, b, c))
                    if len(out) == n:
                        break
        return out
    if model_kind == "hymod":
        out = []
        for _ in range(n):
            c_max = rng.uniform(0.0, 1000.0)
            while c_max == 0.0:
                c_max = rng.uniform(0.0, 1000.0)
            out.append(HymodParams(
                c_max=c_max,
                b_exp=rng.uniform(0.0, 10.0),
                alpha=rng.uniform(0.0, 1.0),
                k_quick=rng.uniform(0.0, 1.0),
                k_slow=rng.uniform(0.0, 1.0),
                n_quick=n_quick,
                n_slow=n_slow,
            ))
        return out
    raise ValueError(f"unknown model kind {model_kind!r}")


def parameter_matrix(samples) -> np.ndarray:
    """Stack Nash or abc parameter samples into the (n, 3) layout the batch
    simulators take."""
    rows = []
    for s in samples:
        if isinstance(s, NashParams):
            rows.append(s.k)
        elif isinstance(s, AbcParams):
            rows.append([s.a, s.b, s.c])
        else:
            raise TypeError(f"cannot stack {type(s).__name__}")
    return np.asarray(rows, dtype=float)


def perturb_forcing(forcing: Forcing, spec: PerturbationSpec, seed: int):
    """n_series independent noisy copies of the precipitation record.

    Negative perturbed values are clipped at zero, which biases wet-day means
    upward by the clipped half-normal mass; the bias is physical (negative
    rain does not exist) and visible to callers through the returned values.
    """
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, spec.sigma_u, size=(spec.n_series, forcing.n_days))
    precip = np.clip(forcing.precip[None, :] + noise, 0.0, None)
    return [Forcing(precip=p, pet=forcing.pet.copy()) for p in precip]


def log_likelihood(obs, sim, spec: LikelihoodSpec) -> float:
    """Sum of log N(obs_t; sim_t, sigma_y^2) over the record, exact in log space."""
    obs = as_values(obs)
    sim = as_values(sim)
    if obs.size != sim.size:
        raise ValueError(f"length mismatch: {obs.size} vs {sim.size}")
    res = (obs - sim) / spec.sigma_y
    return float(-0.5 * res @ res - obs.size * (np.log(spec.sigma_y) + LOG_SQRT_2PI))


def bootstrap_day_counts(n_days: int, n_replicates: int, seed: int) -> np.ndarray:
    """Day-resampling counts (n_replicates, n_days); each row sums to n_days.

    Sharing one counts matrix across models keeps the bootstrap day indices
    identical for every model in a comparison.
    """
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n_days, size=(n_replicates, n_days))
    return np.stack([np.bincount(row, minlength=n_days) for row in idx]).astype(float)


@dataclass
class ModelPosteriorCell:
    """Posterior probability of one model in one comparison cell."""

    model: str
    prob_mean: float
    prob_std: float
    probs: np.ndarray = field(repr=False, default=None)
    degenerate: bool = False


def model_posterior(obs, sims_by_model: dict, spec: LikelihoodSpec,
                    n_bootstrap: int = 10, seed: int = 0,
                    counts: np.ndarray | None = None) -> list[ModelPosteriorCell]:
    """Bootstrap-averaged posterior model probabilities with a uniform prior
    over all parameter/forcing combinations.

    sims_by_model maps model name -> (n_combos, n_days) simulated flows. Per
    replicate, each model's marginal likelihood is a log-sum-exp over its
    combos; probabilities are normalized across models, so they sum to one by
    construction.
    """
    obs = as_values(obs)
    names = list(sims_by_model)
    if not names:
        raise ValueError("need at least one model")
    for name, sims in sims_by_model.items():
        if sims.ndim != 2 or sims.shape[1] != obs.size:
            raise ValueError(f"sims for {name!r} must be (combos, {obs.size})")
    if counts is None:
        counts = bootstrap_day_counts(obs.size, n_bootstrap, seed)
    n_rep = counts.shape[0]

    const = -(np.log(spec.sigma_y) + LOG_SQRT_2PI) * obs.size
    marginals = np.empty((len(names), n_rep))
    for i, name in enumerate(names):
        sims = sims_by_model[name]
        sq = (sims - obs[None, :]) ** 2            # (combos, days)
        ssr_boot = sq @ counts.T                   # (combos, replicates)
        loglik = -ssr_boot / (2.0 * spec.sigma_y ** 2) + const
        marginals[i] = logsumexp(loglik, axis=0) - np.log(sims.shape[0])

    cells = []
    degenerate = ~np.isfinite(marginals).any(axis=0)
    if degenerate.any():
        log.warning("all-(-inf) marginal likelihoods in %d bootstrap replicates",
                    int(degenerate.sum()))
    norm = logsumexp(marginals, axis=0)
    probs = np.exp(marginals - norm)
    probs[:, degenerate] = np.nan
    for i, name in enumerate(names):
        p = probs[i]
        valid = p[~np.isnan(p)]
        cells.append(ModelPosteriorCell(
            model=name,
            prob_mean=float(valid.mean()) if valid.size else float("nan"),
            prob_std=float(valid.std()) if valid.size else float("nan"),
            probs=p,
            degenerate=bool(degenerate.any()),
        ))
    return cells


@dataclass
class ModelProbabilityRow:
    """One row of the model-probability table: a (sigma_u, sigma_y, model) cell."""

    sigma_u: float
    sigma_y: float
    model: str
    prob_mean: float
    prob_std: float
    degenerate: bool = False


@dataclass
class ModelProbabilityTable:
    rows: list

    def ranking_flip_exists(self) -> bool:
        """True when at least one cell favors each model (probability > 1/2)."""
        favored = {}
        for row in self.rows:
            if np.isfinite(row.prob_mean) and row.prob_mean > 0.5:
                favored[row.model] = True
        return len(favored) >= 2

    def cell(self, sigma_u: float, sigma_y: float):
        return [r for r in self.rows
                if r.sigma_u == sigma_u and r.sigma_y == sigma_y]
