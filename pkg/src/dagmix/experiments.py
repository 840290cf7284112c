"""Data generation, metrics, enumeration oracles, and the study harnesses.

The brute-force oracle enumerates every latent field (and every mixture
component) on small graphs; sampler tests and acceptance checks are
validated against it, never the other way around.
"""

from __future__ import annotations

import itertools
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .dags import acyclic_orientation, rooted_dag
from .graph import IntractableError, LatticeSpec, Nug, build_lattice_nug
from .model import (
    NoiseParams,
    Observations,
    PriorSpec,
    log_dgm_prior,
    pseudo_likelihood_log,
    suff_stat_T,
)
from .samplers import (
    ALL_MODELS,
    AMRF,
    EXACT_MRF,
    MDGM_AO,
    MDGM_ROOTED,
    MDGM_ST,
    Init,
    McmcConfig,
    PosteriorSamples,
    cftp_ising,
    run_chain,
)

# Stable small codes for deriving per-model RNG streams.
MODEL_CODES = {name: k for k, name in enumerate(ALL_MODELS)}


@dataclass(frozen=True)
class ObsScheme:
    """Ratings per unit: a fixed count m, or Poisson(lam) counts."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "fixed":
            if int(self.value) != self.value or self.value < 1:
                raise ValueError("fixed scheme needs an integer count >= 1")
        elif self.kind == "poisson":
            if self.value <= 0:
                raise ValueError("poisson scheme needs a positive rate")
        else:
            raise ValueError(f"unknown observation scheme {self.kind!r}")


@dataclass(frozen=True)
class SimConfig:
    """One cell of the simulation grid.

    The noise pair is parameterized by a single eta < 0.5 with
    eta0 = eta and eta1 = 1 - eta. The mcmc field is a template whose
    model, seed, and init are overridden per run.
    """

    lattice: LatticeSpec
    beta_true: float
    eta: float
    obs: ObsScheme
    models: tuple
    mcmc: McmcConfig
    replications: int = 100
    seed: int = 0
    # Optional per-model prior override, e.g. a tighter beta support for the
    # exact MRF whose perfect sampler is only practical below criticality.
    priors_by_model: tuple = ()

    def __post_init__(self):
        if not (0.0 <= self.eta < 0.5):
            raise ValueError("eta must lie in [0, 0.5)")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        for m in self.models:
            if m not in ALL_MODELS:
                raise ValueError(f"unknown model {m!r}")

    @property
    def eta_pair(self):
        return (self.eta, 1.0 - self.eta)


@dataclass
class MetricsRecord:
    model: str
    posterior_mean_accuracy: float
    posterior_rmse_T: float
    elapsed: float


@dataclass(frozen=True)
class BootstrapCI:
    point: float
    lo: float
    hi: float
    level: float = 0.90
    resamples: int = 1000

    def __post_init__(self):
        if not (self.lo <= self.point <= self.hi):
            raise ValueError("CI bounds must bracket the point estimate")


def generate_dataset(config: SimConfig, rng, nug: Nug | None = None):
    """Draw (z_true, Observations): a perfect MRF field plus Bernoulli noise."""
    if nug is None:
        nug = build_lattice_nug(config.lattice)
    z_true = cftp_ising(nug, config.beta_true, rng, step_cap=config.mcmc.cftp_step_cap)
    if config.obs.kind == "fixed":
        m = np.full(nug.n, int(config.obs.value), dtype=np.int64)
    else:
        m = rng.poisson(config.obs.value, size=nug.n)
    eta0, eta1 = config.eta_pair
    p = np.where(z_true == 1, eta1, eta0)
    y_lists = [
        (rng.random(int(m[i])) < p[i]).astype(np.int64) if m[i] > 0 else []
        for i in range(nug.n)
    ]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return z_true, Observations(y_lists, n=nug.n)


def posterior_mean_accuracy(samples: PosteriorSamples, z_true) -> float:
    """Mean over draws of the per-unit agreement rate with the truth."""
    zt = np.asarray(z_true, dtype=np.uint8)
    if samples.z.shape[1] != zt.shape[0]:
        raise ValueError("field length mismatch")
    return float((samples.z == zt).mean())


def posterior_rmse_T(samples: PosteriorSamples, z_true, nug: Nug) -> float:
    """Root mean square error of the recorded matching-pair statistic."""
    t_true = suff_stat_T(z_true, nug)
    return float(np.sqrt(np.mean((samples.T - t_true) ** 2)))


def bootstrap_ci(per_replication_stats, rng, resamples=1000, level=0.90) -> BootstrapCI:
    """Resample-mean percentile interval (5th/95th at the default level)."""
    arr = np.asarray(per_replication_stats, dtype=np.float64)
    r = len(arr)
    if r < 2:
        raise ValueError("bootstrap needs at least two replications")
    means = arr[rng.integers(0, r, size=(resamples, r))].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    point = float(arr.mean())
    return BootstrapCI(point=point, lo=min(float(lo), point), hi=max(float(hi), point),
                       level=level, resamples=resamples)


def _chain_seed(root_seed, *key):
    state = np.random.SeedSequence(root_seed, spawn_key=tuple(key)).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


def _replicate(args):
    """One simulation replication: shared dataset, one chain per model."""
    config, setting_idx, rep_idx = args
    nug = build_lattice_nug(config.lattice)
    data_rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(setting_idx, rep_idx, 0))
    )
    try:
        z_true, obs = generate_dataset(config, data_rng, nug)
    except Exception as exc:  # a stalled dataset draw fails every model's cell
        msg = f"{type(exc).__name__}: {exc}"
        return setting_idx, rep_idx, {model: msg for model in config.models}
    eta0, eta1 = config.eta_pair
    prior_overrides = dict(config.priors_by_model)
    out = {}
    for model in config.models:
        seed = _chain_seed(config.seed, setting_idx, rep_idx, 1 + MODEL_CODES[model])
        priors = prior_overrides.get(model, config.mcmc.priors)
        init_beta = min(config.beta_true, priors.beta_max)
        chain_cfg = replace(
            config.mcmc,
            model=model,
            seed=seed,
            priors=priors,
            init=Init(beta=init_beta, eta=(eta0, eta1), z="random"),
        )
        t0 = time.perf_counter()
        try:
            samples = run_chain(obs, nug, chain_cfg)
        except Exception as exc:  # per-cell failures are recorded, not fatal
            out[model] = f"{type(exc).__name__}: {exc}"
            continue
        elapsed = time.perf_counter() - t0
        out[model] = MetricsRecord(
            model=model,
            posterior_mean_accuracy=posterior_mean_accuracy(samples, z_true),
            posterior_rmse_T=posterior_rmse_T(samples, z_true, nug),
            elapsed=elapsed,
        )
    return setting_idx, rep_idx, out


@dataclass
class StudyCell:
    setting_id: str
    model: str
    beta_true: float
    eta: float
    lam: float | None
    accuracy: BootstrapCI | None
    rmse_T: BootstrapCI | None
    elapsed_s: float
    replications: int
    failures: tuple = ()


def run_simulation_study(configs, threads=1) -> list:
    """Run every (setting, model) cell; returns one StudyCell per pair.

    Replications are independent chains with seeds derived from
    (setting index, replication index, model), so results do not depend on
    the worker count or scheduling order.
    """
    tasks = [
        (cfg, si, ri)
        for si, cfg in enumerate(configs)
        for ri in range(cfg.replications)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(_replicate, tasks, chunksize=1))
    else:
        raw = [_replicate(t) for t in tasks]
    by_setting = {}
    for setting_idx, rep_idx, metrics in raw:
        by_setting.setdefault(setting_idx, {})[rep_idx] = metrics

    cells = []
    for si, cfg in enumerate(configs):
        lam = cfg.obs.value if cfg.obs.kind == "poisson" else None
        for model in cfg.models:
            accs, rmses, times, failures = [], [], [], []
            for ri in range(cfg.replications):
                rec = by_setting[si][ri].get(model)
                if isinstance(rec, MetricsRecord):
                    accs.append(rec.posterior_mean_accuracy)
                    rmses.append(rec.posterior_rmse_T)
                    times.append(rec.elapsed)
                else:
                    failures.append((ri, rec))
            boot_rng = np.random.default_rng(
                np.random.SeedSequence(cfg.seed, spawn_key=(si, MODEL_CODES[model], 2))
            )
            if len(accs) == 0:
                acc_ci = rmse_ci = None
            elif len(accs) == 1:
                acc_ci = BootstrapCI(accs[0], accs[0], accs[0])
                rmse_ci = BootstrapCI(rmses[0], rmses[0], rmses[0])
            else:
                acc_ci = bootstrap_ci(accs, boot_rng)
                rmse_ci = bootstrap_ci(rmses, boot_rng)
            cells.append(StudyCell(
                setting_id=f"s{si}",
                model=model,
                beta_true=cfg.beta_true,
                eta=cfg.eta,
                lam=lam,
                accuracy=acc_ci,
                rmse_T=rmse_ci,
                elapsed_s=float(np.mean(times)) if times else float("nan"),
                replications=cfg.replications,
                failures=tuple(failures),
            ))
    return cells


STUDY_CSV_HEADER = ("setting_id,model,beta_true,eta,lambda,mean_accuracy,acc_lo,"
                    "acc_hi,mean_rmse_T,rmse_lo,rmse_hi,elapsed_s")


def study_to_csv(cells, fh, include_timing=True):
    """Study output CSV; elapsed_s is wall time and varies across runs."""
    fh.write(STUDY_CSV_HEADER + "\n")
    for c in cells:
        lam = repr(float(c.lam)) if c.lam is not None else ""
        acc = c.accuracy or BootstrapCI(float("nan"), float("nan"), float("nan"))
        rmse = c.rmse_T or BootstrapCI(float("nan"), float("nan"), float("nan"))
        elapsed = repr(round(c.elapsed_s, 3)) if include_timing else ""
        fh.write(",".join([
            c.setting_id, c.model, repr(float(c.beta_true)), repr(float(c.eta)), lam,
            repr(acc.point), repr(acc.lo), repr(acc.hi),
            repr(rmse.point), repr(rmse.lo), repr(rmse.hi),
            elapsed,
        ]) + "\n")


@dataclass
class CrossValRecord:
    iteration: int
    model: str
    mae: float


def predict_rating_probability(samples: PosteriorSamples, units) -> np.ndarray:
    """Posterior mean probability of a rating of one at the given units.

    Each draw contributes eta1 where its latent value is one and eta0
    elsewhere; the result is a convex combination of the recorded noise
    rates, so it always lies inside their posterior range.
    """
    units = np.asarray(units, dtype=np.intp)
    zcol = samples.z[:, units].astype(np.float64)
    return (samples.eta1[:, None] * zcol + samples.eta0[:, None] * (1.0 - zcol)).mean(axis=0)


def cross_validate(obs: Observations, nug: Nug, holdout_count: int, iterations: int,
                   mcmc: McmcConfig, models, seed: int = 0) -> list:
    """Holdout evaluation of predicted rating probabilities.

    Each iteration withholds every rating of holdout_count randomly chosen
    rated units (the same partition for every model), refits, and scores
    the posterior mean of eta_{z_i} against the unit's observed rating
    mean by absolute error.
    """
    rated = np.flatnonzero(obs.m > 0)
    if holdout_count > len(rated):
        raise ValueError(
            f"cannot hold out {holdout_count} units; only {len(rated)} have ratings"
        )
    if holdout_count < 1:
        raise ValueError("holdout_count must be positive")
    records = []
    for t in range(iterations):
        part_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t, 0)))
        held = np.sort(part_rng.choice(rated, size=holdout_count, replace=False))
        held_set = set(int(v) for v in held)
        y_train = [([] if i in held_set else obs.y[i]) for i in range(obs.n)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            train = Observations(y_train, n=obs.n)
        observed_mean = obs.s[held] / obs.m[held]
        for model in models:
            cfg = replace(mcmc, model=model,
                          seed=_chain_seed(seed, t, 1 + MODEL_CODES[model]))
            samples = run_chain(train, nug, cfg)
            pred = predict_rating_probability(samples, held)
            mae = float(np.abs(pred - observed_mean).mean())
            records.append(CrossValRecord(iteration=t, model=model, mae=mae))
    return records


def crossval_to_csv(records, fh):
    fh.write("iteration,model,mae\n")
    for r in records:
        fh.write(f"{r.iteration},{r.model},{repr(r.mae)}\n")


# ---------------------------------------------------------------------------
# Brute-force enumeration oracles (small instances only)
# ---------------------------------------------------------------------------


def all_fields(n) -> np.ndarray:
    """All 2^n binary fields as a (2^n, n) uint8 matrix."""
    if n > 20:
        raise IntractableError(f"cannot enumerate 2^{n} fields")
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.uint8)


def enumerate_spanning_trees(nug: Nug, cap=10**4):
    """All spanning trees as edge tuples; IntractableError beyond the cap."""
    m = len(nug.edges)
    k = nug.n - 1
    if k < 0:
        return []
    if m < k or math.comb(m, k) > 5 * 10**6:
        if m < k:
            return []
        raise IntractableError(f"C({m},{k}) edge subsets is too many to scan")
    trees = []
    for subset in itertools.combinations(nug.edges, k):
        parent = list(range(nug.n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        ok = True
        for a, b in subset:
            ra, rb = find(a), find(b)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            trees.append(subset)
            if len(trees) > cap:
                raise IntractableError(f"more than {cap} spanning trees")
    return trees


def enumerate_orientation_mixture(nug: Nug, max_n=7):
    """All acyclic orientations with the permutation-induced prior weights.

    Every vertex permutation maps to one orientation; the induced weight of
    an orientation is its number of generating permutations divided by n!.
    """
    if nug.n > max_n:
        raise IntractableError(f"n={nug.n} exceeds the permutation enumeration cap")
    weights = {}
    dags = {}
    for perm in itertools.permutations(range(nug.n)):
        dag = acyclic_orientation(nug, perm)
        key = frozenset(dag.directed_edges())
        weights[key] = weights.get(key, 0) + 1
        dags.setdefault(key, dag)
    total = math.factorial(nug.n)
    return [(dags[k], w / total) for k, w in sorted(weights.items(), key=lambda kv: sorted(kv[0]))]


def _field_logliks(obs: Observations, eta: NoiseParams, fields) -> np.ndarray:
    s, m = obs.s, obs.m
    ll1 = s * math.log(eta.eta1) + (m - s) * np.log1p(-eta.eta1)
    ll0 = s * math.log(eta.eta0) + (m - s) * np.log1p(-eta.eta0)
    return fields @ (ll1 - ll0) + ll0.sum()


def _field_suffstats(nug: Nug, fields) -> np.ndarray:
    t = np.zeros(len(fields), dtype=np.int64)
    for i, j in nug.edges:
        t += fields[:, i] == fields[:, j]
    return t


def _st_mixture_logprior(nug: Nug, fields, beta, max_trees) -> np.ndarray:
    trees = enumerate_spanning_trees(nug, cap=max_trees)
    matches = np.zeros((len(trees), len(fields)), dtype=np.int64)
    for k, tree in enumerate(trees):
        for i, j in tree:
            matches[k] += fields[:, i] == fields[:, j]
    log_p = (-math.log(2.0) + beta * matches
             - (nug.n - 1) * np.log1p(math.exp(beta)))
    return logsumexp(log_p, axis=0) - math.log(len(trees))


def _dag_mixture_logprior(components, fields, beta) -> np.ndarray:
    logs = np.empty((len(components), len(fields)))
    for k, (dag, w) in enumerate(components):
        logs[k] = [log_dgm_prior(z, dag, beta) + math.log(w) for z in fields]
    return logsumexp(logs, axis=0)


@dataclass
class OracleResult:
    marginals: np.ndarray
    log_partition: float | None
    n_components: int | None


def exact_posterior_oracle(obs: Observations, nug: Nug, beta, eta: NoiseParams,
                           model, max_n=12, max_trees=10**4) -> OracleResult:
    """Exact fixed-beta posterior marginals P(z_i = 1 | y) by full enumeration.

    The exact MRF and amrf share the same fixed-beta z-posterior (the
    pseudo-likelihood approximation only alters the beta update). Mixture
    models enumerate every component: all spanning trees, all n rooted
    DAGs, or all orientations with permutation-induced weights.
    """
    if nug.n > max_n:
        raise IntractableError(f"n={nug.n} exceeds the oracle cap {max_n}")
    fields = all_fields(nug.n)
    loglik = _field_logliks(obs, eta, fields)
    log_partition = None
    n_components = None
    if model in (EXACT_MRF, AMRF):
        t = _field_suffstats(nug, fields)
        log_partition = float(logsumexp(beta * t))
        log_prior = beta * t - log_partition
    elif model == MDGM_ST:
        log_prior = _st_mixture_logprior(nug, fields, beta, max_trees)
        n_components = len(enumerate_spanning_trees(nug, cap=max_trees))
    elif model == MDGM_ROOTED:
        comps = [(rooted_dag(nug, r), 1.0 / nug.n) for r in range(nug.n)]
        log_prior = _dag_mixture_logprior(comps, fields, beta)
        n_components = nug.n
    elif model == MDGM_AO:
        comps = enumerate_orientation_mixture(nug)
        log_prior = _dag_mixture_logprior(comps, fields, beta)
        n_components = len(comps)
    else:
        raise ValueError(f"unknown model {model!r}")
    log_w = loglik + log_prior
    log_total = logsumexp(log_w)
    marginals = np.array([
        logsumexp(log_w[fields[:, i] == 1]) - log_total for i in range(nug.n)
    ])
    return OracleResult(
        marginals=np.exp(marginals),
        log_partition=log_partition,
        n_components=n_components,
    )


def pseudo_prior_mass(nug: Nug, beta, max_n=16) -> float:
    """Sum over all fields of the exponentiated pseudo-likelihood.

    Equals 1 at beta = 0 and deviates from 1 for beta > 0; the
    pseudo-likelihood is not a probability distribution.
    """
    if nug.n > max_n:
        raise IntractableError(f"n={nug.n} exceeds the enumeration cap {max_n}")
    fields = all_fields(nug.n)
    return float(sum(math.exp(pseudo_likelihood_log(z, nug, beta)) for z in fields))


@dataclass
class BetaOracle:
    grid: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray
    z_marginals: np.ndarray

    def cdf_at(self, x):
        return np.interp(x, self.grid, self.cdf)


def joint_beta_oracle(obs: Observations, nug: Nug, eta: NoiseParams, model,
                      priors: PriorSpec, grid_size=801, max_n=10,
                      max_trees=10**4) -> BetaOracle:
    """Quadrature oracle for chains with free beta and z at fixed eta.

    Returns the exact beta-posterior density/CDF on a uniform grid over the
    prior support and the beta-integrated latent marginals. Supports the
    exact MRF and the spanning-tree mixture (their priors reduce to scalar
    field statistics; trapezoid quadrature over the grid).
    """
    if nug.n > max_n:
        raise IntractableError(f"n={nug.n} exceeds the oracle cap {max_n}")
    fields = all_fields(nug.n)
    loglik = _field_logliks(obs, eta, fields)
    grid = np.linspace(0.0, priors.beta_max, grid_size)
    log_total = np.empty(grid_size)
    log_marg = np.empty((grid_size, nug.n))
    ones_masks = [fields[:, i] == 1 for i in range(nug.n)]
    if model == EXACT_MRF:
        t = _field_suffstats(nug, fields)
        for g, b in enumerate(grid):
            log_prior = b * t - logsumexp(b * t)
            w = loglik + log_prior
            log_total[g] = logsumexp(w)
            for i in range(nug.n):
                log_marg[g, i] = logsumexp(w[ones_masks[i]])
    elif model == MDGM_ST:
        trees = enumerate_spanning_trees(nug, cap=max_trees)
        matches = np.zeros((len(trees), len(fields)), dtype=np.int64)
        for k, tree in enumerate(trees):
            for i, j in tree:
                matches[k] += fields[:, i] == fields[:, j]
        for g, b in enumerate(grid):
            log_p = (-math.log(2.0) + b * matches
                     - (nug.n - 1) * np.log1p(math.exp(b)))
            log_prior = logsumexp(log_p, axis=0) - math.log(len(trees))
            w = loglik + log_prior
            log_total[g] = logsumexp(w)
            for i in range(nug.n):
                log_marg[g, i] = logsumexp(w[ones_masks[i]])
    else:
        raise ValueError(f"beta oracle supports {EXACT_MRF!r} and {MDGM_ST!r}, not {model!r}")
    # Uniform beta prior: posterior density over beta is total mass, normalized.
    scale = log_total.max()
    density = np.exp(log_total - scale)
    norm = np.trapezoid(density, grid)
    pdf = density / norm
    cdf = np.concatenate([[0.0], np.cumsum(
        0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid)
    )])
    cdf = np.clip(cdf / cdf[-1], 0.0, 1.0)
    marg_num = np.trapezoid(np.exp(log_marg - scale), grid, axis=0)
    z_marginals = marg_num / norm
    return BetaOracle(grid=grid, pdf=pdf, cdf=cdf, z_marginals=z_marginals)


def total_variation(p, q) -> float:
    """TV distance between two probability vectors over the same support."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return 0.5 * float(np.abs(p - q).sum())


def ks_distance(samples, oracle: BetaOracle) -> float:
    """Kolmogorov-Smirnov distance between draws and the oracle beta CDF."""
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(xs)
    f = oracle.cdf_at(xs)
    upper = np.abs(np.arange(1, n + 1) / n - f)
    lower = np.abs(np.arange(0, n) / n - f)
    return float(np.maximum(upper, lower).max())
