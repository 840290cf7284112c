"""MCMC kernels and the chain driver for the five latent-field models.

Models: three DAG-mixture variants (spanning tree, rooted, acyclic
orientation), the pseudo-likelihood approximation (amrf), and the exact
MRF with exchange-algorithm beta updates backed by perfect sampling.

Per iteration: (1) graph update, (2) systematic z sweep, (3) beta update,
(4) noise update. Chains are deterministic functions of their seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .dags import (
    CLASS_ACYCLIC_ORIENTATION,
    CLASS_ROOTED,
    Dag,
    acyclic_orientation,
    posterior_spanning_tree,
    rooted_dag,
    uniform_spanning_tree,
)
from .graph import Nug, is_connected
from .model import (
    NoiseParams,
    Observations,
    PriorSpec,
    eta_full_conditional_params,
    log_dgm_prior,
    pseudo_likelihood_log,
    suff_stat_T,
)

MDGM_ST = "mdgm-st"
MDGM_ROOTED = "mdgm-rooted"
MDGM_AO = "mdgm-ao"
AMRF = "amrf"
EXACT_MRF = "exact-mrf"

ALL_MODELS = (MDGM_ST, MDGM_ROOTED, MDGM_AO, AMRF, EXACT_MRF)
MDGM_MODELS = (MDGM_ST, MDGM_ROOTED, MDGM_AO)


class CoalescenceError(RuntimeError):
    """Perfect sampling hit the update cap before the chains coalesced."""


@dataclass
class Init:
    """Optional starting values; unset fields fall back to data-driven defaults.

    z may be an explicit 0/1 array or the string "random" for an
    independent fair-coin field.
    """

    beta: float | None = None
    eta: tuple | None = None
    z: object = None


@dataclass
class McmcConfig:
    iterations: int = 2000
    burn_in: int = 1000
    seed: int = 0
    model: str = MDGM_ST
    beta_proposal_sd: float = 0.05
    priors: PriorSpec = field(default_factory=PriorSpec)
    init: Init = field(default_factory=Init)
    cftp_step_cap: int = 2**20
    update_beta: bool = True
    update_eta: bool = True

    def __post_init__(self):
        if self.model not in ALL_MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {ALL_MODELS}")
        if not (0 <= self.burn_in < self.iterations):
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.beta_proposal_sd <= 0:
            raise ValueError("beta_proposal_sd must be positive")
        if self.cftp_step_cap <= 0:
            raise ValueError("cftp_step_cap must be positive")


@dataclass
class ChainState:
    z: np.ndarray
    dag: Dag | None
    beta: float
    eta: NoiseParams
    iteration: int = 0


class PosteriorSamples:
    """Post-burn-in draws plus acceptance bookkeeping for one chain."""

    def __init__(self, model, burn_in, iterations, beta, eta0, eta1, T, z,
                 tree_edges=None, acceptance=None, eta_stalls=0):
        self.model = model
        self.burn_in = burn_in
        self.iterations = iterations
        self.beta = np.asarray(beta, dtype=np.float64)
        self.eta0 = np.asarray(eta0, dtype=np.float64)
        self.eta1 = np.asarray(eta1, dtype=np.float64)
        self.T = np.asarray(T, dtype=np.int64)
        self.z = np.asarray(z, dtype=np.uint8)
        self.tree_edges = tree_edges
        self.acceptance = acceptance or {}
        self.eta_stalls = eta_stalls

    @property
    def record_count(self):
        return len(self.beta)

    def z_mean(self):
        """Posterior mean of the latent field per unit."""
        return self.z.mean(axis=0)

    def acceptance_rates(self):
        return {
            name: (acc / prop if prop else float("nan"))
            for name, (acc, prop) in self.acceptance.items()
        }

    def to_jsonl(self, fh):
        """Newline-delimited JSON records, then a trailing acceptance object."""
        for b in range(self.record_count):
            rec = {
                "iter": self.burn_in + b,
                "beta": float(self.beta[b]),
                "eta0": float(self.eta0[b]),
                "eta1": float(self.eta1[b]),
                "T": int(self.T[b]),
                "z": "".join("1" if v else "0" for v in self.z[b]),
            }
            if self.tree_edges is not None:
                rec["tree_edges"] = [[int(c), int(p)] for c, p in self.tree_edges[b]]
            fh.write(json.dumps(rec) + "\n")
        fh.write(json.dumps({
            "acceptance": {k: [int(a), int(p)] for k, (a, p) in self.acceptance.items()},
            "eta_stalls": int(self.eta_stalls),
        }) + "\n")


def _unit_loglik_vectors(obs: Observations, eta: NoiseParams):
    """Per-unit log likelihood under z_i = 1 and z_i = 0."""
    s, m = obs.s, obs.m
    ll1 = s * math.log(eta.eta1) + (m - s) * math.log1p(-eta.eta1)
    ll0 = s * math.log(eta.eta0) + (m - s) * math.log1p(-eta.eta0)
    return ll1, ll0


def _log_two_exp(a, b):
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def gibbs_update_z(z, nug: Nug, dag, beta, eta: NoiseParams, obs: Observations, rng, model):
    """One systematic sweep (ascending index) over the latent field.

    DAG-mixture models draw each site from its DAG-posterior full
    conditional; amrf and the exact MRF both use the MRF full conditional
    times the unit likelihood.
    """
    zz = [int(v) for v in z]
    n = nug.n
    ll1, ll0 = _unit_loglik_vectors(obs, eta)
    u = rng.random(n)
    if model in MDGM_MODELS:
        parents = dag.parents
        children = dag.children
        for i in range(n):
            pa = parents[i]
            ch = children[i]
            n1 = 0
            for j in pa:
                n1 += zz[j]
            for k in ch:
                n1 += zz[k]
            logit = beta * (2 * n1 - len(pa) - len(ch)) + ll1[i] - ll0[i]
            for k in ch:
                s1 = -zz[i]
                for j in parents[k]:
                    s1 += zz[j]
                pk = len(parents[k])
                logit -= _log_two_exp(beta * (pk - s1 - 1), beta * (s1 + 1))
                logit += _log_two_exp(beta * (pk - s1), beta * s1)
            zz[i] = 1 if u[i] < 1.0 / (1.0 + math.exp(-logit)) else 0
    else:
        nbrs = nug.neighbor_lists
        for i in range(n):
            nb = nbrs[i]
            n1 = 0
            for j in nb:
                n1 += zz[j]
            logit = beta * (2 * n1 - len(nb)) + ll1[i] - ll0[i]
            zz[i] = 1 if u[i] < 1.0 / (1.0 + math.exp(-logit)) else 0
    return np.array(zz, dtype=np.uint8)


def mh_update_dag(z, nug: Nug, dag: Dag, beta, rng, class_tag, rooted_cache=None):
    """Independence MH move on the DAG, proposing from the class prior.

    Proposal and prior cancel (uniform root for the rooted class; uniform
    permutation for orientations), leaving the prior-likelihood ratio
    p(z|D*, beta) / p(z|D, beta).
    """
    if class_tag == CLASS_ROOTED:
        root = int(rng.integers(nug.n))
        proposal = rooted_cache[root] if rooted_cache is not None else rooted_dag(nug, root)
    elif class_tag == CLASS_ACYCLIC_ORIENTATION:
        proposal = acyclic_orientation(nug, rng.permutation(nug.n))
    else:
        raise ValueError(f"MH DAG update is for rooted/orientation classes, not {class_tag!r}")
    zz = list(z)
    log_ratio = log_dgm_prior(zz, proposal, beta) - log_dgm_prior(zz, dag, beta)
    if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
        return proposal, True
    return dag, False


def direct_update_st(z, nug: Nug, beta, rng) -> Dag:
    """Exact conditional draw of the spanning tree given (z, beta)."""
    return posterior_spanning_tree(nug, z, beta, rng)


def _log_f(z, nug, dag, beta, model):
    """Latent-prior term of the beta MH ratio (DAG prior or pseudo-likelihood)."""
    if model in MDGM_MODELS:
        return log_dgm_prior(z, dag, beta)
    if model == AMRF:
        return pseudo_likelihood_log(z, nug, beta)
    raise ValueError(f"no random-walk beta update for model {model!r}")


def mh_update_beta(z, nug: Nug, dag, beta, rng, model, sd, priors: PriorSpec):
    """Gaussian random-walk move on beta; proposals off the prior support reject."""
    proposal = rng.normal(beta, sd)
    if not (0.0 <= proposal <= priors.beta_max):
        return beta, False
    zz = list(z)
    log_ratio = _log_f(zz, nug, dag, proposal, model) - _log_f(zz, nug, dag, beta, model)
    if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
        return proposal, True
    return beta, False


def exchange_update_beta_mrf(z, nug: Nug, beta, rng, sd, priors: PriorSpec,
                             step_cap=2**20):
    """Exchange-algorithm beta move for the exact MRF.

    Draws an auxiliary perfect sample z* at the proposed beta; the
    intractable normalizers cancel, leaving the log ratio
    (beta* - beta) * (T(z) - T(z*)).
    """
    proposal = rng.normal(beta, sd)
    if not (0.0 <= proposal <= priors.beta_max):
        return beta, False
    z_aux = cftp_ising(nug, proposal, rng, step_cap=step_cap)
    zz = list(z)
    log_ratio = (proposal - beta) * (suff_stat_T(zz, nug) - suff_stat_T(z_aux, nug))
    if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
        return proposal, True
    return beta, False


def cftp_ising(nug: Nug, beta, rng, step_cap=2**20, validate=False):
    """Perfect draw from p(z) ~ exp(beta * T(z)) by coupling from the past.

    Monotone sandwich of the all-zeros and all-ones chains under shared
    single-site heat-bath updates. One uniform per (time step, vertex) is
    cached and reused as the start time doubles backwards. Within a time
    step, vertices are updated by independent color class (equivalent to a
    fixed systematic site order, but vectorizable). Raises
    CoalescenceError when step_cap site updates pass without coalescence.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative (monotone regime)")
    n = nug.n
    if n == 0:
        return np.zeros(0, dtype=np.uint8)
    padded = nug.padded_neighbors()
    uniforms = {}
    horizon = 1
    updates = 0
    while True:
        lo = np.zeros(n + 1)
        hi = np.ones(n + 1)
        hi[n] = 0.0  # padding slot contributes zero to neighbor sums
        for t in range(-horizon, 0):
            u = uniforms.get(t)
            if u is None:
                u = rng.random(n)
                uniforms[t] = u
            for cls, mat, deg in padded:
                for state in (lo, hi):
                    n1 = state[mat].sum(axis=1)
                    p1 = 1.0 / (1.0 + np.exp(beta * (deg - 2.0 * n1)))
                    state[cls] = u[cls] < p1
                updates += 2 * len(cls)
                if validate and not (lo[:n] <= hi[:n]).all():
                    raise AssertionError("sandwich ordering violated")
            if updates > step_cap:
                raise CoalescenceError(
                    f"no coalescence within {step_cap} site updates "
                    f"(beta={beta:.4g}, n={n}); near-critical beta mixes too slowly"
                )
        if np.array_equal(lo[:n], hi[:n]):
            return lo[:n].astype(np.uint8)
        horizon *= 2


def _sample_truncated_beta(a, b, lo, hi, current, rng):
    """Beta(a, b) restricted to (lo, hi) by inverse CDF; rejection fallback.

    Returns (value, stalled). When the truncation mass underflows and
    rejection also fails, the current value is kept and stalled is True.
    """
    lo = max(lo, 0.0)
    hi = min(hi, 1.0)
    f_lo = float(special.betainc(a, b, lo))
    f_hi = float(special.betainc(a, b, hi))
    mass = f_hi - f_lo
    if mass > 1e-12:
        x = float(special.betaincinv(a, b, f_lo + rng.random() * mass))
        if lo < x < hi:
            return x, False
    for _ in range(1000):
        x = float(rng.beta(a, b))
        if lo < x < hi:
            return x, False
    return current, True


def gibbs_update_eta(obs: Observations, z, eta: NoiseParams, priors: PriorSpec, rng):
    """Draw eta1 then eta0 from their truncated Beta full conditionals.

    The eta1 > eta0 ordering is preserved by construction. Returns the new
    NoiseParams and the number of stalled components (0-2).
    """
    (a1, b1), (a0, b0) = eta_full_conditional_params(obs, z, priors)
    stalls = 0
    eta1, s = _sample_truncated_beta(a1, b1, eta.eta0, 1.0, eta.eta1, rng)
    stalls += s
    eta0, s = _sample_truncated_beta(a0, b0, 0.0, eta1, eta.eta0, rng)
    stalls += s
    return NoiseParams(eta0=eta0, eta1=eta1), stalls


def _initial_state(obs: Observations, nug: Nug, config: McmcConfig, rng) -> ChainState:
    init = config.init
    if init.eta is not None:
        eta = NoiseParams(float(init.eta[0]), float(init.eta[1]))
    else:
        eta = NoiseParams(0.25, 0.75)
    beta = float(init.beta) if init.beta is not None else config.priors.beta_max / 2.0
    if not (0.0 <= beta <= config.priors.beta_max):
        raise ValueError("initial beta outside the prior support")
    if init.z is None:
        # Data-driven: units above the grand mean rating start at one.
        if obs.total > 0:
            grand = obs.s.sum() / obs.total
            with np.errstate(invalid="ignore", divide="ignore"):
                unit_mean = np.where(obs.m > 0, obs.s / np.maximum(obs.m, 1), 0.0)
            z = ((obs.m > 0) & (unit_mean > grand)).astype(np.uint8)
        else:
            z = np.zeros(nug.n, dtype=np.uint8)
    elif isinstance(init.z, str) and init.z == "random":
        z = rng.integers(0, 2, size=nug.n).astype(np.uint8)
    else:
        z = np.asarray(init.z, dtype=np.uint8)
        if z.shape != (nug.n,):
            raise ValueError("initial z has the wrong length")
    if config.model == MDGM_ST:
        dag = uniform_spanning_tree(nug, rng)
    elif config.model == MDGM_ROOTED:
        dag = rooted_dag(nug, int(rng.integers(nug.n)))
    elif config.model == MDGM_AO:
        dag = acyclic_orientation(nug, rng.permutation(nug.n))
    else:
        dag = None
    return ChainState(z=z, dag=dag, beta=beta, eta=eta, iteration=0)


def run_chain(obs: Observations, nug: Nug, config: McmcConfig) -> PosteriorSamples:
    """Run one MCMC chain and collect the post-burn-in draws.

    The per-iteration schedule is: graph update (mixture models only),
    systematic z sweep, beta update (random walk, or exchange for the exact
    MRF), then the truncated-Beta noise update. Deterministic given
    config.seed.
    """
    if obs.n != nug.n:
        raise ValueError(f"data cover {obs.n} units but the graph has {nug.n}")
    if not is_connected(nug):
        raise ValueError("the NUG must be connected")
    rng = np.random.default_rng(config.seed)
    state = _initial_state(obs, nug, config, rng)
    model = config.model
    rooted_cache = None
    if model == MDGM_ROOTED:
        rooted_cache = [rooted_dag(nug, r) for r in range(nug.n)]

    keep = config.iterations - config.burn_in
    rec_beta = np.empty(keep)
    rec_eta0 = np.empty(keep)
    rec_eta1 = np.empty(keep)
    rec_T = np.empty(keep, dtype=np.int64)
    rec_z = np.empty((keep, nug.n), dtype=np.uint8)
    rec_trees = [] if model == MDGM_ST else None
    accept = {"beta": [0, 0]}
    if model in (MDGM_ROOTED, MDGM_AO):
        accept["dag"] = [0, 0]
    elif model == MDGM_ST:
        accept["dag"] = [0, 0]  # exact conditional draws: always accepted
    eta_stalls = 0

    for b in range(config.iterations):
        if model == MDGM_ST:
            state.dag = direct_update_st(state.z, nug, state.beta, rng)
            accept["dag"][0] += 1
            accept["dag"][1] += 1
        elif model in (MDGM_ROOTED, MDGM_AO):
            class_tag = CLASS_ROOTED if model == MDGM_ROOTED else CLASS_ACYCLIC_ORIENTATION
            state.dag, ok = mh_update_dag(
                state.z, nug, state.dag, state.beta, rng, class_tag, rooted_cache
            )
            accept["dag"][0] += ok
            accept["dag"][1] += 1

        state.z = gibbs_update_z(
            state.z, nug, state.dag, state.beta, state.eta, obs, rng, model
        )

        if config.update_beta:
            if model == EXACT_MRF:
                state.beta, ok = exchange_update_beta_mrf(
                    state.z, nug, state.beta, rng,
                    config.beta_proposal_sd, config.priors, config.cftp_step_cap,
                )
            else:
                state.beta, ok = mh_update_beta(
                    state.z, nug, state.dag, state.beta, rng,
                    model, config.beta_proposal_sd, config.priors,
                )
            accept["beta"][0] += ok
            accept["beta"][1] += 1

        if config.update_eta:
            state.eta, stalls = gibbs_update_eta(obs, state.z, state.eta, config.priors, rng)
            eta_stalls += stalls

        state.iteration = b + 1
        if b >= config.burn_in:
            k = b - config.burn_in
            rec_beta[k] = state.beta
            rec_eta0[k] = state.eta.eta0
            rec_eta1[k] = state.eta.eta1
            rec_T[k] = suff_stat_T(state.z, nug)
            rec_z[k] = state.z
            if rec_trees is not None:
                rec_trees.append(tuple(state.dag.directed_edges()))

    return PosteriorSamples(
        model=model,
        burn_in=config.burn_in,
        iterations=config.iterations,
        beta=rec_beta,
        eta0=rec_eta0,
        eta1=rec_eta1,
        T=rec_T,
        z=rec_z,
        tree_edges=rec_trees,
        acceptance={k: tuple(v) for k, v in accept.items()},
        eta_stalls=eta_stalls,
    )
