import io
import json
import math
from collections import Counter

import numpy as np
import pytest
from scipy.special import logsumexp

from dagmix import (
    CoalescenceError,
    Init,
    LatticeSpec,
    McmcConfig,
    NoiseParams,
    Nug,
    Observations,
    PriorSpec,
    build_lattice_nug,
    cftp_ising,
    exchange_update_beta_mrf,
    gibbs_update_eta,
    gibbs_update_z,
    log_dgm_prior,
    mh_update_beta,
    mh_update_dag,
    mrf_log_unnorm,
    rooted_dag,
    run_chain,
    suff_stat_T,
    tree_dag,
)
from dagmix.dags import CLASS_ACYCLIC_ORIENTATION, CLASS_ROOTED
from dagmix.experiments import (
    enumerate_orientation_mixture,
    exact_posterior_oracle,
)
from dagmix.samplers import ALL_MODELS, AMRF, MDGM_ST, _sample_truncated_beta
from conftest import all_fields, quiet_obs


@pytest.fixture
def lattice22():
    return build_lattice_nug(LatticeSpec(2, 2, "first"))


@pytest.fixture
def obs22():
    return Observations([[1, 1], [1, 0], [0, 0], []], n=4)


class TestGibbsZ:
    def test_likelihood_only_probability(self, lattice22):
        # beta=0, y_i=[1,1], eta=(0.2,0.8): P(z_i=1) = 0.64/0.68 = 16/17
        obs = Observations([[1, 1]] * 4, n=4)
        eta = NoiseParams(0.2, 0.8)
        dag = tree_dag(4, [(0, 1), (1, 3), (3, 2)], root=0)
        rng = np.random.default_rng(0)
        z = np.zeros(4, dtype=np.uint8)
        hits = np.zeros(4)
        sweeps = 20000
        for _ in range(sweeps):
            z = gibbs_update_z(z, lattice22, dag, 0.0, eta, obs, rng, MDGM_ST)
            hits += z
        assert np.abs(hits / sweeps - 16 / 17).max() < 0.01

    def test_no_data_flat(self, lattice22):
        obs = quiet_obs([[], [], [], []])
        eta = NoiseParams(0.2, 0.8)
        rng = np.random.default_rng(1)
        z = np.zeros(4, dtype=np.uint8)
        hits = np.zeros(4)
        sweeps = 20000
        for _ in range(sweeps):
            z = gibbs_update_z(z, lattice22, None, 0.0, eta, obs, rng, AMRF)
            hits += z
        assert np.abs(hits / sweeps - 0.5).max() < 0.015

    @pytest.mark.parametrize("model", ALL_MODELS)
    def test_long_run_marginals_match_oracle(self, model, lattice22, obs22):
        eta = NoiseParams(0.2, 0.8)
        beta = 0.4
        oracle = exact_posterior_oracle(obs22, lattice22, beta, eta, model)
        cfg = McmcConfig(
            iterations=40000, burn_in=4000, seed=7, model=model,
            init=Init(beta=beta, eta=(0.2, 0.8), z="random"),
            update_beta=False, update_eta=False,
        )
        samples = run_chain(obs22, lattice22, cfg)
        assert np.abs(samples.z_mean() - oracle.marginals).max() < 0.01


class TestMhDag:
    def test_flat_ratio_always_accepts(self, cycle4):
        rng = np.random.default_rng(2)
        dag = rooted_dag(cycle4, 0)
        for _ in range(100):
            dag, accepted = mh_update_dag([0, 1, 0, 1], cycle4, dag, 0.0, rng, CLASS_ROOTED)
            assert accepted

    def test_rooted_stationary_distribution(self, cycle4):
        z = [0, 0, 1, 1]
        beta = 0.8
        dags = [rooted_dag(cycle4, r) for r in range(4)]
        logw = np.array([log_dgm_prior(z, d, beta) for d in dags])
        target = np.exp(logw - logsumexp(logw))
        rng = np.random.default_rng(3)
        cache = dags
        dag = dags[0]
        counts = np.zeros(4)
        steps = 30000
        for _ in range(steps):
            dag, _ = mh_update_dag(z, cycle4, dag, beta, rng, CLASS_ROOTED, rooted_cache=cache)
            counts[dag.root] += 1
        tv = 0.5 * np.abs(counts / steps - target).sum()
        assert tv < 0.02

    def test_orientation_stationary_distribution(self, triangle):
        z = [0, 1, 1]
        beta = 0.9
        mixture = enumerate_orientation_mixture(triangle)
        keys = [frozenset(d.directed_edges()) for d, _ in mixture]
        logw = np.array([
            math.log(w) + log_dgm_prior(z, d, beta) for d, w in mixture
        ])
        target = np.exp(logw - logsumexp(logw))
        rng = np.random.default_rng(4)
        dag = mixture[0][0]
        counts = Counter()
        steps = 30000
        for _ in range(steps):
            dag, _ = mh_update_dag(z, triangle, dag, beta, rng, CLASS_ACYCLIC_ORIENTATION)
            counts[frozenset(dag.directed_edges())] += 1
        empirical = np.array([counts.get(k, 0) / steps for k in keys])
        tv = 0.5 * np.abs(empirical - target).sum()
        assert tv < 0.02


def _grid_cdf(grid, log_density):
    dens = np.exp(log_density - log_density.max())
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    return cdf / cdf[-1]


def _ks(samples, grid, cdf):
    xs = np.sort(samples)
    f = np.interp(xs, grid, cdf)
    n = len(xs)
    return float(np.maximum(
        np.abs(np.arange(1, n + 1) / n - f),
        np.abs(np.arange(0, n) / n - f),
    ).max())


class TestDirectSt:
    def test_exact_conditional_draw(self, cycle4=None):
        from dagmix import direct_update_st, is_compatible
        from dagmix.dags import CLASS_SPANNING_TREE
        from conftest import brute_force_spanning_trees, skeleton_key

        nug = Nug(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
        z = [0, 0, 1, 1]
        beta = 0.7
        weights = {
            tree: math.exp(beta * sum(1 for (a, b) in tree if z[a] == z[b]))
            for tree in brute_force_spanning_trees(4, nug.edges)
        }
        total = sum(weights.values())
        rng = np.random.default_rng(21)
        counts = Counter()
        draws = 3 * 10**4
        for _ in range(draws):
            dag = direct_update_st(z, nug, beta, rng)
            assert dag.class_tag == CLASS_SPANNING_TREE
            assert is_compatible(dag, nug)
            counts[skeleton_key(dag)] += 1
        tv = 0.5 * sum(abs(counts.get(k, 0) / draws - w / total) for k, w in weights.items())
        assert tv < 0.02


class TestMhBeta:
    def test_out_of_support_rejected(self, lattice22):
        priors = PriorSpec(beta_max=0.2)
        dag = tree_dag(4, [(0, 1), (1, 3), (3, 2)], root=0)
        rng = np.random.default_rng(5)
        beta = 0.19
        for _ in range(500):
            beta, _ = mh_update_beta([0, 1, 1, 0], lattice22, dag, beta, rng, MDGM_ST,
                                     sd=2.0, priors=priors)
            assert 0.0 <= beta <= 0.2

    def test_stationary_matches_grid_posterior(self, lattice22):
        z = [0, 0, 1, 1]
        dag = tree_dag(4, [(0, 1), (1, 3), (3, 2)], root=0)
        priors = PriorSpec(beta_max=1.0)
        grid = np.linspace(0.0, 1.0, 801)
        log_density = np.array([log_dgm_prior(z, dag, b) for b in grid])
        cdf = _grid_cdf(grid, log_density)
        rng = np.random.default_rng(6)
        beta = 0.5
        draws = np.empty(10**5)
        for k in range(len(draws)):
            beta, _ = mh_update_beta(z, lattice22, dag, beta, rng, MDGM_ST,
                                     sd=0.3, priors=priors)
            draws[k] = beta
        assert _ks(draws[5000:], grid, cdf) < 0.02

    def test_stationary_amrf_target(self, lattice22):
        from dagmix import pseudo_likelihood_log

        z = [0, 0, 1, 1]
        priors = PriorSpec(beta_max=1.0)
        grid = np.linspace(0.0, 1.0, 801)
        log_density = np.array([pseudo_likelihood_log(z, lattice22, b) for b in grid])
        cdf = _grid_cdf(grid, log_density)
        rng = np.random.default_rng(7)
        beta = 0.5
        draws = np.empty(6 * 10**4)
        for k in range(len(draws)):
            beta, _ = mh_update_beta(z, lattice22, None, beta, rng, AMRF,
                                     sd=0.3, priors=priors)
            draws[k] = beta
        assert _ks(draws[5000:], grid, cdf) < 0.02


class TestExchangeBeta:
    def test_log_ratio_identity(self, lattice22):
        # h-ratio collapses to (b* - b) * (T(z) - T(z*)) for any pair of fields
        rng = np.random.default_rng(8)
        for _ in range(20):
            z = rng.integers(0, 2, size=4)
            zs = rng.integers(0, 2, size=4)
            b0, b1 = rng.uniform(0, 1, size=2)
            direct = (
                mrf_log_unnorm(z, lattice22, b1) + mrf_log_unnorm(zs, lattice22, b0)
                - mrf_log_unnorm(z, lattice22, b0) - mrf_log_unnorm(zs, lattice22, b1)
            )
            collapsed = (b1 - b0) * (suff_stat_T(z, lattice22) - suff_stat_T(zs, lattice22))
            assert direct == pytest.approx(collapsed)

    def test_stationary_matches_enumerated_posterior(self):
        nug = build_lattice_nug(LatticeSpec(2, 3, "first"))
        z = [0, 0, 1, 1, 0, 1]
        t_z = suff_stat_T(z, nug)
        fields = all_fields(6)
        t_all = np.array([suff_stat_T(f, nug) for f in fields])
        priors = PriorSpec(beta_max=1.0)
        grid = np.linspace(0.0, 1.0, 801)
        log_density = np.array([b * t_z - logsumexp(b * t_all) for b in grid])
        cdf = _grid_cdf(grid, log_density)
        rng = np.random.default_rng(9)
        beta = 0.5
        draws = np.empty(5 * 10**4)
        for k in range(len(draws)):
            beta, _ = exchange_update_beta_mrf(z, nug, beta, rng, sd=0.3, priors=priors)
            draws[k] = beta
        assert _ks(draws[5000:], grid, cdf) < 0.02


class TestCftp:
    def test_beta_zero_is_fair_coin(self, lattice22):
        rng = np.random.default_rng(10)
        draws = np.array([cftp_ising(lattice22, 0.0, rng) for _ in range(6000)])
        assert np.abs(draws.mean(axis=0) - 0.5).max() < 0.03
        corr = np.corrcoef(draws.T)
        assert np.abs(corr - np.eye(4)).max() < 0.05

    def test_matches_enumeration_2x2(self, lattice22):
        beta = 0.5
        fields = all_fields(4)
        logw = np.array([beta * suff_stat_T(f, lattice22) for f in fields])
        target = np.exp(logw - logsumexp(logw))
        index = {f: k for k, f in enumerate(fields)}
        rng = np.random.default_rng(11)
        counts = np.zeros(len(fields))
        draws = 2 * 10**4
        for _ in range(draws):
            z = cftp_ising(lattice22, beta, rng)
            counts[index[tuple(int(v) for v in z)]] += 1
        tv = 0.5 * np.abs(counts / draws - target).sum()
        assert tv < 0.03

    def test_sandwich_monotonicity_validated(self):
        nug = build_lattice_nug(LatticeSpec(4, 4, "second"))
        rng = np.random.default_rng(12)
        for _ in range(20):
            cftp_ising(nug, 0.5, rng, validate=True)

    def test_mean_T_monotone_in_beta(self):
        nug = build_lattice_nug(LatticeSpec(8, 8, "first"))
        rng = np.random.default_rng(13)
        means = []
        for beta in (0.1, 0.2, 0.3):
            ts = [suff_stat_T(cftp_ising(nug, beta, rng), nug) for _ in range(300)]
            means.append(np.mean(ts))
        assert means[0] < means[1] < means[2]

    def test_step_cap_raises(self):
        nug = build_lattice_nug(LatticeSpec(8, 8, "second"))
        rng = np.random.default_rng(14)
        with pytest.raises(CoalescenceError, match="no coalescence"):
            cftp_ising(nug, 0.8, rng, step_cap=2000)

    def test_negative_beta_rejected(self, lattice22):
        with pytest.raises(ValueError):
            cftp_ising(lattice22, -0.1, np.random.default_rng(15))

    def test_deterministic_given_seed(self, lattice22):
        a = cftp_ising(lattice22, 0.4, np.random.default_rng(16))
        b = cftp_ising(lattice22, 0.4, np.random.default_rng(16))
        assert (a == b).all()


class TestGibbsEta:
    def test_ordering_always_preserved(self):
        rng = np.random.default_rng(17)
        obs = Observations([[1, 1, 0], [0, 0], [1]], n=3)
        priors = PriorSpec()
        eta = NoiseParams(0.3, 0.6)
        for _ in range(2000):
            eta, _ = gibbs_update_eta(obs, [1, 0, 1], eta, priors, rng)
            assert eta.eta1 > eta.eta0

    def test_no_data_uniform_triangle(self):
        # Stationary law is uniform on {0 < eta0 < eta1 < 1}, whose eta1
        # marginal has density 2*eta1, so P(eta1 > 0.5) = 1 - 0.25 = 0.75.
        grid = np.linspace(0.5, 1.0, 20001)
        oracle = np.trapezoid(2.0 * grid, grid)
        assert oracle == pytest.approx(0.75, abs=1e-6)
        rng = np.random.default_rng(18)
        obs = quiet_obs([[], []])
        priors = PriorSpec()
        eta = NoiseParams(0.25, 0.75)
        hits = 0
        updates = 10**5
        for _ in range(updates):
            eta, _ = gibbs_update_eta(obs, [0, 1], eta, priors, rng)
            hits += eta.eta1 > 0.5
        assert abs(hits / updates - oracle) < 0.01

    def test_overwhelming_data_concentrates(self):
        rng = np.random.default_rng(19)
        y1 = (rng.random(10**4) < 0.7).astype(int)
        y0 = (rng.random(10**4) < 0.3).astype(int)
        obs = Observations([list(y1), list(y0)], n=2)
        priors = PriorSpec()
        eta = NoiseParams(0.4, 0.6)
        draws = []
        for k in range(250):
            eta, _ = gibbs_update_eta(obs, [1, 0], eta, priors, rng)
            if k >= 50:
                draws.append((eta.eta0, eta.eta1))
        means = np.mean(draws, axis=0)
        assert abs(means[0] - y0.mean()) < 0.02
        assert abs(means[1] - y1.mean()) < 0.02

    def test_degenerate_truncation_stalls(self):
        rng = np.random.default_rng(20)
        value, stalled = _sample_truncated_beta(9000, 1000, 0.0, 0.01, 0.005, rng)
        assert stalled and value == 0.005


class TestRunChain:
    def test_single_record(self, lattice22, obs22):
        cfg = McmcConfig(iterations=11, burn_in=10, seed=1)
        samples = run_chain(obs22, lattice22, cfg)
        assert samples.record_count == 1

    def test_record_count(self, lattice22, obs22):
        cfg = McmcConfig(iterations=300, burn_in=120, seed=1)
        samples = run_chain(obs22, lattice22, cfg)
        assert samples.record_count == 180

    @pytest.mark.parametrize("model", ALL_MODELS)
    def test_deterministic_given_seed(self, model, lattice22, obs22):
        cfg = McmcConfig(iterations=120, burn_in=40, seed=99, model=model)
        a = run_chain(obs22, lattice22, cfg)
        b = run_chain(obs22, lattice22, cfg)
        assert (a.z == b.z).all()
        assert (a.beta == b.beta).all()
        assert (a.eta0 == b.eta0).all() and (a.eta1 == b.eta1).all()
        assert (a.T == b.T).all()
        assert a.acceptance == b.acceptance
        if model == MDGM_ST:
            assert a.tree_edges == b.tree_edges

    def test_eta_constraint_in_every_record(self, lattice22, obs22):
        cfg = McmcConfig(iterations=500, burn_in=0, seed=2)
        samples = run_chain(obs22, lattice22, cfg)
        assert (samples.eta1 > samples.eta0).all()

    def test_st_skeletons_are_spanning_trees(self, lattice22, obs22):
        cfg = McmcConfig(iterations=200, burn_in=100, seed=3, model=MDGM_ST)
        samples = run_chain(obs22, lattice22, cfg)
        edge_set = set(lattice22.edges)
        for edges in samples.tree_edges:
            assert len(edges) == 3
            undirected = {(min(c, p), max(c, p)) for c, p in edges}
            assert len(undirected) == 3
            assert undirected <= edge_set
            # connectivity of 4 vertices with 3 distinct edges and no repeats
            reach = {0}
            frontier = True
            while frontier:
                frontier = False
                for a, b in undirected:
                    if (a in reach) ^ (b in reach):
                        reach |= {a, b}
                        frontier = True
            assert reach == {0, 1, 2, 3}

    def test_data_driven_initialization(self, lattice22, obs22):
        cfg = McmcConfig(iterations=30, burn_in=10, seed=4)
        samples = run_chain(obs22, lattice22, cfg)
        assert samples.record_count == 20

    def test_size_mismatch_rejected(self, lattice22):
        obs = Observations([[1, 1]], n=1)
        with pytest.raises(ValueError, match="units"):
            run_chain(obs, lattice22, McmcConfig(iterations=10, burn_in=1))

    def test_disconnected_rejected(self, obs22):
        nug = Nug(4, [(0, 1), (2, 3)])
        with pytest.raises(ValueError, match="connected"):
            run_chain(obs22, nug, McmcConfig(iterations=10, burn_in=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            McmcConfig(iterations=10, burn_in=10)
        with pytest.raises(ValueError):
            McmcConfig(model="nope")
        with pytest.raises(ValueError):
            McmcConfig(beta_proposal_sd=0.0)

    def test_jsonl_stream(self, lattice22, obs22):
        cfg = McmcConfig(iterations=25, burn_in=20, seed=5, model=MDGM_ST)
        samples = run_chain(obs22, lattice22, cfg)
        buf = io.StringIO()
        samples.to_jsonl(buf)
        lines = buf.getvalue().strip().split("\n")
        assert len(lines) == 6  # 5 records + acceptance trailer
        first = json.loads(lines[0])
        assert set(first) == {"iter", "beta", "eta0", "eta1", "T", "z", "tree_edges"}
        assert first["iter"] == 20
        assert len(first["z"]) == 4 and set(first["z"]) <= {"0", "1"}
        trailer = json.loads(lines[-1])
        assert "acceptance" in trailer and "eta_stalls" in trailer
        assert set(trailer["acceptance"]) == {"dag", "beta"}
