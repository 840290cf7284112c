"""Probability model: Bernoulli ratings, DAG-factorized and MRF priors.

Latent fields z are 0/1 sequences over the areal units. All density
evaluations are done in log space; the pairwise interaction is
exp(beta * I(z_i = z_j)) throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dags import Dag
from .graph import Nug


class Observations:
    """Ragged per-unit binary rating vectors.

    Unit i holds m_i ratings in {0, 1}; units may have none. Only the
    per-unit counts (m_i, s_i = sum of ratings) enter the likelihood, so
    both are precomputed.
    """

    __slots__ = ("n", "y", "m", "s")

    def __init__(self, y_lists, n=None):
        if n is None:
            n = len(y_lists)
        if len(y_lists) != n:
            raise ValueError(f"expected {n} units, got {len(y_lists)}")
        ys = []
        for i, yi in enumerate(y_lists):
            arr = np.asarray(yi, dtype=np.int64)
            if arr.ndim != 1 and arr.size:
                raise ValueError(f"unit {i}: ratings must be a flat sequence")
            arr = arr.reshape(-1)
            if arr.size and not np.isin(arr, (0, 1)).all():
                raise ValueError(f"unit {i}: ratings must be 0 or 1")
            ys.append(arr)
        self.n = n
        self.y = ys
        self.m = np.array([len(a) for a in ys], dtype=np.int64)
        self.s = np.array([int(a.sum()) for a in ys], dtype=np.int64)
        if self.m.size and not (self.m > 1).any():
            warnings.warn(
                "no unit has more than one rating; noise parameters are "
                "not identifiable from these data",
                stacklevel=2,
            )

    @property
    def total(self):
        return int(self.m.sum())

    def __repr__(self):
        return f"Observations(n={self.n}, total={self.total})"


def load_observations(path, n, id_to_index=None) -> Observations:
    """Read a `unit_id,value` CSV; units absent from the file have m_i = 0.

    unit_id strings are mapped through id_to_index when given, otherwise
    they must be integer indices in [0, n).
    """
    y_lists = [[] for _ in range(n)]
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'unit_id,value'")
            uid, val = parts
            if id_to_index is not None:
                if uid not in id_to_index:
                    raise ValueError(f"line {lineno}: unknown unit id {uid!r}")
                idx = id_to_index[uid]
            else:
                try:
                    idx = int(uid)
                except ValueError:
                    raise ValueError(
                        f"line {lineno}: unit id {uid!r} is not an integer and no id map was given"
                    ) from None
            if not (0 <= idx < n):
                raise ValueError(f"line {lineno}: unit index {idx} out of range")
            if val not in ("0", "1"):
                raise ValueError(f"line {lineno}: rating must be 0 or 1, got {val!r}")
            y_lists[idx].append(int(val))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return Observations(y_lists, n=n)


@dataclass(frozen=True)
class NoiseParams:
    """Bernoulli error rates; eta1 > eta0 is the label-identifying constraint."""

    eta0: float
    eta1: float

    def __post_init__(self):
        if not (0.0 < self.eta0 < 1.0 and 0.0 < self.eta1 < 1.0):
            raise ValueError("noise probabilities must lie in (0, 1)")
        if not self.eta1 > self.eta0:
            raise ValueError("eta1 must exceed eta0")


@dataclass(frozen=True)
class PriorSpec:
    """Beta priors for the noise rates and a uniform [0, beta_max] prior for beta."""

    eta0_beta_params: tuple = (1.0, 1.0)
    eta1_beta_params: tuple = (1.0, 1.0)
    beta_max: float = 1.0

    def __post_init__(self):
        for a, b in (self.eta0_beta_params, self.eta1_beta_params):
            if a <= 0 or b <= 0:
                raise ValueError("Beta shape parameters must be positive")
        if self.beta_max <= 0:
            raise ValueError("beta_max must be positive")


def _log_two_exp(a, b):
    """log(e^a + e^b), stable."""
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def log_likelihood(obs: Observations, z, eta: NoiseParams) -> float:
    """Sum of Bernoulli log masses; units without ratings contribute zero."""
    zz = np.asarray(z, dtype=np.int64)
    if zz.shape != (obs.n,):
        raise ValueError(f"field length {zz.shape} does not match {obs.n} units")
    s, m = obs.s, obs.m
    ones = zz == 1
    out = 0.0
    s1, f1 = int(s[ones].sum()), int((m[ones] - s[ones]).sum())
    s0, f0 = int(s[~ones].sum()), int((m[~ones] - s[~ones]).sum())
    if s1 or f1:
        out += s1 * math.log(eta.eta1) + f1 * math.log1p(-eta.eta1)
    if s0 or f0:
        out += s0 * math.log(eta.eta0) + f0 * math.log1p(-eta.eta0)
    return out


def unit_log_likelihood(m_i, s_i, z_i, eta: NoiseParams) -> float:
    """Log likelihood contribution of one unit given its latent value."""
    if m_i == 0:
        return 0.0
    p = eta.eta1 if z_i == 1 else eta.eta0
    return s_i * math.log(p) + (m_i - s_i) * math.log1p(-p)


def parent_conditional(z_i, z_parents, beta: float) -> float:
    """Conditional probability of z_i given its parents' values.

    exp(beta * #matches) / [exp(beta * #parents at 0) + exp(beta * #parents
    at 1)]; an empty parent set gives 1/2 (both sums are empty).
    """
    n1 = 0
    total = 0
    for v in z_parents:
        n1 += v
        total += 1
    n0 = total - n1
    match = n1 if z_i == 1 else n0
    log_den = _log_two_exp(beta * n0, beta * n1)
    return math.exp(beta * match - log_den)


def log_dgm_prior(z, dag: Dag, beta: float) -> float:
    """Log of the DAG-factorized prior: sum of parent conditionals."""
    zz = list(z)
    if len(zz) != dag.n:
        raise ValueError(f"field length {len(zz)} does not match DAG size {dag.n}")
    out = 0.0
    for i in range(dag.n):
        pa = dag.parents[i]
        n1 = 0
        for j in pa:
            n1 += zz[j]
        n0 = len(pa) - n1
        match = n1 if zz[i] == 1 else n0
        out += beta * match - _log_two_exp(beta * n0, beta * n1)
    return out


def _dgm_conditional_logit(i, zz, dag: Dag, beta: float) -> float:
    """log p(z_i=1 | rest) - log p(z_i=0 | rest) under the DAG prior."""
    pa = dag.parents[i]
    ch = dag.children[i]
    n1 = 0
    for j in pa:
        n1 += zz[j]
    for k in ch:
        n1 += zz[k]
    deg = len(pa) + len(ch)
    logit = beta * (2 * n1 - deg)
    for k in ch:
        s1 = -zz[i]
        for j in dag.parents[k]:
            s1 += zz[j]
        pk = len(dag.parents[k])
        # child k's normalizer with z_i = 1 versus z_i = 0
        logit -= _log_two_exp(beta * (pk - s1 - 1), beta * (s1 + 1))
        logit += _log_two_exp(beta * (pk - s1), beta * s1)
    return logit


def dgm_full_conditional_prior(i, z, dag: Dag, beta: float) -> float:
    """P(z_i = 1 | z_-i) under the DAG prior.

    Numerator exp(beta * matches over parents and children of i); the
    normalizer is the product of the children's parent-sum denominators,
    which depend on z_i.
    """
    if not (0 <= i < dag.n):
        raise ValueError(f"vertex {i} out of range")
    zz = list(z)
    return 1.0 / (1.0 + math.exp(-_dgm_conditional_logit(i, zz, dag, beta)))


def dgm_full_conditional_posterior(i, z, dag: Dag, beta: float, eta: NoiseParams, y_i) -> float:
    """P(z_i = 1 | z_-i, y_i): prior full conditional times the unit likelihood."""
    if not (0 <= i < dag.n):
        raise ValueError(f"vertex {i} out of range")
    zz = list(z)
    yi = np.asarray(y_i, dtype=np.int64).reshape(-1)
    m_i, s_i = len(yi), int(yi.sum())
    logit = _dgm_conditional_logit(i, zz, dag, beta)
    logit += unit_log_likelihood(m_i, s_i, 1, eta) - unit_log_likelihood(m_i, s_i, 0, eta)
    return 1.0 / (1.0 + math.exp(-logit))


def suff_stat_T(z, nug: Nug) -> int:
    """Number of neighboring pairs with equal values."""
    zz = list(z)
    if len(zz) != nug.n:
        raise ValueError(f"field length {len(zz)} does not match {nug.n} units")
    t = 0
    for i, j in nug.edges:
        if zz[i] == zz[j]:
            t += 1
    return t


def mrf_log_unnorm(z, nug: Nug, beta: float) -> float:
    """Log of the unnormalized MRF density: beta * T(z)."""
    return beta * suff_stat_T(z, nug)


def mrf_full_conditional(i, z, nug: Nug, beta: float) -> float:
    """P(z_i = 1 | neighbors) for the pairwise-match MRF (Ising form).

    An isolated vertex has empty neighbor sums and probability 1/2.
    """
    if not (0 <= i < nug.n):
        raise ValueError(f"vertex {i} out of range")
    zz = list(z)
    n1 = 0
    for j in nug.neighbor_lists[i]:
        n1 += zz[j]
    deg = len(nug.neighbor_lists[i])
    return 1.0 / (1.0 + math.exp(-beta * (2 * n1 - deg)))


def pseudo_likelihood_log(z, nug: Nug, beta: float) -> float:
    """Log pseudo-likelihood: sum of log MRF full conditionals at z.

    Not a valid log density for beta > 0; summing its exponential over all
    fields does not give one.
    """
    zz = list(z)
    if len(zz) != nug.n:
        raise ValueError(f"field length {len(zz)} does not match {nug.n} units")
    out = 0.0
    for i in range(nug.n):
        n1 = 0
        for j in nug.neighbor_lists[i]:
            n1 += zz[j]
        deg = len(nug.neighbor_lists[i])
        n0 = deg - n1
        match = n1 if zz[i] == 1 else n0
        out += beta * match - _log_two_exp(beta * n0, beta * n1)
    return out


def eta_full_conditional_params(obs: Observations, z, priors: PriorSpec):
    """Updated Beta parameters for the two noise-rate full conditionals.

    Returns ((a1, b1), (a0, b0)) for eta1 and eta0. Truncation bounds are
    applied at sampling time: eta1 is restricted to (eta0, 1) and eta0 to
    (0, eta1).
    """
    zz = np.asarray(z, dtype=np.int64)
    if zz.shape != (obs.n,):
        raise ValueError(f"field length {zz.shape} does not match {obs.n} units")
    ones = zz == 1
    s1 = int(obs.s[ones].sum())
    f1 = int((obs.m[ones] - obs.s[ones]).sum())
    s0 = int(obs.s[~ones].sum())
    f0 = int((obs.m[~ones] - obs.s[~ones]).sum())
    a1, b1 = priors.eta1_beta_params
    a0, b0 = priors.eta0_beta_params
    return (a1 + s1, b1 + f1), (a0 + s0, b0 + f0)
