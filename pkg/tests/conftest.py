"""Shared fixtures and brute-force oracles.

The helpers here recompute everything from first principles (edge-subset
scans, orientation enumeration, exhaustive field sums) so the package code
is checked against independent implementations.
"""

import itertools
import warnings

import pytest

from dagmix import Nug, Observations, build_lattice_nug, LatticeSpec


def quiet_obs(y_lists, n=None):
    """Observations built without the identifiability warning (degenerate
    data is intentional in several tests)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return Observations(y_lists, n=n)


# One line per acceptance criterion, echoed after the run so the summary
# survives pytest's output capture.
ACCEPTANCE_LINES = []


def record_acceptance(line):
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def brute_force_spanning_trees(n, edges):
    """All spanning trees by scanning (n-1)-edge subsets; returns frozensets."""
    trees = []
    for subset in itertools.combinations(edges, n - 1):
        parent = list(range(n))

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
            trees.append(frozenset(subset))
    return trees


def brute_force_ao_count(n, edges):
    """Count acyclic orientations by trying all 2^m orientations."""
    count = 0
    for bits in itertools.product((0, 1), repeat=len(edges)):
        children = [[] for _ in range(n)]
        indeg = [0] * n
        for flip, (a, b) in zip(bits, edges):
            u, v = (a, b) if flip == 0 else (b, a)
            children[u].append(v)
            indeg[v] += 1
        stack = [v for v in range(n) if indeg[v] == 0]
        seen = 0
        while stack:
            u = stack.pop()
            seen += 1
            for v in children[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    stack.append(v)
        if seen == n:
            count += 1
    return count


def all_fields(n):
    return list(itertools.product((0, 1), repeat=n))


def random_connected_nug(rng, n, extra_edges=2):
    """Random spanning tree plus a few extra edges; always connected."""
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        j = order[int(rng.integers(k))]
        i = order[k]
        edges.add((min(i, j), max(i, j)))
    possible = [
        (i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in edges
    ]
    if possible and extra_edges:
        take = min(extra_edges, len(possible))
        for idx in rng.choice(len(possible), size=take, replace=False):
            edges.add(possible[int(idx)])
    return Nug(n, sorted(edges))


def skeleton_key(dag):
    """Canonical undirected edge set of a DAG, for distribution tallies."""
    return frozenset(
        (c, p) if c < p else (p, c) for c, p in dag.directed_edges()
    )


@pytest.fixture
def cycle4():
    return Nug(4, [(0, 1), (1, 2), (2, 3), (0, 3)])


@pytest.fixture
def triangle():
    return Nug(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def path3():
    return Nug(3, [(0, 1), (1, 2)])


@pytest.fixture
def lattice33_first():
    return build_lattice_nug(LatticeSpec(3, 3, "first"))


@pytest.fixture
def lattice33_second():
    return build_lattice_nug(LatticeSpec(3, 3, "second"))
