"""Undirected areal-unit graphs: lattice builders, edge-list I/O, exact counts.

A NUG (natural undirected graph) encodes spatial contiguity between areal
units. Vertices are dense 0-based indices; every edge carries a weight in
{1, 2} (1 = border contact, 2 = corner contact).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


class GraphFormatError(ValueError):
    """An edge-list file could not be parsed."""


class DisconnectedGraphError(ValueError):
    """The operation requires a connected graph."""


class IntractableError(RuntimeError):
    """An exact count would exceed the configured size cap."""


ORDER_FIRST = "first"
ORDER_SECOND = "second"


@dataclass(frozen=True)
class LatticeSpec:
    """Regular rows x cols lattice with a first- or second-order neighborhood."""

    rows: int
    cols: int
    order: str = ORDER_FIRST

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("lattice needs at least one row and one column")
        if self.order not in (ORDER_FIRST, ORDER_SECOND):
            raise ValueError(f"unknown neighborhood order: {self.order!r}")


class Nug:
    """Immutable undirected graph over n areal units.

    Edges are unordered pairs stored once as (i, j) with i < j. Neighbor
    lists are sorted. Instances are safe to share across chains; all
    derived structure (adjacency, coloring) is cached lazily.
    """

    __slots__ = ("n", "edges", "weights", "neighbor_lists", "_adjacency",
                 "_color_classes", "_padded_neighbors")

    def __init__(self, n, edges, weights=None):
        if n < 0:
            raise ValueError("vertex count must be nonnegative")
        seen = set()
        canon = []
        for e in edges:
            i, j = e
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i},{j}) out of range for n={n}")
            key = (i, j) if i < j else (j, i)
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            canon.append(key)
        canon.sort()
        wmap = {}
        if weights is not None:
            for e, w in weights.items():
                i, j = e
                key = (i, j) if i < j else (j, i)
                if key not in seen:
                    raise ValueError(f"weight given for missing edge {key}")
                if w not in (1, 2):
                    raise ValueError(f"edge weight must be 1 or 2, got {w}")
                wmap[key] = int(w)
        nbrs = [[] for _ in range(n)]
        for i, j in canon:
            nbrs[i].append(j)
            nbrs[j].append(i)
        self.n = n
        self.edges = tuple(canon)
        self.weights = {e: wmap.get(e, 1) for e in canon}
        self.neighbor_lists = tuple(tuple(sorted(x)) for x in nbrs)
        self._adjacency = None
        self._color_classes = None
        self._padded_neighbors = None

    def neighbors(self, i):
        return self.neighbor_lists[i]

    def degree(self, i):
        return len(self.neighbor_lists[i])

    def weight(self, i, j):
        key = (i, j) if i < j else (j, i)
        return self.weights[key]

    def adjacency_matrix(self):
        """Symmetric 0/1 association matrix A(N) with zero diagonal."""
        if self._adjacency is None:
            a = np.zeros((self.n, self.n), dtype=np.int64)
            for i, j in self.edges:
                a[i, j] = 1
                a[j, i] = 1
            self._adjacency = a
        return self._adjacency.copy()

    def color_classes(self):
        """Greedy partition into independent vertex sets (ascending index).

        Within a class no two vertices are adjacent, so single-site updates
        of a whole class commute and can be applied simultaneously.
        """
        if self._color_classes is None:
            color = [-1] * self.n
            for v in range(self.n):
                used = {color[u] for u in self.neighbor_lists[v] if color[u] >= 0}
                c = 0
                while c in used:
                    c += 1
                color[v] = c
            k = max(color) + 1 if self.n else 0
            self._color_classes = tuple(
                np.array([v for v in range(self.n) if color[v] == c], dtype=np.intp)
                for c in range(k)
            )
        return self._color_classes

    def padded_neighbors(self):
        """Per color class: (vertices, neighbor index matrix, degrees).

        The neighbor matrix is padded with index n; callers append a dummy
        slot to their state vector so the padding contributes zero.
        """
        if self._padded_neighbors is None:
            out = []
            for cls in self.color_classes():
                degs = np.array([self.degree(v) for v in cls], dtype=np.float64)
                width = int(degs.max()) if len(cls) else 0
                mat = np.full((len(cls), max(width, 1)), self.n, dtype=np.intp)
                for row, v in enumerate(cls):
                    nb = self.neighbor_lists[v]
                    mat[row, : len(nb)] = nb
                out.append((cls, mat, degs))
            self._padded_neighbors = tuple(out)
        return self._padded_neighbors

    def __repr__(self):
        return f"Nug(n={self.n}, edges={len(self.edges)})"


def build_lattice_nug(spec: LatticeSpec) -> Nug:
    """NUG of a regular lattice; row-major cell indexing.

    First order connects edge-adjacent cells (weight 1); second order adds
    corner-adjacent cells (weight 2).
    """
    r, c = spec.rows, spec.cols
    idx = lambda i, j: i * c + j
    edges = []
    weights = {}
    for i in range(r):
        for j in range(c):
            if j + 1 < c:
                e = (idx(i, j), idx(i, j + 1))
                edges.append(e)
                weights[e] = 1
            if i + 1 < r:
                e = (idx(i, j), idx(i + 1, j))
                edges.append(e)
                weights[e] = 1
            if spec.order == ORDER_SECOND:
                if i + 1 < r and j + 1 < c:
                    e = (idx(i, j), idx(i + 1, j + 1))
                    edges.append(e)
                    weights[e] = 2
                if i + 1 < r and j - 1 >= 0:
                    a, b = idx(i, j), idx(i + 1, j - 1)
                    e = (min(a, b), max(a, b))
                    edges.append(e)
                    weights[e] = 2
    return Nug(r * c, edges, weights)


def load_nug(path, n=None) -> Nug:
    """Read an edge list: one `i,j[,w]` line per edge, `#` comments ignored.

    Weights default to 1. When n is omitted it is inferred as max index + 1.
    Parse errors report the offending 1-based line number.
    """
    edges = []
    weights = {}
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) not in (2, 3):
                raise GraphFormatError(f"line {lineno}: expected 'i,j[,w]', got {line!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"line {lineno}: vertex indices must be integers") from None
            if i == j:
                raise GraphFormatError(f"line {lineno}: self-loop at vertex {i}")
            if i < 0 or j < 0 or (n is not None and (i >= n or j >= n)):
                raise GraphFormatError(f"line {lineno}: vertex index out of range")
            key = (i, j) if i < j else (j, i)
            if key in seen:
                raise GraphFormatError(f"line {lineno}: duplicate edge {key}")
            seen.add(key)
            w = 1
            if len(parts) == 3:
                try:
                    w = int(parts[2])
                except ValueError:
                    raise GraphFormatError(f"line {lineno}: weight must be an integer") from None
                if w not in (1, 2):
                    raise GraphFormatError(f"line {lineno}: weight must be 1 or 2, got {w}")
            edges.append(key)
            weights[key] = w
    if n is None:
        n = 1 + max((max(e) for e in edges), default=-1)
    return Nug(n, edges, weights)


def save_nug(nug: Nug, path) -> None:
    """Write the edge list in the same `i,j,w` format accepted by load_nug."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n={nug.n}\n")
        for i, j in nug.edges:
            fh.write(f"{i},{j},{nug.weights[(i, j)]}\n")


def laplacian(nug: Nug) -> np.ndarray:
    """Graph Laplacian W(N) - A(N) with W the (unweighted) degree matrix."""
    a = nug.adjacency_matrix()
    return np.diag(a.sum(axis=1)) - a


def is_connected(nug: Nug) -> bool:
    """Breadth-first reachability of all n vertices from vertex 0."""
    if nug.n <= 1:
        return True
    seen = bytearray(nug.n)
    seen[0] = 1
    queue = deque([0])
    count = 1
    while queue:
        v = queue.popleft()
        for u in nug.neighbor_lists[v]:
            if not seen[u]:
                seen[u] = 1
                count += 1
                queue.append(u)
    return count == nug.n


def _int_det_bareiss(a) -> int:
    """Exact determinant of a square integer matrix (fraction-free Bareiss)."""
    n = len(a)
    if n == 0:
        return 1
    a = [[int(x) for x in row] for row in a]
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for r in range(k + 1, n):
                if a[r][k] != 0:
                    a[k], a[r] = a[r], a[k]
                    sign = -sign
                    break
            else:
                return 0
        pivot = a[k][k]
        for i in range(k + 1, n):
            row_i = a[i]
            row_k = a[k]
            lead = row_i[k]
            for j in range(k + 1, n):
                row_i[j] = (row_i[j] * pivot - lead * row_k[j]) // prev
            row_i[k] = 0
        prev = pivot
    return sign * a[n - 1][n - 1]


def count_spanning_trees(nug: Nug, cofactor=None) -> int:
    """Exact spanning-tree count: any (i, j) cofactor of the Laplacian.

    Computed in arbitrary-precision integer arithmetic; a disconnected graph
    (count zero) raises DisconnectedGraphError rather than returning 0.
    """
    if not is_connected(nug):
        raise DisconnectedGraphError("graph is disconnected; spanning tree count is zero")
    if nug.n <= 1:
        return 1
    i, j = (0, 0) if cofactor is None else cofactor
    if not (0 <= i < nug.n and 0 <= j < nug.n):
        raise ValueError("cofactor position out of range")
    lap = [[0] * nug.n for _ in range(nug.n)]
    for a, b in nug.edges:
        lap[a][b] -= 1
        lap[b][a] -= 1
        lap[a][a] += 1
        lap[b][b] += 1
    minor = [[lap[r][c] for c in range(nug.n) if c != j] for r in range(nug.n) if r != i]
    return (-1) ** (i + j) * _int_det_bareiss(minor)


def count_acyclic_orientations(nug: Nug, max_edges: int = 24) -> int:
    """Exact acyclic-orientation count via the chromatic polynomial at -1.

    Deletion-contraction with memoization on (vertex set, edge set); graphs
    with more than max_edges edges raise IntractableError (sample
    orientations by random permutation instead of counting).
    """
    if len(nug.edges) > max_edges:
        raise IntractableError(
            f"{len(nug.edges)} edges exceeds the deletion-contraction cap "
            f"({max_edges}); counting is intractable here, sample orientations instead"
        )
    cache = {}

    def chi_at_minus_one(vertices, edges):
        if not edges:
            return (-1) ** len(vertices)
        key = (vertices, edges)
        val = cache.get(key)
        if val is not None:
            return val
        i, j = min(edges)
        deleted = edges - {(i, j)}
        contracted = set()
        for a, b in deleted:
            a2 = i if a == j else a
            b2 = i if b == j else b
            if a2 != b2:
                contracted.add((a2, b2) if a2 < b2 else (b2, a2))
        val = chi_at_minus_one(vertices, deleted) - chi_at_minus_one(
            vertices - {j}, frozenset(contracted)
        )
        cache[key] = val
        return val

    chi = chi_at_minus_one(frozenset(range(nug.n)), frozenset(nug.edges))
    return (-1) ** nug.n * chi
