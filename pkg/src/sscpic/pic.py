"""Path integral clustering on a k-nearest-neighbour digraph.

Vertices are embeddings; edge ``i -> j`` exists when ``j`` is one of the
``K`` most similar vertices to ``i`` and carries the sigmoid of their score.
Clusters are merged greedily by their incremental path integral.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .ahc import Partition

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Digraph:
    W: sp.csr_matrix
    P: sp.csr_matrix
    K: int
    sigma: float

    @property
    def n(self) -> int:
        return self.W.shape[0]


def _check_sigma(sigma: float) -> None:
    if not 0 < sigma < 1:
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")


def row_normalize(W: sp.spmatrix) -> sp.csr_matrix:
    W = sp.csr_matrix(W, dtype=np.float64)
    rowsum = np.asarray(W.sum(axis=1)).ravel()
    inv = np.divide(1.0, rowsum, out=np.zeros_like(rowsum), where=rowsum > 0)
    return sp.csr_matrix(sp.diags(inv) @ W)


def build_digraph(S, K: int = 30, sigma: float = 0.1) -> Digraph:
    """Sparse k-NN adjacency ``W`` and its row-stochastic transition matrix.

    Self loops are excluded and ties at the K-th neighbour go to the lower
    index. ``K`` is clamped to ``N - 1``.
    """
    _check_sigma(sigma)
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("similarity matrix must be square")
    n = S.shape[0]
    if n < 2:
        raise ValueError("need at least two vertices")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    K = min(int(K), n - 1)

    masked = S.copy()
    np.fill_diagonal(masked, -np.inf)
    nbrs = np.argsort(-masked, axis=1, kind="stable")[:, :K]
    rows = np.repeat(np.arange(n), K)
    cols = nbrs.ravel()
    vals = 1.0 / (1.0 + np.exp(-S[rows, cols]))
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return Digraph(W, row_normalize(W), K, float(sigma))


def init_clusters(digraph: Digraph) -> Partition:
    """Link every vertex to its first nearest neighbour and take the closure.

    Groups that share a vertex end up in the same cluster; vertices without
    out-edges stay singletons.
    """
    W = digraph.W.tocsr()
    n = W.shape[0]
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        start, end = W.indptr[i], W.indptr[i + 1]
        if start == end:
            continue
        cols, vals = W.indices[start:end], W.data[start:end]
        best = vals.max()
        j = int(cols[vals == best].min())
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    return Partition.from_labels([find(i) for i in range(n)])


def _system(P_sub: np.ndarray, sigma: float) -> np.ndarray:
    P_sub = np.atleast_2d(np.asarray(P_sub, dtype=np.float64))
    n = P_sub.shape[0]
    M = np.eye(n) - sigma * P_sub
    diag = np.abs(np.diag(M))
    off = np.abs(M).sum(axis=1) - diag
    assert np.all(diag > off), "I - sigma*P is not strictly diagonally dominant"
    return M


def path_integral(P_sub, sigma: float) -> float:
    """``1^T (I - sigma P)^-1 1 / n^2`` for the transition sub-matrix of a cluster."""
    M = _system(P_sub, sigma)
    n = M.shape[0]
    x = scipy.linalg.solve(M, np.ones(n), check_finite=False)
    return float(x.sum() / (n * n))


def conditional_path_integral(P_union, selector, sigma: float) -> float:
    """Path integral over paths of ``P_union`` that start and end in ``selector``."""
    M = _system(P_union, sigma)
    sel = np.asarray(selector, dtype=np.float64)
    if sel.shape != (M.shape[0],):
        raise ValueError("selector length must match the sub-matrix")
    k = sel.sum()
    if k == 0:
        raise ValueError("selector is empty")
    x = scipy.linalg.solve(M, sel, check_finite=False)
    return float(sel @ x / (k * k))


def truncated_path_integral(P_sub, sigma: float, L: int, selector=None) -> float:
    """Series form of the (conditional) path integral, paths up to length ``L``.

    Sums ``delta_ij + sum_k sigma^k [P^k]_ij`` over selected start and end
    vertices and normalises by the squared selection size.
    """
    if L < 0:
        raise ValueError("L must be non-negative")
    P_sub = np.atleast_2d(np.asarray(P_sub, dtype=np.float64))
    n = P_sub.shape[0]
    sel = np.ones(n) if selector is None else np.asarray(selector, dtype=np.float64)
    v = sel.copy()
    total = sel @ v
    scale = 1.0
    for _ in range(L):
        v = P_sub @ v
        scale *= sigma
        total += scale * (sel @ v)
    k = sel.sum()
    return float(total / (k * k))


class PicState:
    """Live clusters over a digraph with cached path integrals.

    ``affinity`` holds the incremental path integral between every pair of
    live clusters; only pairs touching a merged cluster are recomputed.
    """

    def __init__(self, digraph: Digraph, partition: Partition):
        if len(partition.labels) != digraph.n:
            raise ValueError("partition size does not match the digraph")
        self.digraph = digraph
        self.sigma = digraph.sigma
        self.P = digraph.P.toarray()
        # dominance of the full system carries over to every principal sub-matrix
        self.M = _system(self.P, self.sigma)
        # undirected connectivity, for skipping pairs with no edges between them
        self.linked = (self.P > 0) | (self.P.T > 0)
        self.members: list[np.ndarray] = [np.sort(c) for c in partition.clusters()]
        self.alive = [True] * len(self.members)
        self.integral = [self._integral(c) for c in self.members]
        self.merges: list[tuple[int, int, float]] = []
        m = len(self.members)
        self.affinity = np.full((m, m), -np.inf)
        for a in range(m):
            for b in range(a + 1, m):
                self.affinity[a, b] = self.affinity[b, a] = self._pair(a, b)

    def _integral(self, idx: np.ndarray) -> float:
        return path_integral(self.P[np.ix_(idx, idx)], self.sigma)

    def _pair(self, a: int, b: int) -> float:
        A, B = self.members[a], self.members[b]
        if not self.linked[np.ix_(A, B)].any():
            return 0.0
        idx = np.concatenate([A, B])
        na, nb = A.size, B.size
        rhs = np.zeros((na + nb, 2))
        rhs[:na, 0] = 1.0
        rhs[na:, 1] = 1.0
        x = scipy.linalg.solve(self.M[np.ix_(idx, idx)], rhs, check_finite=False)
        cond_a = x[:na, 0].sum() / (na * na)
        cond_b = x[na:, 1].sum() / (nb * nb)
        return float((cond_a - self.integral[a]) + (cond_b - self.integral[b]))

    @property
    def live(self) -> list[int]:
        return [k for k, ok in enumerate(self.alive) if ok]

    @property
    def num_clusters(self) -> int:
        return sum(self.alive)

    def pair_affinity(self, a: int, b: int) -> float:
        if a == b:
            raise ValueError("affinity needs two distinct clusters")
        for k in (a, b):
            if not (0 <= k < len(self.alive) and self.alive[k]):
                raise KeyError(f"cluster {k} is not live")
        return float(self.affinity[a, b])

    def best_pair(self) -> tuple[int, int]:
        """Most affine live pair; ties go to the smallest (min id, max id)."""
        live = np.array(self.live)
        sub = self.affinity[np.ix_(live, live)]
        # live cluster ids are ranked by their smallest member
        keys = np.array([self.members[k][0] for k in live])
        order = np.argsort(keys)
        sub = sub[np.ix_(order, order)]
        m = len(live)
        masked = np.where(np.triu(np.ones((m, m), dtype=bool), 1), sub, -np.inf)
        i, j = divmod(int(np.argmax(masked)), m)
        return int(live[order[i]]), int(live[order[j]])

    def merge(self, a: int, b: int) -> int:
        """Merge cluster ``b`` into ``a`` (in place) and refresh affinities."""
        aff = self.pair_affinity(a, b)
        self.members[a] = np.sort(np.concatenate([self.members[a], self.members[b]]))
        self.alive[b] = False
        self.affinity[b, :] = -np.inf
        self.affinity[:, b] = -np.inf
        self.integral[a] = self._integral(self.members[a])
        for c in self.live:
            if c != a:
                self.affinity[a, c] = self.affinity[c, a] = self._pair(a, c)
        self.merges.append((a, b, aff))
        return a

    def merge_to(self, n_clusters: int) -> None:
        while self.num_clusters > n_clusters:
            a, b = self.best_pair()
            self.merge(a, b)

    def partition(self) -> Partition:
        n = self.digraph.n
        live = sorted(self.live, key=lambda k: self.members[k][0])
        return Partition.from_clusters([self.members[k] for k in live], n)

    def affinity_matrix(self) -> np.ndarray:
        """Affinities of live clusters, ordered by first member.

        The diagonal holds the largest off-diagonal value.
        """
        live = sorted(self.live, key=lambda k: self.members[k][0])
        m = len(live)
        if m == 1:
            return np.zeros((1, 1))
        A = self.affinity[np.ix_(live, live)].copy()
        off = ~np.eye(m, dtype=bool)
        np.fill_diagonal(A, A[off].max())
        return A


def pic_affinity(state: PicState, a: int, b: int) -> float:
    return state.pair_affinity(a, b)


def pic_state(S, K: int = 30, sigma: float = 0.1, n_clusters: int | None = None,
              digraph: Digraph | None = None) -> PicState:
    """Build the digraph and the initial clusters for a merge run.

    If the nearest-neighbour initialisation leaves fewer than ``n_clusters``
    clusters, every vertex starts as its own cluster instead.
    """
    if digraph is None:
        digraph = build_digraph(S, K, sigma)
    n = digraph.n
    if n_clusters is not None and not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters={n_clusters} outside [1, {n}]")
    init = init_clusters(digraph)
    if n_clusters is not None and init.num_clusters < n_clusters:
        log.info("initial clusters (%d) below target %d; starting from singletons",
                 init.num_clusters, n_clusters)
        init = Partition(np.arange(n))
    return PicState(digraph, init)


def pic_cluster(S, K: int = 30, sigma: float = 0.1, n_clusters: int = 1) -> Partition:
    """Path integral clustering of a similarity matrix into ``n_clusters`` groups."""
    state = pic_state(S, K, sigma, n_clusters)
    state.merge_to(n_clusters)
    return state.partition()
