"""Agglomerative hierarchical clustering over a similarity matrix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

LINKAGES = ("single", "complete", "average")


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        if labels.ndim != 1:
            raise ValueError("labels must be a vector")
        k = self.num_clusters if labels.size else 0
        if labels.size and (labels.min() < 0 or np.unique(labels).size != k):
            raise ValueError("labels must be contiguous from 0")
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def num_clusters(self) -> int:
        return int(np.asarray(self.labels).max()) + 1 if len(self.labels) else 0

    def clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == k) for k in range(self.num_clusters)]

    @classmethod
    def from_labels(cls, labels: Iterable) -> "Partition":
        """Renumber arbitrary labels contiguously by first appearance."""
        order: dict = {}
        return cls(np.array([order.setdefault(x, len(order)) for x in labels], dtype=int))

    @classmethod
    def from_clusters(cls, clusters: Iterable[Iterable[int]], n: int) -> "Partition":
        raw = np.full(n, -1)
        for k, members in enumerate(clusters):
            raw[np.asarray(list(members), dtype=int)] = k
        if (raw < 0).any():
            raise ValueError("clusters do not cover every index")
        return cls.from_labels(raw)


def _check_linkage(linkage: str) -> str:
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}; choose from {LINKAGES}")
    return linkage


def linkage_affinity(S, A, B, linkage: str = "average") -> float:
    """Affinity of index sets ``A`` and ``B`` under the given linkage."""
    _check_linkage(linkage)
    A = np.asarray(list(A), dtype=int)
    B = np.asarray(list(B), dtype=int)
    if A.size == 0 or B.size == 0:
        raise ValueError("clusters must be non-empty")
    if np.intersect1d(A, B).size:
        raise ValueError("clusters must be disjoint")
    block = np.asarray(S, dtype=np.float64)[np.ix_(A, B)]
    if linkage == "single":
        return float(block.max())
    if linkage == "complete":
        return float(block.min())
    return float(block.mean())


def ahc_cluster(S, linkage: str = "average", threshold: float | None = None,
                n_clusters: int | None = None) -> Partition:
    """Greedy bottom-up merging of the most affine cluster pair.

    Exactly one stopping rule must be given: stop once the best affinity
    drops below ``threshold``, or once ``n_clusters`` clusters remain.
    Among equally affine pairs the one with the lexicographically smallest
    (lower id, higher id) is merged, where a cluster's id is its smallest
    member index.
    """
    _check_linkage(linkage)
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("similarity matrix must be square")
    n = S.shape[0]
    if (threshold is None) == (n_clusters is None):
        raise ValueError("give exactly one of threshold or n_clusters")
    if n_clusters is not None and not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters={n_clusters} outside [1, {n}]")

    # cluster slots are indexed by their smallest member; dead slots are -inf
    if linkage == "average":
        sums = S.copy()
        sizes = np.ones(n)
        aff = S.copy()
    else:
        aff = S.copy()
    alive = np.ones(n, dtype=bool)
    np.fill_diagonal(aff, -np.inf)
    members = {i: [i] for i in range(n)}
    count = n
    upper = np.triu(np.ones((n, n), dtype=bool), 1)

    while count > 1:
        if n_clusters is not None and count <= n_clusters:
            break
        masked = np.where(upper, aff, -np.inf)
        flat = int(np.argmax(masked))
        a, b = divmod(flat, n)
        best = masked[a, b]
        if threshold is not None and best < threshold:
            break
        # merge b into a (a < b keeps a as the smallest member)
        if linkage == "single":
            row = np.maximum(aff[a], aff[b])
        elif linkage == "complete":
            row = np.minimum(aff[a], aff[b])
        else:
            sums[a] += sums[b]
            sums[:, a] = sums[a]
            sizes[a] += sizes[b]
            row = sums[a] / (sizes[a] * sizes)
        alive[b] = False
        row = np.where(alive, row, -np.inf)
        row[a] = -np.inf
        aff[a, :] = row
        aff[:, a] = row
        aff[b, :] = -np.inf
        aff[:, b] = -np.inf
        members[a].extend(members.pop(b))
        count -= 1

    labels = np.empty(n, dtype=int)
    for k, key in enumerate(sorted(members)):
        labels[members[key]] = k
    return Partition.from_labels(labels)
