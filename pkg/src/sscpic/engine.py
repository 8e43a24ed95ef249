"""Self-supervised clustering: alternate representation training and clustering.

Each iteration samples triplets from the previous partition, trains the
network, re-embeds the recording, estimates how many clusters to keep from
the eigenvalues of the cluster affinity matrix and re-clusters.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .ahc import Partition, ahc_cluster
from .data import Recording
from .pic import PicState, build_digraph, pic_state
from .repnet import TrainConfig, forward, init_repnet, sample_triplets, train
from .similarity import (
    PcaTransform,
    WhiteningTransform,
    cosine_matrix,
    fit_pca,
    fit_whitening,
    temporal_weight,
    unit_normalize,
)

log = logging.getLogger(__name__)

MINIBATCH_ABOVE = 800


@dataclass(frozen=True)
class SscConfig:
    # digraph
    K: int = 30
    sigma: float = 0.1
    # representation training
    alpha: float = 0.6
    learning_rate: float = 1e-3
    eta: float = 0.5
    max_epochs: int = 15
    sampling: str = "random"
    batch_mode: str = "auto"          # "auto", "full" or "minibatch"
    batch_size: int = 256
    validation_fraction: float = 0.1
    # temporal continuity
    temporal: bool = False
    beta: float = 0.95
    n_b: int = 2
    # cluster count
    phi: float = 0.7
    phi_schedule: tuple[float, ...] = ()
    n_speakers: int | None = None
    q_max: int = 10
    # initialisation
    init: str = "pic"                 # "pic" (phi route) or "ahc" (threshold route)
    ahc_threshold: float = 0.0
    clusterer: str = "pic"            # "pic" or "ahc"
    linkage: str = "average"
    whitening: str = "center"         # "center", "recording" or "none"
    eig_floor: float = 1e-8
    pca_energy: float | None = 0.5
    pca_dim: int | None = None
    pca_min_dim: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.phi <= 1:
            raise ValueError(f"phi must lie in (0, 1], got {self.phi}")
        if any(not 0 < p <= 1 for p in self.phi_schedule):
            raise ValueError("phi schedule values must lie in (0, 1]")
        if self.q_max < 1:
            raise ValueError("q_max must be >= 1")
        if self.n_speakers is not None and self.n_speakers < 1:
            raise ValueError("n_speakers must be positive")
        if not 0 < self.sigma < 1:
            raise ValueError(f"sigma must lie in (0, 1), got {self.sigma}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.n_b < 0:
            raise ValueError("n_b must be non-negative")
        if self.init not in ("pic", "ahc"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.clusterer not in ("pic", "ahc"):
            raise ValueError(f"unknown clusterer {self.clusterer!r}")
        if self.whitening not in ("center", "recording", "none"):
            raise ValueError(f"unknown whitening mode {self.whitening!r}")
        if self.batch_mode not in ("auto", "full", "minibatch"):
            raise ValueError(f"unknown batch mode {self.batch_mode!r}")
        if (self.pca_dim is None) == (self.pca_energy is None):
            raise ValueError("give exactly one of pca_dim or pca_energy")
        # surfaces alpha / eta / sampling errors at construction time
        self.train_config(100)

    def phi_at(self, q: int) -> float:
        if self.phi_schedule:
            return self.phi_schedule[min(q, len(self.phi_schedule)) - 1]
        return self.phi

    def train_config(self, n_windows: int, seed: int | None = None) -> TrainConfig:
        mode = self.batch_mode
        if mode == "auto":
            mode = "minibatch" if n_windows > MINIBATCH_ABOVE else "full"
        return TrainConfig(alpha=self.alpha, learning_rate=self.learning_rate, eta=self.eta,
                           max_epochs=self.max_epochs, batch_mode=mode,
                           batch_size=self.batch_size,
                           validation_fraction=self.validation_fraction,
                           sampling=self.sampling,
                           seed=self.seed if seed is None else seed)


@dataclass
class IterationRecord:
    q: int
    n_clusters: int
    n_estimated: int | None = None
    objective: list[float] = field(default_factory=list)
    epochs: int = 0
    stop_reason: str = ""
    n_triplets: int = 0
    merges: int = 0
    labels: list[int] = field(default_factory=list)
    note: str = ""


@dataclass
class SscTrace:
    records: list[IterationRecord] = field(default_factory=list)
    # output of the final network; not part of the serialized trace
    embeddings: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def counts(self) -> list[int]:
        return [r.n_clusters for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)


# --------------------------------------------------------------------------
# cluster-count estimation
# --------------------------------------------------------------------------

def cluster_affinity_matrix(state: PicState) -> np.ndarray:
    """Pairwise incremental-path-integral affinities of the live clusters.

    The diagonal holds the largest off-diagonal entry; a single cluster
    gives ``[[0]]``.
    """
    return state.affinity_matrix()


def estimate_num_clusters(A, phi: float, n_prev: int | None = None) -> int:
    """Cluster count from the cumulative explained-variance ratio of ``A``.

    Eigenvalues are sorted in descending order and the largest ``k`` whose
    cumulative share of the eigenvalue sum is at most ``phi`` is returned
    (1 if even the first share exceeds ``phi``). An affinity matrix with no
    positive eigenvalue mass, such as one over mutually disconnected
    clusters, gives no reason to merge and returns ``n_prev``.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("affinity matrix must be square")
    n = A.shape[0]
    n_prev = n if n_prev is None else n_prev
    if n != n_prev:
        raise ValueError(f"affinity matrix is {n}x{n} but n_prev={n_prev}")
    if not np.all(np.isfinite(A)):
        raise ValueError("affinity matrix has non-finite entries")
    w = np.linalg.eigvalsh(0.5 * (A + A.T))[::-1]
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite eigenvalues")
    total = w.sum()
    scale = np.abs(w).max() if n else 0.0
    if n <= 1 or not total > 1e-12 * max(scale, 1e-300) or scale == 0:
        return max(1, n_prev)
    ratio = np.cumsum(w) / total
    hits = np.flatnonzero(ratio <= phi + 1e-12)
    k = int(hits.max()) + 1 if hits.size else 1
    return int(min(max(k, 1), n_prev))


# --------------------------------------------------------------------------
# the SSC loop
# --------------------------------------------------------------------------

def initial_transforms(X: np.ndarray, config: SscConfig,
                       whitening: WhiteningTransform | None = None,
                       ) -> tuple[WhiteningTransform, PcaTransform]:
    """Layer initialisers: whitening (given, or per ``config.whitening``) then PCA."""
    X = np.asarray(X, dtype=np.float64)
    D = X.shape[1]
    if whitening is None:
        if config.whitening == "recording":
            whitening = fit_whitening(X, config.eig_floor)
        elif config.whitening == "center":
            whitening = WhiteningTransform(X.mean(axis=0), np.eye(D))
        else:
            whitening = WhiteningTransform(np.zeros(D), np.eye(D))
    Z = unit_normalize(whitening.apply(X))
    if config.pca_dim is not None:
        pca = fit_pca(Z, dim=min(config.pca_dim, D))
    else:
        pca = fit_pca(Z, energy=config.pca_energy)
        if pca.d < config.pca_min_dim:
            pca = fit_pca(Z, dim=min(config.pca_min_dim, D))
    return whitening, pca


def scores_for(Y: np.ndarray, config: SscConfig) -> np.ndarray:
    """Cosine scores of ``Y``, temporally damped when enabled."""
    S = cosine_matrix(Y)
    if config.temporal:
        S = temporal_weight(S, config.beta, config.n_b)
    return S.scores


class _Clusterer:
    """Clusters one similarity matrix; keeps the PIC merge state for reuse."""

    def __init__(self, S: np.ndarray, config: SscConfig):
        self.S = S
        self.config = config
        self.state: PicState | None = None
        if config.clusterer == "pic":
            self.digraph = build_digraph(S, config.K, config.sigma)

    def _state(self, n_clusters: int | None) -> PicState:
        if self.state is None or (n_clusters is not None
                                  and self.state.num_clusters < n_clusters):
            self.state = pic_state(self.S, n_clusters=n_clusters, digraph=self.digraph)
        return self.state

    def cluster(self, n_clusters: int) -> tuple[Partition, int]:
        if self.config.clusterer == "ahc":
            return ahc_cluster(self.S, self.config.linkage, n_clusters=n_clusters), 0
        state = self._state(n_clusters)
        before = len(state.merges)
        state.merge_to(n_clusters)
        return state.partition(), len(state.merges) - before

    def estimate(self, n_prev: int, phi: float) -> int:
        if self.config.clusterer == "ahc":
            part = ahc_cluster(self.S, self.config.linkage,
                               threshold=self.config.ahc_threshold)
            return min(part.num_clusters, n_prev)
        state = self._state(n_prev)
        state.merge_to(n_prev)
        est = estimate_num_clusters(cluster_affinity_matrix(state), phi, state.num_clusters)
        # disconnected groups have zero affinity; merging them is never informed
        return max(est, min(self.components, n_prev))

    @property
    def components(self) -> int:
        return int(connected_components(self.digraph.W, directed=True,
                                        connection="weak")[0])


def run_ssc(recording: Recording, config: SscConfig = SscConfig(),
            whitening: WhiteningTransform | None = None) -> tuple[Partition, SscTrace]:
    """Joint representation learning and clustering of one recording.

    With ``config.n_speakers`` unset the number of speakers is estimated.
    Returns the final partition and a per-iteration trace; the last trace
    record is the termination round (one more training pass continued from
    the last network, then clustering to the final count).
    """
    X = recording.embeddings
    n = recording.num_windows
    known = config.n_speakers is not None
    n_star = config.n_speakers if known else 1
    if n_star > n:
        raise ValueError(f"{n_star} speakers requested for {n} windows")

    net = init_repnet(*initial_transforms(X, config, whitening))
    Y = forward(net, X)
    S = scores_for(Y, config)
    cl = _Clusterer(S, config)
    trace = SscTrace()

    # q = 0: initial partition
    if config.init == "ahc":
        z = ahc_cluster(S, config.linkage, threshold=config.ahc_threshold)
        n_prev, merges = z.num_clusters, n - z.num_clusters
        if n_prev < n_star:
            raise ValueError(f"initial clustering left {n_prev} clusters, fewer than "
                             f"the {n_star} requested")
    elif known:
        n_prev = n_star
        z, merges = cl.cluster(n_prev)
    else:
        m0 = cl._state(None).num_clusters if config.clusterer == "pic" else n
        n_prev = max(n_star, cl.estimate(m0, config.phi_at(1)))
        z, merges = cl.cluster(n_prev)
    trace.records.append(IterationRecord(0, n_prev, merges=merges, labels=z.labels.tolist(),
                                         note=f"init={config.init}"))
    log.info("q=0: %d clusters", n_prev)

    S_train = cosine_matrix(Y).scores
    for q in range(1, config.q_max + 1):
        rec = IterationRecord(q, n_prev)
        net = _train_round(net, X, z, S_train, config, q, n, rec)
        Y = forward(net, X)
        S = scores_for(Y, config)
        S_train = cosine_matrix(Y).scores
        cl = _Clusterer(S, config)
        if n_prev == n_star:
            n_est = n_prev
        else:
            n_est = cl.estimate(n_prev, config.phi_at(q))
        n_q = min(max(n_star, n_est), n_prev)
        rec.n_estimated, rec.n_clusters = n_est, n_q
        trace.records.append(rec)
        log.info("q=%d: estimate %d -> %d clusters", q, n_est, n_q)
        if n_q == n_star or q == config.q_max or n_q == n_prev:
            if n_q == n_prev and n_q != n_star and q != config.q_max:
                rec.note = "count unchanged; stopping"
            n_star = n_q
            break
        z, rec.merges = cl.cluster(n_q)
        rec.labels = z.labels.tolist()
        n_prev = n_q

    # termination round: continue training from the last network
    rec = IterationRecord(len(trace.records), n_star, note="termination")
    net = _train_round(net, X, z, S_train, config, rec.q, n, rec)
    trace.embeddings = forward(net, X)
    S = scores_for(trace.embeddings, config)
    final, rec.merges = _Clusterer(S, config).cluster(n_star)
    rec.labels = final.labels.tolist()
    trace.records.append(rec)
    return final, trace


def _train_round(net, X, z: Partition, S_train, config: SscConfig, q: int, n: int,
                 rec: IterationRecord):
    if z.num_clusters < 2:
        rec.stop_reason = "skipped: single cluster"
        return net
    seed = config.seed * 1000 + q
    try:
        T = sample_triplets(z.labels, config.sampling, S_train, seed=seed)
    except ValueError as e:
        rec.stop_reason = f"skipped: {e}"
        return net
    result = train(net, X, T, config.train_config(n, seed))
    rec.objective = [float(v) for v in result.objective]
    rec.epochs = result.epochs
    rec.stop_reason = result.stop_reason
    rec.n_triplets = len(T)
    return result.net


def run_baseline(recording: Recording, system: str, config: SscConfig = SscConfig(),
                 whitening: WhiteningTransform | None = None) -> Partition:
    """Cluster the initial (whitened, normalised, PCA) embeddings without training.

    ``system`` is ``"pic"`` or ``"ahc"``. Without a known speaker count PIC
    uses the eigenvalue estimate once and AHC stops at its threshold.
    """
    X = recording.embeddings
    net = init_repnet(*initial_transforms(X, config, whitening))
    S = scores_for(forward(net, X), config)
    cfg = replace(config, clusterer=system)
    if system == "ahc":
        if config.n_speakers is not None:
            return ahc_cluster(S, config.linkage, n_clusters=config.n_speakers)
        return ahc_cluster(S, config.linkage, threshold=config.ahc_threshold)
    if system != "pic":
        raise ValueError(f"unknown baseline system {system!r}")
    cl = _Clusterer(S, cfg)
    if config.n_speakers is not None:
        return cl.cluster(config.n_speakers)[0]
    m0 = cl._state(None).num_clusters
    return cl.cluster(cl.estimate(m0, config.phi))[0]


def run_system(recording: Recording, system: str, config: SscConfig = SscConfig(),
               whitening: WhiteningTransform | None = None) -> tuple[Partition, SscTrace | None]:
    """Dispatch on a system name: ``ahc``, ``pic``, ``ssc-pic`` or ``ssc-ahc``."""
    if system in ("ahc", "pic"):
        return run_baseline(recording, system, config, whitening), None
    if system == "ssc-pic":
        return run_ssc(recording, replace(config, clusterer="pic"), whitening)
    if system == "ssc-ahc":
        return run_ssc(recording, replace(config, clusterer="ahc", init="ahc"), whitening)
    raise ValueError(f"unknown system {system!r}")


SYSTEMS: Sequence[str] = ("ahc", "pic", "ssc-pic", "ssc-ahc")
