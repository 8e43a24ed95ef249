"""Two-layer embedding refinement network trained on cluster-derived triplets.

Layer 1 is an affine map followed by unit-length normalisation, layer 2 a
linear projection. The network starts as the whitening + PCA pipeline and is
trained by gradient ascent on a cosine triplet similarity.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .similarity import PcaTransform, WhiteningTransform

log = logging.getLogger(__name__)

SAMPLING = ("hard", "random", "easy")


class TrainingError(RuntimeError):
    pass


@dataclass
class RepNet:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def output_dim(self) -> int:
        return self.W2.shape[0]

    def copy(self) -> "RepNet":
        return RepNet(self.W1.copy(), self.b1.copy(), self.W2.copy())

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2}


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


def init_repnet(whitening: WhiteningTransform, pca: PcaTransform) -> RepNet:
    """Network whose forward pass equals whiten -> unit-normalise -> PCA."""
    W1 = np.array(whitening.projection, dtype=np.float64)
    if W1.ndim != 2 or W1.shape[0] != W1.shape[1]:
        raise ValueError("whitening projection must be square")
    W2 = np.array(pca.basis, dtype=np.float64)
    if W2.shape[1] != W1.shape[0]:
        raise ValueError(
            f"PCA input dimension {W2.shape[1]} != whitening output {W1.shape[0]}")
    return RepNet(W1, -W1 @ np.asarray(whitening.mean, dtype=np.float64), W2)


def _layers(net: RepNet, X: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"input width {X.shape[-1]} != network input {net.input_dim}")
    H = X @ net.W1.T + net.b1
    r = np.linalg.norm(H, axis=1)
    bad = np.flatnonzero(~(r > 0))
    if bad.size:
        raise ValueError(f"zero pre-activation norm at row {bad[0]}")
    U = H / r[:, None]
    return X, r, U, U @ net.W2.T


def forward(net: RepNet, X) -> np.ndarray:
    return _layers(net, X)[3]


# --------------------------------------------------------------------------
# triplets
# --------------------------------------------------------------------------

def sample_triplets(labels, strategy: str = "random", S=None, seed: int = 0,
                    anchors_per_cluster: int | None = None) -> np.ndarray:
    """Draw (anchor, positive, negative) index triplets from cluster labels.

    Every cluster with at least two members contributes the same number of
    anchor/positive pairs (default: the largest cluster size). Pairs are
    drawn without replacement and recycled when a cluster has too few; each
    repetition gets its own negative. Negatives come from any other cluster:
    uniformly (``random``), or as the most / least similar point to the
    anchor under ``S`` (``hard`` / ``easy``).

    Returns an ``(T, 3)`` integer array.
    """
    if strategy not in SAMPLING:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    labels = np.asarray(labels)
    ids = list(dict.fromkeys(labels.tolist()))
    if len(ids) < 2:
        raise ValueError("triplet sampling needs at least two clusters")
    clusters = [np.flatnonzero(labels == k) for k in ids]
    if all(c.size < 2 for c in clusters):
        raise ValueError("no positive pairs available")
    if strategy != "random":
        if S is None:
            raise ValueError(f"{strategy} sampling needs a similarity matrix")
        S = np.asarray(S, dtype=np.float64)
    budget = anchors_per_cluster or max(c.size for c in clusters)
    rng = np.random.default_rng(seed)

    out = []
    for k, members in enumerate(clusters):
        if members.size < 2:
            continue
        iu, ju = np.triu_indices(members.size, 1)
        pick = np.resize(rng.permutation(iu.size), budget)
        anchors, positives = members[iu[pick]], members[ju[pick]]
        others = [c for c2, c in enumerate(clusters) if c2 != k]
        if strategy == "random":
            which = rng.integers(len(others), size=budget)
            negatives = np.array([others[w][rng.integers(others[w].size)] for w in which])
        else:
            pool = np.sort(np.concatenate(others))
            scores = S[np.ix_(anchors, pool)]
            pos = scores.argmax(axis=1) if strategy == "hard" else scores.argmin(axis=1)
            negatives = pool[pos]
        out.append(np.column_stack([anchors, positives, negatives]))
    return np.concatenate(out).astype(int)


def _as_triplets(triplets) -> np.ndarray:
    T = np.asarray(triplets, dtype=int).reshape(-1, 3)
    return T


def _pair_terms(T: np.ndarray, alpha: float):
    i, j, l = T.T
    left = np.concatenate([i, i, j])
    right = np.concatenate([j, l, l])
    w = np.concatenate([np.ones(len(T)), np.full(len(T), -alpha), np.full(len(T), -alpha)])
    return left, right, w


def triplet_objective(Y, triplets, alpha: float) -> float:
    """Sum over triplets of ``s(i,j) - alpha * (s(i,l) + s(j,l))`` with cosine ``s``."""
    Y = np.asarray(Y, dtype=np.float64)
    T = _as_triplets(triplets)
    if T.size == 0:
        return 0.0
    Yn = Y / np.linalg.norm(Y, axis=1, keepdims=True)
    left, right, w = _pair_terms(T, alpha)
    return float(np.sum(w * np.einsum("ij,ij->i", Yn[left], Yn[right])))


def objective_and_grad(net: RepNet, X, triplets, alpha: float):
    """Triplet objective and its gradient with respect to every parameter."""
    T = _as_triplets(triplets)
    X, r, U, Y = _layers(net, X)
    q = np.linalg.norm(Y, axis=1)
    if np.any(~(q[np.unique(T)] > 0)):
        raise ValueError("zero-norm output embedding in a triplet")
    q = np.where(q > 0, q, 1.0)
    Yn = Y / q[:, None]
    left, right, w = _pair_terms(T, alpha)
    cos = np.einsum("ij,ij->i", Yn[left], Yn[right])
    J = float(np.sum(w * cos))

    # d/dYn of w * <Yn_a, Yn_b>
    G = np.zeros_like(Yn)
    np.add.at(G, left, w[:, None] * Yn[right])
    np.add.at(G, right, w[:, None] * Yn[left])
    GY = (G - np.einsum("ij,ij->i", G, Yn)[:, None] * Yn) / q[:, None]

    gW2 = GY.T @ U
    GU = GY @ net.W2
    GH = (GU - np.einsum("ij,ij->i", GU, U)[:, None] * U) / r[:, None]
    return J, {"W1": GH.T @ X, "b1": GH.sum(axis=0), "W2": gW2}


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.6
    learning_rate: float = 1e-3
    eta: float = 0.5
    max_epochs: int = 15
    batch_mode: str = "full"      # "full" or "minibatch"
    batch_size: int = 256
    validation_fraction: float = 0.1
    sampling: str = "random"
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.batch_mode not in ("full", "minibatch"):
            raise ValueError(f"unknown batch mode {self.batch_mode!r}")
        if self.sampling not in SAMPLING:
            raise ValueError(f"unknown sampling strategy {self.sampling!r}")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation fraction must lie in (0, 1)")


@dataclass
class TrainResult:
    net: RepNet
    objective: list[float] = field(default_factory=list)
    validation: list[float] = field(default_factory=list)
    epochs: int = 0
    stop_reason: str = "max-epochs"


class _Adam:
    def __init__(self, params: dict, lr: float, betas, eps: float):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def ascend(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] += self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def eta_reached(J: float, J0: float, eta: float) -> bool:
    """Early-stopping test on the objective relative to its first-epoch value.

    With a positive initial loss (``-J0 > 0``) training stops once the loss
    falls to ``eta`` times that value. If the objective starts non-negative
    the loss reading flips sign, so the test becomes ``J >= J0 / eta``.
    """
    if J0 < 0:
        return -J <= eta * -J0
    if J0 > 0:
        return J >= J0 / eta
    return False


def _check_finite(J: float, epoch: int, grads: dict | None = None) -> None:
    if not np.isfinite(J):
        norms = {k: float(np.linalg.norm(g)) for k, g in (grads or {}).items()}
        raise TrainingError(f"non-finite objective {J} at epoch {epoch}; gradient norms {norms}")


def train(net: RepNet, X, triplets, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Adam gradient ascent on the triplet objective.

    Full-batch mode takes one step per epoch. Minibatch mode holds out a
    validation share of the triplets, halves the learning rate the first
    time the validation objective stalls and stops after two stalled epochs.
    Both modes stop early by :func:`eta_reached` and at ``max_epochs``.
    """
    T = _as_triplets(triplets)
    if T.size == 0:
        raise ValueError("no triplets to train on")
    net = net.copy()
    params = net.params()
    adam = _Adam(params, config.learning_rate, config.adam_betas, config.adam_eps)
    result = TrainResult(net)
    if config.batch_mode == "full":
        _train_full(net, X, T, config, adam, result)
    else:
        _train_minibatch(net, X, T, config, adam, result)
    return result


def _train_full(net, X, T, config, adam, result):
    params = net.params()
    J0 = None
    for epoch in range(config.max_epochs):
        J, grads = objective_and_grad(net, X, T, config.alpha)
        _check_finite(J, epoch, grads)
        result.objective.append(J)
        if J0 is None:
            J0 = J
        elif eta_reached(J, J0, config.eta):
            result.stop_reason = "eta"
            return
        adam.ascend(params, grads)
        result.epochs = epoch + 1
    J = triplet_objective(forward(net, X), T, config.alpha)
    _check_finite(J, config.max_epochs)
    result.objective.append(J)


def _train_minibatch(net, X, T, config, adam, result):
    params = net.params()
    rng = np.random.default_rng(config.seed)
    T = T[rng.permutation(len(T))]
    n_val = max(1, int(round(config.validation_fraction * len(T))))
    if n_val >= len(T):
        raise ValueError("too few triplets for a validation split")
    val, fit = T[:n_val], T[n_val:]

    def evaluate():
        Y = forward(net, X)
        return (triplet_objective(Y, fit, config.alpha),
                triplet_objective(Y, val, config.alpha) / len(val))

    J0, best = evaluate()
    _check_finite(J0, 0)
    result.objective.append(J0)
    result.validation.append(best)
    stalled, annealed = 0, False
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(fit))
        for start in range(0, len(fit), config.batch_size):
            batch = fit[order[start:start + config.batch_size]]
            J, grads = objective_and_grad(net, X, batch, config.alpha)
            _check_finite(J, epoch, grads)
            adam.ascend(params, grads)
        result.epochs = epoch + 1
        J, v = evaluate()
        _check_finite(J, epoch + 1)
        result.objective.append(J)
        result.validation.append(v)
        if eta_reached(J, J0, config.eta):
            result.stop_reason = "eta"
            return
        if v > best:
            best, stalled = v, 0
            continue
        stalled += 1
        if stalled >= 2:
            result.stop_reason = "validation"
            return
        if not annealed:
            adam.lr *= 0.5
            annealed = True


# --------------------------------------------------------------------------
# checkpoints (diagnostic only)
# --------------------------------------------------------------------------

_CKPT = struct.Struct("<4sIII")
_CKPT_MAGIC = b"RPN1"
_CKPT_VERSION = 1


def save_checkpoint(net: RepNet, path: str | Path) -> None:
    D, d = net.input_dim, net.output_dim
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                    for a in (net.W1, net.b1, net.W2))
    Path(path).write_bytes(_CKPT.pack(_CKPT_MAGIC, _CKPT_VERSION, D, d) + body)


def load_checkpoint(path: str | Path) -> RepNet:
    blob = Path(path).read_bytes()
    magic, version, D, d = _CKPT.unpack_from(blob)
    if magic != _CKPT_MAGIC or version != _CKPT_VERSION:
        raise ValueError(f"{path}: not a version-{_CKPT_VERSION} checkpoint")
    flat = np.frombuffer(blob[_CKPT.size:], dtype="<f8")
    if flat.size != D * D + D + d * D:
        raise ValueError(f"{path}: truncated checkpoint")
    return RepNet(flat[:D * D].reshape(D, D).copy(), flat[D * D:D * D + D].copy(),
                  flat[D * D + D:].reshape(d, D).copy())

