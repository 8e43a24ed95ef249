"""Diarization error rate, window/timeline conversion and the F-ratio diagnostic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ahc import Partition
from .data import Annotation, Recording, labels_to_annotation


@dataclass(frozen=True)
class DerBreakdown:
    missed: float
    false_alarm: float
    confusion: float
    scored: float
    mapping: tuple[tuple[str, str], ...] = ()

    @property
    def der(self) -> float:
        return (self.missed + self.false_alarm + self.confusion) / self.scored

    def format(self) -> str:
        return (f"missed={self.missed:.4f} false_alarm={self.false_alarm:.4f} "
                f"confusion={self.confusion:.4f} scored={self.scored:.4f} der={self.der:.4f}")


def partition_to_annotation(recording: Recording, partition: Partition | np.ndarray) -> Annotation:
    """Turn window labels into ``spk<k>`` turns (boundaries at overlap midpoints)."""
    labels = partition.labels if isinstance(partition, Partition) else np.asarray(partition)
    names = {k: f"spk{k}" for k in np.unique(labels).tolist()}
    return labels_to_annotation(recording.windows, labels.tolist(), names)


def _activity(annotation: Annotation, names: list[str], mids: np.ndarray) -> np.ndarray:
    act = np.zeros((len(names), mids.size), dtype=bool)
    index = {n: k for k, n in enumerate(names)}
    for t in annotation.turns:
        act[index[t.speaker]] |= (mids >= t.onset) & (mids < t.offset)
    return act


def der(reference: Annotation, hypothesis: Annotation, collar: float = 0.25,
        ignore_overlap: bool = True) -> DerBreakdown:
    """Diarization error rate under an optimal one-to-one speaker mapping.

    ``collar`` seconds on either side of every reference turn boundary are
    not scored; with ``ignore_overlap`` neither is any region where two or
    more reference speakers talk at once.
    """
    if not reference.turns:
        raise ValueError("nothing to score: empty reference")
    if collar < 0:
        raise ValueError("collar must be non-negative")
    ref_bounds = np.array([b for t in reference.turns for b in (t.onset, t.offset)])
    points = [ref_bounds, [b for t in hypothesis.turns for b in (t.onset, t.offset)]]
    if collar > 0:
        points += [ref_bounds - collar, ref_bounds + collar]
    edges = np.unique(np.concatenate([np.asarray(p, dtype=np.float64) for p in points]))
    dur = np.diff(edges)
    mids = edges[:-1] + 0.5 * dur

    ref_names, hyp_names = reference.speakers, hypothesis.speakers
    R = _activity(reference, ref_names, mids)
    H = _activity(hypothesis, hyp_names, mids)
    n_ref, n_hyp = R.sum(axis=0), H.sum(axis=0)

    scored = dur > 0
    if collar > 0:
        near = np.abs(mids[:, None] - ref_bounds[None, :]) < collar
        scored &= ~near.any(axis=1)
    if ignore_overlap:
        scored &= n_ref <= 1
    d = np.where(scored, dur, 0.0)

    overlap = (R * d) @ H.T.astype(float)
    if overlap.size:
        rows, cols = linear_sum_assignment(overlap, maximize=True)
    else:
        rows = cols = np.array([], dtype=int)
    correct = overlap[rows, cols].sum()
    mapping = tuple((ref_names[r], hyp_names[c]) for r, c in zip(rows, cols)
                    if overlap[r, c] > 0)

    total = float(np.sum(d * n_ref))
    if total <= 0:
        raise ValueError("nothing to score: no reference speech outside collars")
    return DerBreakdown(
        missed=float(np.sum(d * np.maximum(0, n_ref - n_hyp))),
        false_alarm=float(np.sum(d * np.maximum(0, n_hyp - n_ref))),
        confusion=float(np.sum(d * np.minimum(n_ref, n_hyp)) - correct),
        scored=total,
        mapping=mapping,
    )


def f_ratio(S, labels) -> float:
    """Between- to within-group variance of pairwise similarity scores.

    Scores ``s(i, j)`` for ``i < j`` are grouped by the unordered speaker pair
    of their endpoints (same-speaker pairs form their own groups). The ratio
    is the usual one-way decomposition: spread of the group means around the
    grand mean over spread of the scores around their group mean, both
    weighted by group size. Returns ``inf`` when every group is constant.
    """
    S = np.asarray(S, dtype=np.float64)
    labels = np.asarray(labels)
    speakers = np.unique(labels)
    if speakers.size < 2:
        raise ValueError("F-ratio needs at least two speakers")
    iu, ju = np.triu_indices(labels.size, 1)
    codes = np.searchsorted(speakers, labels)
    a, b = codes[iu], codes[ju]
    group = np.minimum(a, b) * speakers.size + np.maximum(a, b)
    s = S[iu, ju]
    _, inv, counts = np.unique(group, return_inverse=True, return_counts=True)
    means = np.bincount(inv, weights=s) / counts
    grand = s.mean()
    between = np.sum(counts * (means - grand) ** 2)
    within = np.sum((s - means[inv]) ** 2)
    if within <= 1e-15 * max(between, 1.0):
        return float("inf")
    return float(between / within)
