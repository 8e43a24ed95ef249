"""Recordings, speaker annotations, file formats and a synthetic generator."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

WINDOW_LENGTH = 1.5
WINDOW_HOP = 0.75

RAW_MAGIC = b"EMB1"
# magic, N_r, D, reserved
_RAW_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    """Raised when an input file does not follow its declared format."""


@dataclass(frozen=True)
class SegmentWindow:
    onset: float
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"window duration must be positive, got {self.duration}")
        if self.onset < 0:
            raise ValueError(f"window onset must be non-negative, got {self.onset}")

    @property
    def offset(self) -> float:
        return self.onset + self.duration

    @property
    def midpoint(self) -> float:
        return self.onset + 0.5 * self.duration


def make_windows(n: int, length: float = WINDOW_LENGTH, hop: float = WINDOW_HOP,
                 start: float = 0.0) -> tuple[SegmentWindow, ...]:
    """Fixed-stride window grid of ``n`` windows."""
    return tuple(SegmentWindow(start + i * hop, length) for i in range(n))


@dataclass(frozen=True)
class Recording:
    """One recording: ordered segment windows and one embedding row per window."""

    id: str
    windows: tuple[SegmentWindow, ...]
    embeddings: np.ndarray

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise ValueError("embeddings must be a 2-D matrix")
        windows = tuple(self.windows)
        if emb.shape[0] != len(windows):
            raise ValueError(
                f"{emb.shape[0]} embedding rows but {len(windows)} windows")
        if emb.shape[0] < 2 or emb.shape[1] < 2:
            raise ValueError(f"recording needs N_r >= 2 and D >= 2, got {emb.shape}")
        zero = np.flatnonzero(~np.any(emb != 0, axis=1))
        if zero.size:
            raise ValueError(f"embedding row {zero[0]} is all zeros")
        onsets = [w.onset for w in windows]
        if any(b < a for a, b in zip(onsets, onsets[1:])):
            raise ValueError("windows must be sorted by onset")
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "windows", windows)

    @property
    def num_windows(self) -> int:
        return len(self.windows)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


class Turn(NamedTuple):
    speaker: str
    onset: float
    duration: float

    @property
    def offset(self) -> float:
        return self.onset + self.duration


@dataclass(frozen=True)
class Annotation:
    turns: tuple[Turn, ...] = ()

    def __post_init__(self):
        turns = tuple(Turn(str(s), float(o), float(d)) for s, o, d in self.turns)
        by_speaker: dict[str, list[Turn]] = {}
        for t in turns:
            if not t.duration > 0:
                raise ValueError(f"turn duration must be positive: {t}")
            by_speaker.setdefault(t.speaker, []).append(t)
        for spk, ts in by_speaker.items():
            ts = sorted(ts, key=lambda t: t.onset)
            for a, b in zip(ts, ts[1:]):
                if b.onset < a.offset - 1e-9:
                    raise ValueError(f"turns of speaker {spk!r} overlap at {b.onset:.3f}")
        object.__setattr__(self, "turns", turns)

    @property
    def speakers(self) -> list[str]:
        return sorted({t.speaker for t in self.turns})

    def __len__(self) -> int:
        return len(self.turns)


@dataclass(frozen=True)
class SynthConfig:
    num_speakers: int = 3
    dim: int = 16
    mean_separation: float = 10.0
    within_std: float = 1.0
    expected_turn_windows: float = 8.0
    total_windows: int = 300
    seed: int = 0
    window_length: float = WINDOW_LENGTH
    window_hop: float = WINDOW_HOP

    def __post_init__(self):
        if self.num_speakers < 1:
            raise ValueError("num_speakers must be >= 1")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.total_windows < max(self.num_speakers, 2):
            raise ValueError("total_windows must be >= num_speakers (and >= 2)")
        if not (self.mean_separation > 0 and self.within_std > 0):
            raise ValueError("mean_separation and within_std must be positive")
        if not self.expected_turn_windows >= 1:
            raise ValueError("expected_turn_windows must be >= 1")
        if not (self.window_length > 0 and self.window_hop > 0):
            raise ValueError("window length and hop must be positive")


# --------------------------------------------------------------------------
# embeddings
# --------------------------------------------------------------------------

def load_embeddings(path: str | Path, format: str = "csv") -> np.ndarray:
    """Read an ``N_r x D`` embedding matrix from a CSV or raw binary file.

    The raw format is a 16-byte little-endian header (``b"EMB1"``, u32 rows,
    u32 columns, u32 reserved) followed by row-major float32 values.
    """
    path = Path(path)
    if format == "csv":
        return _load_csv(path)
    if format in ("raw", "raw-binary", "bin"):
        return _load_raw(path)
    raise ValueError(f"unknown embedding format {format!r}")


def _load_csv(path: Path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(v) for v in line.split(",")]
            except ValueError as e:
                raise FormatError(f"{path}: row {lineno}: {e}") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(
                    f"{path}: row {lineno} has width {len(row)}, expected {width}")
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no embeddings found")
    return np.asarray(rows, dtype=np.float64)


def _load_raw(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise FormatError(f"{path}: file too short for header")
    magic, n, d, _ = _RAW_HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if n == 0 or d == 0:
        raise FormatError(f"{path}: empty matrix ({n}x{d})")
    payload = blob[_RAW_HEADER.size:]
    if len(payload) != 4 * n * d:
        raise FormatError(
            f"{path}: expected {4 * n * d} payload bytes for {n}x{d}, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)


def save_embeddings(path: str | Path, X: np.ndarray, format: str = "csv") -> None:
    X = np.asarray(X, dtype=np.float64)
    path = Path(path)
    if format == "csv":
        with open(path, "w") as fh:
            for row in X:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif format in ("raw", "raw-binary", "bin"):
        n, d = X.shape
        path.write_bytes(_RAW_HEADER.pack(RAW_MAGIC, n, d, 0)
                         + X.astype("<f4").tobytes())
    else:
        raise ValueError(f"unknown embedding format {format!r}")


# --------------------------------------------------------------------------
# segments (one "onset duration" pair per line)
# --------------------------------------------------------------------------

def load_segments(path: str | Path) -> tuple[SegmentWindow, ...]:
    windows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise FormatError(f"{path}: line {lineno}: expected 'onset duration'")
            try:
                windows.append(SegmentWindow(float(fields[0]), float(fields[1])))
            except ValueError as e:
                raise FormatError(f"{path}: line {lineno}: {e}") from None
    return tuple(windows)


def save_segments(path: str | Path, windows: Sequence[SegmentWindow]) -> None:
    with open(path, "w") as fh:
        for w in windows:
            fh.write(f"{w.onset:.3f} {w.duration:.3f}\n")


# --------------------------------------------------------------------------
# RTTM
# --------------------------------------------------------------------------

def format_rttm(annotation: Annotation, recording_id: str) -> str:
    return "".join(
        f"SPEAKER {recording_id} 1 {t.onset:.3f} {t.duration:.3f} <NA> <NA> {t.speaker} <NA> <NA>\n"
        for t in annotation.turns)


def write_rttm(annotation: Annotation, recording_id: str, path: str | Path) -> None:
    Path(path).write_text(format_rttm(annotation, recording_id))


def load_rttm(path: str | Path, recording_id: str | None = None) -> Annotation:
    """Parse SPEAKER lines of an RTTM file, optionally keeping one recording."""
    turns = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if fields[0] != "SPEAKER":
                log.warning("%s:%d: skipping non-SPEAKER line", path, lineno)
                continue
            if len(fields) < 9:
                raise FormatError(f"{path}: line {lineno}: expected >= 9 fields")
            if recording_id is not None and fields[1] != recording_id:
                continue
            try:
                onset, dur = float(fields[3]), float(fields[4])
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: bad onset/duration") from None
            turns.append(Turn(fields[7], onset, dur))
    return Annotation(tuple(turns))


# --------------------------------------------------------------------------
# window labels <-> turns
# --------------------------------------------------------------------------

def labels_to_annotation(windows: Sequence[SegmentWindow], labels: Sequence,
                         names: dict | None = None) -> Annotation:
    """Merge runs of equally-labelled windows into turns.

    The boundary between two adjacent windows is the midpoint between the
    onset of the later window and the offset of the earlier one.
    """
    labels = list(labels)
    if len(labels) != len(windows):
        raise ValueError(f"{len(labels)} labels for {len(windows)} windows")
    if not labels:
        return Annotation()
    cuts = [0.5 * (windows[i + 1].onset + windows[i].offset)
            for i in range(len(windows) - 1)]
    turns = []
    start = windows[0].onset
    for i in range(len(labels)):
        last = i == len(labels) - 1
        if last or labels[i + 1] != labels[i]:
            end = windows[-1].offset if last else cuts[i]
            name = names[labels[i]] if names else str(labels[i])
            turns.append(Turn(name, start, end - start))
            start = end
    return Annotation(tuple(turns))


def annotation_to_labels(windows: Sequence[SegmentWindow], annotation: Annotation,
                         missing=None) -> list:
    """Label each window with the speaker whose turn covers its midpoint."""
    out = []
    turns = sorted(annotation.turns, key=lambda t: t.onset)
    for w in windows:
        m = w.midpoint
        hit = [t.speaker for t in turns if t.onset <= m < t.offset]
        out.append(hit[0] if hit else missing)
    return out


# --------------------------------------------------------------------------
# synthetic recordings
# --------------------------------------------------------------------------

def synth_recording(config: SynthConfig, recording_id: str | None = None,
                    ) -> tuple[Recording, Annotation]:
    """Gaussian speakers with a geometric turn-taking process.

    Returns the recording and its ground-truth annotation. Speaker ``k``
    is named ``"S<k>"``.
    """
    rng = np.random.default_rng(config.seed)
    n_spk, dim, n = config.num_speakers, config.dim, config.total_windows

    means = rng.standard_normal((n_spk, dim))
    means *= config.mean_separation / np.linalg.norm(means, axis=1, keepdims=True)
    if n_spk > 1:
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        min_dist = dist[np.triu_indices(n_spk, 1)].min()
        means *= config.mean_separation / min_dist

    labels = np.empty(n, dtype=int)
    p_end = 1.0 / config.expected_turn_windows
    spk = int(rng.integers(n_spk))
    i = 0
    while i < n:
        length = int(rng.geometric(p_end))
        labels[i:i + length] = spk
        i += length
        if n_spk > 1:
            spk = int((spk + 1 + rng.integers(n_spk - 1)) % n_spk)

    X = means[labels] + config.within_std * rng.standard_normal((n, dim))
    windows = make_windows(n, config.window_length, config.window_hop)
    rec = Recording(recording_id or f"synth{config.seed}", windows, X)
    ref = labels_to_annotation(windows, labels, {k: f"S{k}" for k in range(n_spk)})
    return rec, ref


def synth_labels(recording: Recording, annotation: Annotation) -> np.ndarray:
    """Integer window labels recovered from a synthetic ground-truth annotation."""
    names = annotation_to_labels(recording.windows, annotation)
    order = {name: k for k, name in enumerate(dict.fromkeys(names))}
    return np.array([order[name] for name in names])
