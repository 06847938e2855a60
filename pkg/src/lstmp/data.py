"""Sequence datasets, the SEQD file format, and synthetic task generators.

SEQD layout (little-endian)::

    b"SEQD"  u32 version=1  u32 n_i  u32 n_o  u64 n_utterances
    per utterance: u64 T, T*n_i float32 (row-major), T int32 labels

Features are held as float32 in memory too, so a generated dataset and
its re-read copy are bit-identical.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (BadMagicError, LabelRangeError, TruncatedFileError,
                     VersionMismatchError)

SEQD_MAGIC = b"SEQD"
SEQD_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")
_LENGTH = struct.Struct("<Q")


@dataclass
class Utterance:
    frames: np.ndarray   # (T, n_i) float32
    labels: np.ndarray   # (T,) int32

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        if self.frames.ndim != 2 or self.labels.shape != (self.frames.shape[0],):
            raise ValueError(f"frames {self.frames.shape} and labels {self.labels.shape} disagree")
        if len(self.labels) < 1:
            raise ValueError("utterance must have at least one frame")

    def __len__(self):
        return len(self.labels)


@dataclass
class SequenceDataset:
    n_i: int
    n_o: int
    utterances: list
    provenance: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, utt in enumerate(self.utterances):
            if utt.frames.shape[1] != self.n_i:
                raise ValueError(f"utterance {k} has {utt.frames.shape[1]} features, dataset n_i={self.n_i}")
            if len(utt.labels) and (utt.labels.min() < 0 or utt.labels.max() >= self.n_o):
                raise LabelRangeError(f"utterance {k} has labels outside [0, {self.n_o})")

    def __len__(self):
        return len(self.utterances)

    def __getitem__(self, k):
        return self.utterances[k]

    @property
    def lengths(self):
        return [len(u) for u in self.utterances]

    @property
    def n_frames(self):
        return sum(self.lengths)

    def subset(self, ids, provenance=None):
        return SequenceDataset(self.n_i, self.n_o, [self.utterances[k] for k in ids],
                               provenance if provenance is not None else self.provenance,
                               dict(self.info))

    def stats(self):
        return {"utterances": len(self), "frames": self.n_frames, "n_i": self.n_i, "n_o": self.n_o}


def gen_delayed_echo(n_symbols, delay, n_utterances, length_range, seed):
    """One-hot symbol stream whose label at t is the symbol seen at t - delay.

    The first ``delay`` labels repeat the symbol at t = 0.
    """
    lo, hi = length_range
    if n_symbols < 2:
        raise ValueError(f"n_symbols must be >= 2, got {n_symbols}")
    if delay < 1:
        raise ValueError(f"delay must be >= 1, got {delay}")
    if lo < delay + 1 or hi < lo:
        raise ValueError(f"length range {length_range} must satisfy delay+1 <= min <= max")
    rng = np.random.default_rng(seed)
    eye = np.eye(n_symbols, dtype=np.float32)
    utts = []
    for _ in range(n_utterances):
        T = int(rng.integers(lo, hi + 1))
        symbols = rng.integers(0, n_symbols, size=T)
        labels = symbols[np.maximum(np.arange(T) - delay, 0)]
        utts.append(Utterance(eye[symbols], labels))
    return SequenceDataset(n_symbols, n_symbols, utts,
                           f"delayed-echo n_symbols={n_symbols} delay={delay} seed={seed}")


def _state_means(n_states, feature_dim, seed):
    return np.random.default_rng([seed, 1]).normal(size=(n_states, feature_dim))


def gen_synthetic_frames(n_phones, n_utterances, length_range, seed, noise=1.0,
                         states_per_phone=3, feature_dim=40, stay_prob=0.7):
    """Left-to-right HMM emitting Gaussian frames, one label per state.

    Each utterance is a random phone sequence; every phone walks through
    its ``states_per_phone`` states in order, each state lasting a
    geometric number of frames (self-loop probability ``stay_prob``). A
    frame is the state's fixed random mean plus isotropic noise. The
    emitted sequence is cut at a length drawn from ``length_range``.

    ``info["nearest_mean_accuracy"]`` records how well classifying each
    frame by its nearest state mean does: the task's context-free baseline.
    """
    lo, hi = length_range
    if n_phones < 2:
        raise ValueError(f"n_phones must be >= 2, got {n_phones}")
    if states_per_phone < 1 or feature_dim < 1 or not 0 <= stay_prob < 1:
        raise ValueError("states_per_phone and feature_dim must be >= 1, stay_prob in [0, 1)")
    if noise < 0 or lo < 1 or hi < lo:
        raise ValueError(f"invalid noise {noise} or length range {length_range}")
    n_states = n_phones * states_per_phone
    means = _state_means(n_states, feature_dim, seed)
    rng = np.random.default_rng([seed, 2])
    utts = []
    for _ in range(n_utterances):
        T = int(rng.integers(lo, hi + 1))
        labels = []
        while len(labels) < T:
            phone = int(rng.integers(n_phones))
            for s in range(states_per_phone):
                labels.extend([phone * states_per_phone + s] * int(rng.geometric(1 - stay_prob)))
        labels = np.asarray(labels[:T])
        frames = means[labels] + noise * rng.normal(size=(T, feature_dim))
        utts.append(Utterance(frames, labels))
    ds = SequenceDataset(feature_dim, n_states, utts,
                         f"synthetic-frames n_phones={n_phones} noise={noise} seed={seed}")
    ds.info["state_means"] = means
    ds.info["nearest_mean_accuracy"] = nearest_mean_accuracy(ds, means)
    return ds


def nearest_mean_accuracy(ds, means):
    """Frame accuracy of assigning each frame to the closest state mean."""
    correct = total = 0
    means = np.asarray(means, dtype=np.float64)
    sq = (means ** 2).sum(axis=1)
    for utt in ds.utterances:
        x = utt.frames.astype(np.float64)
        # argmin ||x - mu||^2 == argmin (|mu|^2 - 2 x·mu)
        pred = np.argmin(sq[None, :] - 2.0 * x @ means.T, axis=1)
        correct += int((pred == utt.labels).sum())
        total += len(utt)
    return correct / total if total else 0.0


def legal_transition(prev, nxt, states_per_phone=3):
    """True when a state change respects left-to-right phone topology."""
    if nxt == prev:
        return True
    if prev % states_per_phone == states_per_phone - 1:
        return nxt % states_per_phone == 0
    return nxt == prev + 1


def write_dataset(ds, path):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SEQD_MAGIC, SEQD_VERSION, ds.n_i, ds.n_o, len(ds)))
        for utt in ds.utterances:
            fh.write(_LENGTH.pack(len(utt)))
            fh.write(utt.frames.astype("<f4", copy=False).tobytes())
            fh.write(utt.labels.astype("<i4", copy=False).tobytes())


def read_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != SEQD_MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}, expected {SEQD_MAGIC!r}")
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path}: truncated header")
    _, version, n_i, n_o, count = _HEADER.unpack_from(blob, 0)
    if version != SEQD_VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {SEQD_VERSION}")
    pos = _HEADER.size
    utts = []
    for k in range(count):
        if pos + _LENGTH.size > len(blob):
            raise TruncatedFileError(f"{path}: truncated before utterance {k}")
        (T,) = _LENGTH.unpack_from(blob, pos)
        pos += _LENGTH.size
        need = T * n_i * 4 + T * 4
        if pos + need > len(blob):
            raise TruncatedFileError(f"{path}: utterance {k} needs {need} bytes, {len(blob) - pos} left")
        frames = np.frombuffer(blob, dtype="<f4", count=T * n_i, offset=pos).reshape(T, n_i)
        pos += T * n_i * 4
        labels = np.frombuffer(blob, dtype="<i4", count=T, offset=pos)
        pos += T * 4
        if T and (labels.min() < 0 or labels.max() >= n_o):
            raise LabelRangeError(f"{path}: utterance {k} has labels outside [0, {n_o})")
        utts.append(Utterance(frames.astype(np.float32), labels.astype(np.int32)))
    return SequenceDataset(n_i, n_o, utts, f"read from {path}")


def split_dataset(ds, dev_fraction, seed):
    """Utterance-level shuffled split into (train, dev)."""
    if not 0 < dev_fraction < 1:
        raise ValueError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    n_dev = int(round(dev_fraction * len(ds)))
    if n_dev == 0 or n_dev == len(ds):
        raise ValueError(f"dev_fraction {dev_fraction} on {len(ds)} utterances leaves one side empty")
    order = np.random.default_rng(seed).permutation(len(ds))
    dev_ids, train_ids = sorted(order[:n_dev].tolist()), sorted(order[n_dev:].tolist())
    train, dev = ds.subset(train_ids), ds.subset(dev_ids)
    train.info["ids"], dev.info["ids"] = train_ids, dev_ids
    return train, dev
