"""Frame-accuracy measurement."""

from dataclasses import dataclass

import numpy as np

from .cells import forward_sequence, reset_state
from .errors import ShapeError


@dataclass
class EvalReport:
    frames: int
    correct: int
    confusion: np.ndarray          # [target, prediction] counts
    predictions: list = None       # per-utterance argmax tracks, when requested

    @property
    def accuracy(self):
        return self.correct / self.frames if self.frames else 0.0

    def lines(self):
        return [f"frames={self.frames}", f"correct={self.correct}", f"accuracy={self.accuracy:.6f}"]


def apply_output_delay(labels, delay):
    """Targets shifted right by ``delay`` frames plus the mask of usable frames.

    Masked slots hold -1.
    """
    if delay < 0:
        raise ValueError(f"output delay must be >= 0, got {delay}")
    labels = np.asarray(labels)
    T = len(labels)
    targets = np.full(T, -1, dtype=np.int64)
    mask = np.zeros(T, dtype=bool)
    if delay < T:
        targets[delay:] = labels[:T - delay]
        mask[delay:] = True
    return targets, mask


def padded_batch(utterances, dtype=np.float64):
    """Stack utterances into (T_max, B, n_i) frames with a validity mask."""
    T = max(len(u) for u in utterances)
    n_i = utterances[0].frames.shape[1]
    X = np.zeros((T, len(utterances), n_i), dtype=dtype)
    valid = np.zeros((T, len(utterances)), dtype=bool)
    for b, utt in enumerate(utterances):
        X[:len(utt), b] = utt.frames
        valid[:len(utt), b] = True
    return X, valid


def sequence_logits(params, utterances, activation_bound=None, chunk=256):
    """Whole-sequence logits for each utterance, each run from a reset state.

    Utterances are processed as padded lanes, ``chunk`` at a time.
    """
    out = []
    for start in range(0, len(utterances), chunk):
        group = utterances[start:start + chunk]
        X, _ = padded_batch(group, params.dtype)
        state = reset_state(params.spec, len(group), params.dtype)
        _, _, Y = forward_sequence(params, state, X, activation_bound)
        out.extend(Y[:len(u), b] for b, u in enumerate(group))
    return out


def frame_accuracy(params, dataset, output_delay=0, activation_bound=None, keep_predictions=False):
    """Argmax frame accuracy against delay-adjusted labels.

    The first ``output_delay`` frames of every utterance have no target and
    are skipped. Ties in the argmax go to the lowest class index.
    """
    spec = params.spec
    if dataset.n_i != spec.n_i:
        raise ShapeError(f"dataset has n_i={dataset.n_i}, model {spec.name} expects n_i={spec.n_i}")
    if dataset.n_o > spec.n_o:
        raise ShapeError(f"dataset has n_o={dataset.n_o}, model {spec.name} has only {spec.n_o} outputs")
    confusion = np.zeros((spec.n_o, spec.n_o), dtype=np.int64)
    predictions = [] if keep_predictions else None
    if len(dataset):
        logits = sequence_logits(params, dataset.utterances, activation_bound)
        for utt, Y in zip(dataset.utterances, logits):
            pred = Y.argmax(axis=-1)
            targets, mask = apply_output_delay(utt.labels, output_delay)
            np.add.at(confusion, (targets[mask], pred[mask]), 1)
            if keep_predictions:
                predictions.append(pred)
    frames = int(confusion.sum())
    return EvalReport(frames, int(np.trace(confusion)), confusion, predictions)
