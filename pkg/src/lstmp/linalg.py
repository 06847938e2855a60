"""Dense vector/matrix helpers and elementwise nonlinearities.

Vectors and matrices are plain numpy arrays. Matrices are always stored
as (output_dim, input_dim), so ``affine(W, x, b)`` computes ``W @ x + b``.
Every function also accepts a leading batch axis on ``x`` (one row per
sequence lane), in which case the product is computed as ``x @ W.T``.
"""

import numpy as np

from .errors import ShapeError


def sigmoid(x):
    """Logistic function 1 / (1 + exp(-x)).

    Evaluated as 0.5 * (1 + tanh(x / 2)), which never overflows and is
    exactly symmetric: sigmoid(-x) == 1 - sigmoid(x).
    """
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def tanh_act(x):
    return np.tanh(x)


def affine(W, x, b=None):
    """Return W·x + b for a single vector or for each row of a batch."""
    W = np.asarray(W)
    x = np.asarray(x)
    if W.ndim != 2:
        raise ShapeError(f"affine: W must be a matrix, got shape {W.shape}")
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(
            f"affine: W has shape {W.shape} but x has shape {x.shape}; "
            f"x's last dim must be {W.shape[1]}")
    y = x @ W.T
    if b is not None:
        b = np.asarray(b)
        if b.shape != (W.shape[0],):
            raise ShapeError(
                f"affine: b has shape {b.shape}, expected ({W.shape[0]},) "
                f"to match W {W.shape}")
        y = y + b
    return y


def _floating(z):
    z = np.asarray(z)
    return z if np.issubdtype(z.dtype, np.floating) else z.astype(float)


def softmax(z):
    """Softmax along the last axis, with max subtraction."""
    z = _floating(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = _floating(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
