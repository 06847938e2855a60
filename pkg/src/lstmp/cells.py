"""Recurrent architectures: vanilla RNN, LSTM, and projected LSTM variants.

All four kinds share one parameter container backed by a single flat
buffer. Each named block (``W_ix``, ``w_ic``, ``b_y`` ...) is a view into
that buffer, so an SGD update, a checkpoint, or a shared-memory store only
ever deals with one array.

Naming follows ``W_<dest><src>``: ``W_ix`` maps input x to the input gate,
``W_ir`` maps the recurrent projection r to the input gate, ``W_rm`` maps
cell outputs m to the recurrent projection. Peepholes are per-cell vectors
``w_ic``, ``w_fc``, ``w_oc`` applied element-wise.

Gate blocks for input, forget, cell-input and output are laid out
contiguously in that order, so ``gate_x`` (4·n_c × n_i), ``gate_r``
(4·n_c × n_rec) and ``gate_b`` (4·n_c) are also views and each step needs
two matrix products instead of eight.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ShapeError
from .linalg import sigmoid


class Kind(str, Enum):
    RNN = "RNN"
    LSTM = "LSTM"
    LSTM_RP = "LSTM_RP"
    LSTM_RP_NP = "LSTM_RP_NP"

    def __str__(self):
        return self.value


KIND_CODES = {Kind.RNN: 0, Kind.LSTM: 1, Kind.LSTM_RP: 2, Kind.LSTM_RP_NP: 3}


@dataclass(frozen=True)
class ArchSpec:
    kind: Kind
    n_i: int
    n_c: int
    n_o: int
    n_r: Optional[int] = None
    n_p: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        for name in ("n_i", "n_c", "n_o"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        projected = self.kind in (Kind.LSTM_RP, Kind.LSTM_RP_NP)
        if projected != (self.n_r is not None):
            raise ValueError(f"n_r must be given exactly for projected kinds ({self.kind})")
        if (self.kind == Kind.LSTM_RP_NP) != (self.n_p is not None):
            raise ValueError(f"n_p must be given exactly for LSTM_RP_NP ({self.kind})")
        if self.n_r is not None and self.n_r < 1:
            raise ValueError(f"n_r must be >= 1, got {self.n_r}")
        if self.n_p is not None and self.n_p < 1:
            raise ValueError(f"n_p must be >= 1, got {self.n_p}")

    @property
    def is_lstm(self):
        return self.kind != Kind.RNN

    @property
    def rec_dim(self):
        """Width of the signal fed back to the next step."""
        return self.n_r if self.n_r is not None else self.n_c

    @property
    def name(self):
        parts = [f"{self.kind}_c{self.n_c}"]
        if self.n_r is not None:
            parts.append(f"r{self.n_r}")
        if self.n_p is not None:
            parts.append(f"p{self.n_p}")
        return "_".join(parts)


def param_layout(spec):
    """Ordered (name, shape, is_bias) triples describing the flat buffer."""
    n_i, n_c, n_o = spec.n_i, spec.n_c, spec.n_o
    if spec.kind == Kind.RNN:
        return [
            ("W_hx", (n_c, n_i), False),
            ("W_hh", (n_c, n_c), False),
            ("W_yh", (n_o, n_c), False),
            ("b_h", (n_c,), True),
            ("b_y", (n_o,), True),
        ]
    src = "m" if spec.kind == Kind.LSTM else "r"
    n_rec = spec.rec_dim
    layout = [(f"W_{g}x", (n_c, n_i), False) for g in "ifco"]
    layout += [(f"W_{g}{src}", (n_c, n_rec), False) for g in "ifco"]
    layout += [("w_ic", (n_c,), False), ("w_fc", (n_c,), False), ("w_oc", (n_c,), False)]
    if spec.kind == Kind.LSTM:
        layout.append(("W_ym", (n_o, n_c), False))
    else:
        layout.append(("W_rm", (spec.n_r, n_c), False))
        if spec.kind == Kind.LSTM_RP_NP:
            layout.append(("W_pm", (spec.n_p, n_c), False))
        layout.append(("W_yr", (n_o, spec.n_r), False))
        if spec.kind == Kind.LSTM_RP_NP:
            layout.append(("W_yp", (n_o, spec.n_p), False))
    layout += [(f"b_{g}", (n_c,), True) for g in "ifco"]
    layout.append(("b_y", (n_o,), True))
    return layout


class ParamBlocks:
    """Named views over one flat array laid out by ``param_layout``."""

    def __init__(self, spec, flat=None, dtype=np.float64):
        self.spec = spec
        self.layout = param_layout(spec)
        size = sum(int(np.prod(shape)) for _, shape, _ in self.layout)
        if flat is None:
            flat = np.zeros(size, dtype=dtype)
        if flat.ndim != 1 or flat.size != size:
            raise ShapeError(f"flat buffer has shape {flat.shape}, layout for {spec.name} needs ({size},)")
        self.flat = flat
        self.blocks = {}
        self._offsets = {}
        offset = 0
        for name, shape, _ in self.layout:
            n = int(np.prod(shape))
            self.blocks[name] = flat[offset:offset + n].reshape(shape)
            self._offsets[name] = (offset, offset + n)
            offset += n
        if spec.is_lstm:
            n_c = spec.n_c
            first_x = self._offsets["W_ix"][0]
            first_r = self._offsets[self.names[4]][0]
            first_b = self._offsets["b_i"][0]
            self.gate_x = flat[first_x:first_x + 4 * n_c * spec.n_i].reshape(4 * n_c, spec.n_i)
            self.gate_r = flat[first_r:first_r + 4 * n_c * spec.rec_dim].reshape(4 * n_c, spec.rec_dim)
            self.gate_b = flat[first_b:first_b + 4 * n_c]

    @property
    def names(self):
        return [name for name, _, _ in self.layout]

    @property
    def dtype(self):
        return self.flat.dtype

    def __getitem__(self, name):
        return self.blocks[name]

    def __contains__(self, name):
        return name in self.blocks

    def items(self):
        return self.blocks.items()

    def span(self, name):
        """(start, stop) of a block inside ``flat``."""
        return self._offsets[name]

    def count(self, include_biases=False):
        return sum(int(np.prod(shape)) for _, shape, is_bias in self.layout
                   if include_biases or not is_bias)

    def copy(self):
        return type(self)(self.spec, self.flat.copy())

    def zeros_like(self, cls=None):
        return (cls or type(self))(self.spec, np.zeros_like(self.flat))

    def __repr__(self):
        return f"{type(self).__name__}({self.spec.name}, {self.flat.size} scalars)"


class ModelParams(ParamBlocks):
    pass


class Gradients(ParamBlocks):
    pass


def param_count(spec, include_biases=False):
    """Closed-form number of scalars in an architecture."""
    n_i, n_c, n_o, n_r, n_p = spec.n_i, spec.n_c, spec.n_o, spec.n_r, spec.n_p
    if spec.kind == Kind.RNN:
        count = n_c * n_c + n_i * n_c + n_c * n_o
        bias = n_c + n_o
    elif spec.kind == Kind.LSTM:
        count = 4 * n_c * n_c + 4 * n_i * n_c + n_c * n_o + 3 * n_c
        bias = 4 * n_c + n_o
    elif spec.kind == Kind.LSTM_RP:
        count = 4 * n_c * n_r + 4 * n_i * n_c + n_r * n_o + n_c * n_r + 3 * n_c
        bias = 4 * n_c + n_o
    else:
        count = (4 * n_c * n_r + 4 * n_i * n_c + (n_r + n_p) * n_o
                 + n_c * (n_r + n_p) + 3 * n_c)
        bias = 4 * n_c + n_o
    return count + bias if include_biases else count


def init_params(spec, seed, scale=0.1, forget_bias=0.0, dtype=np.float64):
    """Uniform [-scale, scale] weights from PCG64(seed); zero biases.

    ``forget_bias`` optionally sets b_f to a constant (off by default).
    """
    if not scale > 0:
        raise ValueError(f"init scale must be > 0, got {scale}")
    params = ModelParams(spec, dtype=dtype)
    rng = np.random.Generator(np.random.PCG64(seed))
    for name, shape, is_bias in params.layout:
        if not is_bias:
            params[name][...] = rng.uniform(-scale, scale, size=shape)
    if spec.is_lstm and forget_bias:
        params["b_f"][...] = forget_bias
    return params


@dataclass
class CellState:
    """Recurrent carry-over. ``rec`` is m (LSTM), r (projected) or h (RNN).

    Arrays are either 1-D (one sequence) or 2-D with one row per lane.
    The RNN has no cell, so its ``c`` has zero width.
    """
    c: np.ndarray
    rec: np.ndarray

    def copy(self):
        return CellState(self.c.copy(), self.rec.copy())

    def rows(self, index):
        return CellState(self.c[index], self.rec[index])


def reset_state(spec, batch=None, dtype=np.float64):
    lead = () if batch is None else (batch,)
    n_cell = spec.n_c if spec.is_lstm else 0
    return CellState(np.zeros(lead + (n_cell,), dtype=dtype),
                     np.zeros(lead + (spec.rec_dim,), dtype=dtype))


def stack_states(states):
    return CellState(np.stack([s.c for s in states]), np.stack([s.rec for s in states]))


@dataclass
class StepCache:
    x: np.ndarray
    rec_prev: np.ndarray
    y: np.ndarray
    c_prev: Optional[np.ndarray] = None
    i: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    o: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None     # tanh(c) for LSTMs, hidden activation for the RNN
    m: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None     # RNN pre-activation before clipping
    extra: dict = field(default_factory=dict)


def _check_step_shapes(params, state, x):
    spec = params.spec
    x = np.asarray(x)
    if x.shape[-1] != spec.n_i:
        raise ShapeError(f"{spec.name}: input has shape {x.shape}, expected last dim n_i={spec.n_i}")
    if state.rec.shape[-1] != spec.rec_dim:
        raise ShapeError(f"{spec.name}: recurrent state has shape {state.rec.shape}, "
                         f"expected last dim {spec.rec_dim}")
    n_cell = spec.n_c if spec.is_lstm else 0
    if state.c.shape[-1] != n_cell:
        raise ShapeError(f"{spec.name}: cell state has shape {state.c.shape}, expected last dim {n_cell}")
    if state.rec.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"{spec.name}: state batch shape {state.rec.shape[:-1]} "
                         f"does not match input batch shape {x.shape[:-1]}")
    return x


def _lstm_step(params, state, x):
    spec = params.spec
    n_c = spec.n_c
    c_prev, rec_prev = state.c, state.rec
    pre = x @ params.gate_x.T + rec_prev @ params.gate_r.T + params.gate_b
    i = sigmoid(pre[..., :n_c] + params["w_ic"] * c_prev)
    f = sigmoid(pre[..., n_c:2 * n_c] + params["w_fc"] * c_prev)
    g = np.tanh(pre[..., 2 * n_c:3 * n_c])
    c = f * c_prev + i * g
    # the output gate peeks at the updated cell
    o = sigmoid(pre[..., 3 * n_c:] + params["w_oc"] * c)
    h = np.tanh(c)
    m = o * h
    r = p = None
    if spec.kind == Kind.LSTM:
        rec = m
        y = m @ params["W_ym"].T + params["b_y"]
    else:
        r = m @ params["W_rm"].T
        rec = r
        y = r @ params["W_yr"].T + params["b_y"]
        if spec.kind == Kind.LSTM_RP_NP:
            p = m @ params["W_pm"].T
            y = y + p @ params["W_yp"].T
    cache = StepCache(x=x, rec_prev=rec_prev, y=y, c_prev=c_prev,
                      i=i, f=f, g=g, c=c, o=o, h=h, m=m, r=r, p=p)
    return CellState(c, rec), cache


def _rnn_step(params, state, x, activation_bound):
    a = x @ params["W_hx"].T + state.rec @ params["W_hh"].T + params["b_h"]
    clipped = a if activation_bound is None else np.clip(a, -activation_bound, activation_bound)
    h = sigmoid(clipped)
    y = h @ params["W_yh"].T + params["b_y"]
    cache = StepCache(x=x, rec_prev=state.rec, y=y, h=h, a=a)
    return CellState(state.c, h), cache


def forward_step(params, state, x, activation_bound=None):
    """Advance one time step; returns (new_state, cache).

    ``activation_bound`` clamps RNN pre-activations and is ignored by the
    LSTM kinds, whose gating keeps activations bounded.
    """
    x = _check_step_shapes(params, state, x)
    if params.spec.is_lstm:
        return _lstm_step(params, state, x)
    return _rnn_step(params, state, x, activation_bound)


def forward_sequence(params, state, X, activation_bound=None):
    """Fold forward_step over the leading time axis of X.

    X is (T, n_i) or (T, lanes, n_i). Returns (final_state, caches, Y) with
    Y holding the T output logit vectors.
    """
    X = np.asarray(X)
    if X.ndim < 2 or X.shape[0] < 1:
        raise ShapeError(f"forward_sequence needs at least one frame, got shape {X.shape}")
    _check_step_shapes(params, state, X[0])
    caches = []
    for t in range(X.shape[0]):
        if params.spec.is_lstm:
            state, cache = _lstm_step(params, state, X[t])
        else:
            state, cache = _rnn_step(params, state, X[t], activation_bound)
        caches.append(cache)
    Y = np.stack([cache.y for cache in caches])
    return state, caches, Y
