"""Truncated-window backpropagation, clipping, and a finite-difference oracle."""

from dataclasses import dataclass

import numpy as np

from .cells import Gradients, Kind, forward_sequence
from .errors import ShapeError
from .linalg import log_softmax, softmax


@dataclass
class ClipPolicy:
    """Bounds on RNN pre-activations and on per-element gradients.

    Clipping is switched on per architecture family; by default only the
    vanilla RNN is clipped.
    """
    gradient_bound: float = 1.0
    activation_bound: float = 50.0
    clip_rnn: bool = True
    clip_lstm: bool = False

    def __post_init__(self):
        if self.clip_rnn or self.clip_lstm:
            if not self.gradient_bound > 0:
                raise ValueError(f"gradient_bound must be > 0, got {self.gradient_bound}")
        if self.clip_rnn and not self.activation_bound > 0:
            raise ValueError(f"activation_bound must be > 0, got {self.activation_bound}")

    def enabled_for(self, kind):
        return self.clip_lstm if Kind(kind) != Kind.RNN else self.clip_rnn

    def activation_bound_for(self, kind):
        if Kind(kind) == Kind.RNN and self.clip_rnn:
            return self.activation_bound
        return None

    @classmethod
    def disabled(cls):
        return cls(clip_rnn=False, clip_lstm=False)


def clip_gradients(g, policy, kind=Kind.RNN):
    """Element-wise clamp of a gradient to ±policy.gradient_bound."""
    if not policy.enabled_for(kind):
        return g
    out = g.copy()
    np.clip(out.flat, -policy.gradient_bound, policy.gradient_bound, out=out.flat)
    return out


def clip_activation(v, bound):
    if not bound > 0:
        raise ValueError(f"bound must be > 0, got {bound}")
    return np.clip(v, -bound, bound)


def _as_batch(a, ndim):
    """Insert a lane axis at position 1 when the caller ran unbatched."""
    return a if a.ndim == ndim else a[:, None]


def window_loss(Y, targets, mask):
    """Masked cross-entropy summed over a window of logits."""
    targets, mask = _targets_and_mask(Y, targets, mask)
    logp = log_softmax(Y)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    # stays in the logits' dtype so extended-precision callers keep their digits
    return -(picked * mask).sum()


def _targets_and_mask(Y, targets, mask):
    targets = np.asarray(targets)
    if targets.shape != Y.shape[:-1]:
        raise ShapeError(f"targets have shape {targets.shape}, outputs have {Y.shape[:-1]}")
    mask = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != targets.shape:
        raise ShapeError(f"mask has shape {mask.shape}, targets have {targets.shape}")
    # masked slots may hold placeholders such as -1
    return np.where(mask, targets, 0).astype(np.intp), mask


def backward_window(params, caches, targets, mask=None, activation_bound=None):
    """Gradient of the summed masked cross-entropy over one window.

    ``caches`` come from ``forward_sequence`` over the same window. No
    gradient flows into the state the window started from.
    Returns (Gradients, loss).
    """
    if len(caches) != len(np.asarray(targets)):
        raise ShapeError(f"{len(caches)} cached steps but {len(np.asarray(targets))} targets")
    Y = np.stack([c.y for c in caches])
    targets, mask = _targets_and_mask(Y, targets, mask)
    logp = log_softmax(Y)
    loss = float(-(np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0] * mask).sum())

    dY = softmax(Y)
    np.put_along_axis(dY, targets[..., None],
                      np.take_along_axis(dY, targets[..., None], axis=-1) - 1.0, axis=-1)
    dY *= mask[..., None]
    dY = _as_batch(dY, 3).astype(params.dtype, copy=False)

    grads = params.zeros_like(Gradients)
    if params.spec.is_lstm:
        _lstm_backward(params, caches, dY, grads)
    else:
        _rnn_backward(params, caches, dY, grads, activation_bound)
    return grads, loss


def _stack(caches, field):
    return _as_batch(np.stack([getattr(c, field) for c in caches]), 3)


def _outer_sum(d, a):
    """Σ_t,b d[t,b,:] ⊗ a[t,b,:] as a (d_dim × a_dim) matrix."""
    return d.reshape(-1, d.shape[-1]).T @ a.reshape(-1, a.shape[-1])


def _lstm_backward(params, caches, dY, grads):
    spec = params.spec
    n_c = spec.n_c
    X, REC = _stack(caches, "x"), _stack(caches, "rec_prev")
    C_prev, C = _stack(caches, "c_prev"), _stack(caches, "c")
    I, F, G, O, H, M = (_stack(caches, k) for k in "ifgohm")
    T, B = dY.shape[:2]

    grads["b_y"][...] = dY.sum(axis=(0, 1))
    if spec.kind == Kind.LSTM:
        grads["W_ym"][...] = _outer_sum(dY, M)
        dREC_out = dY @ params["W_ym"]
        dM_extra = None
    else:
        R = _stack(caches, "r")
        grads["W_yr"][...] = _outer_sum(dY, R)
        dREC_out = dY @ params["W_yr"]
        dM_extra = None
        if spec.kind == Kind.LSTM_RP_NP:
            P = _stack(caches, "p")
            grads["W_yp"][...] = _outer_sum(dY, P)
            dP = dY @ params["W_yp"]
            grads["W_pm"][...] = _outer_sum(dP, M)
            dM_extra = dP @ params["W_pm"]
        dR = np.empty_like(dREC_out)

    w_ic, w_fc, w_oc = params["w_ic"], params["w_fc"], params["w_oc"]
    gate_r = params.gate_r
    dA = np.empty((T, B, 4 * n_c), dtype=dY.dtype)
    drec_next = np.zeros_like(dREC_out[0])
    dc_next = np.zeros((B, n_c), dtype=dY.dtype)
    for t in range(T - 1, -1, -1):
        drec = dREC_out[t] + drec_next
        if spec.kind == Kind.LSTM:
            dm = drec
        else:
            dR[t] = drec
            dm = drec @ params["W_rm"]
            if dM_extra is not None:
                dm = dm + dM_extra[t]
        o, h = O[t], H[t]
        da_o = dm * h * o * (1.0 - o)
        dc = dm * o * (1.0 - h * h) + dc_next + da_o * w_oc
        i, f, g = I[t], F[t], G[t]
        da_i = dc * g * i * (1.0 - i)
        da_g = dc * i * (1.0 - g * g)
        da_f = dc * C_prev[t] * f * (1.0 - f)
        dA[t, :, :n_c] = da_i
        dA[t, :, n_c:2 * n_c] = da_f
        dA[t, :, 2 * n_c:3 * n_c] = da_g
        dA[t, :, 3 * n_c:] = da_o
        dc_next = dc * f + da_i * w_ic + da_f * w_fc
        drec_next = dA[t] @ gate_r

    grads.gate_x[...] = _outer_sum(dA, X)
    grads.gate_r[...] = _outer_sum(dA, REC)
    grads.gate_b[...] = dA.sum(axis=(0, 1))
    grads["w_ic"][...] = (dA[..., :n_c] * C_prev).sum(axis=(0, 1))
    grads["w_fc"][...] = (dA[..., n_c:2 * n_c] * C_prev).sum(axis=(0, 1))
    grads["w_oc"][...] = (dA[..., 3 * n_c:] * C).sum(axis=(0, 1))
    if spec.kind != Kind.LSTM:
        grads["W_rm"][...] = _outer_sum(dR, M)


def _rnn_backward(params, caches, dY, grads, activation_bound):
    X, HPREV = _stack(caches, "x"), _stack(caches, "rec_prev")
    H, A = _stack(caches, "h"), _stack(caches, "a")
    T = dY.shape[0]
    grads["W_yh"][...] = _outer_sum(dY, H)
    grads["b_y"][...] = dY.sum(axis=(0, 1))
    dH_out = dY @ params["W_yh"]
    dA = np.empty_like(dH_out)
    W_hh = params["W_hh"]
    dh_next = np.zeros_like(dH_out[0])
    for t in range(T - 1, -1, -1):
        h = H[t]
        da = (dH_out[t] + dh_next) * h * (1.0 - h)
        if activation_bound is not None:
            da = da * (np.abs(A[t]) <= activation_bound)
        dA[t] = da
        dh_next = da @ W_hh
    grads["W_hx"][...] = _outer_sum(dA, X)
    grads["W_hh"][...] = _outer_sum(dA, HPREV)
    grads["b_h"][...] = dA.sum(axis=(0, 1))


def finite_diff_grad(params, state, X, targets=None, mask=None, epsilon=1e-5,
                     activation_bound=None, loss_fn=None, dtype=np.longdouble):
    """Central-difference gradient of a window loss, one scalar at a time.

    The perturbed forward passes run in ``dtype`` (extended precision by
    default): with a loss of order 10 and epsilon = 1e-5, double-precision
    rounding alone would leave ~1e-10 absolute error per component.
    ``loss_fn`` maps the logits Y to a scalar; the default is the masked
    cross-entropy against ``targets``.
    """
    from .cells import CellState, ModelParams

    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if loss_fn is None:
        def loss_fn(Y):
            return window_loss(Y, targets, mask)
    probe = ModelParams(params.spec, params.flat.astype(dtype))
    state = CellState(np.asarray(state.c, dtype=dtype), np.asarray(state.rec, dtype=dtype))
    X = np.asarray(X, dtype=dtype)
    eps = dtype(epsilon)

    def loss():
        _, _, Y = forward_sequence(probe, state, X, activation_bound)
        return loss_fn(Y)

    out = params.zeros_like(Gradients)
    for k in range(probe.flat.size):
        saved = probe.flat[k]
        probe.flat[k] = saved + eps
        up = loss()
        probe.flat[k] = saved - eps
        down = loss()
        probe.flat[k] = saved
        out.flat[k] = (up - down) / (2 * eps)
    return out


def relative_error(analytic, numeric, floor=1e-8):
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


def gradient_check(spec, seed, steps=12, epsilon=1e-5, scale=0.5, perturb=None):
    """Compare analytic and numeric gradients on a random window.

    Inputs, incoming state, targets and weights are random draws from
    ``seed``; two frames are masked so the masking path is exercised.
    ``perturb`` names a block whose analytic gradient gets a deliberate
    offset (fault injection). Returns {block name: max relative error}.
    """
    from .cells import init_params, reset_state

    rng = np.random.default_rng(seed)
    params = init_params(spec, seed, scale=scale)
    for name, _, is_bias in params.layout:
        if is_bias:
            params[name][...] = rng.uniform(-scale, scale, params[name].shape)
    state = reset_state(spec)
    state.c[...] = rng.uniform(-1, 1, state.c.shape)
    state.rec[...] = rng.uniform(-1, 1, state.rec.shape)
    X = rng.normal(size=(steps, spec.n_i))
    targets = rng.integers(0, spec.n_o, size=steps)
    mask = np.ones(steps, dtype=bool)
    mask[rng.choice(steps, size=min(2, steps - 1), replace=False)] = False

    _, caches, _ = forward_sequence(params, state, X)
    analytic, _ = backward_window(params, caches, targets, mask)
    if perturb is not None:
        analytic[perturb][...] += 1e-3
    numeric = finite_diff_grad(params, state, X, targets, mask, epsilon)
    err = relative_error(analytic.flat, numeric.flat)
    return {name: float(err[slice(*analytic.span(name))].max()) for name in analytic.names}
