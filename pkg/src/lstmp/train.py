"""Truncated-BPTT training with lane scheduling, synchronous or hogwild.

Each worker owns ``lanes_per_worker`` lanes. A lane is bound to one
utterance at a time and walks it in windows of at most ``t_bptt`` frames,
carrying its cell state from window to window. When its utterance runs
out the lane takes the next one and starts from a zero state. All lanes of
a worker are advanced together as one padded, masked batch, so every
update is a matrix-matrix forward/backward over the window.

``train_async`` runs several such workers in forked processes against one
parameter vector in shared memory. Updates are applied in place with no
lock around the step: a worker may read parameters that are halfway
through another worker's update. Each float64 store is a single aligned
write, so individual elements are never torn.
"""

import csv
import math
import multiprocessing as mp
import os
import queue as queue_mod
import time
import traceback
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .cells import ArchSpec, CellState, ModelParams, forward_sequence, init_params, reset_state, stack_states
from .errors import DivergenceError
from .evaluation import apply_output_delay, frame_accuracy
from .grad import ClipPolicy, backward_window, clip_gradients


@dataclass(frozen=True)
class LrSchedule:
    lr0: float
    decay_factor: float = 1.0
    decay_interval: int = 1000

    def __post_init__(self):
        if not 0 <= self.lr0 < math.inf:
            raise ValueError(f"lr0 must be finite and >= 0, got {self.lr0}")
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_interval < 1:
            raise ValueError(f"decay_interval must be >= 1, got {self.decay_interval}")


def lr_at(schedule, step):
    """lr0 · decay_factor^(step / decay_interval), with a real exponent."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    return schedule.lr0 * schedule.decay_factor ** (step / schedule.decay_interval)


@dataclass
class TrainConfig:
    arch: ArchSpec
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(0.1))
    clip: ClipPolicy = field(default_factory=ClipPolicy)
    t_bptt: int = 20
    lanes_per_worker: int = 8
    workers: int = 1
    output_delay: int = 5
    max_steps: int = 1000
    max_frames: Optional[int] = None
    eval_interval: int = 100
    seed: int = 0
    init_scale: float = 0.1
    forget_bias: float = 0.0
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("t_bptt", "lanes_per_worker", "workers", "eval_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.output_delay < 0:
            raise ValueError(f"output_delay must be >= 0, got {self.output_delay}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype}")


class CurveRow(NamedTuple):
    wall_clock_sec: float
    step: int
    frames_seen: int
    dev_frame_accuracy: float
    train_loss: float


CURVE_HEADER = list(CurveRow._fields)


def write_curve(rows, path):
    """Append rows to a learning-curve CSV, writing the header on a new file."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(CURVE_HEADER)
        for row in rows:
            writer.writerow([f"{row.wall_clock_sec:.3f}", row.step, row.frames_seen,
                             f"{row.dev_frame_accuracy:.6f}", f"{row.train_loss:.6f}"])


def read_curve(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [CurveRow(float(r["wall_clock_sec"]), int(r["step"]), int(r["frames_seen"]),
                         float(r["dev_frame_accuracy"]), float(r["train_loss"])) for r in reader]


@dataclass
class TrainResult:
    params: ModelParams
    curve: list
    steps: int
    frames_seen: int
    wall_clock: float


# ---------------------------------------------------------------------------
# lane scheduling

@dataclass
class Lane:
    utt_id: Optional[int] = None
    cursor: int = 0
    length: int = 0
    state: Optional[CellState] = None

    @property
    def active(self):
        return self.utt_id is not None and self.cursor < self.length


class Window(NamedTuple):
    lane: int
    utt_id: int
    start: int
    stop: int
    fresh: bool


class UtteranceCursor:
    """Hands out utterance ids from a fixed order, each once."""

    def __init__(self, order):
        self.order = list(order)
        self.pos = 0

    def next_id(self):
        if self.pos >= len(self.order):
            return None
        self.pos += 1
        return self.order[self.pos - 1]


class EpochCursor:
    """Endless cursor over one worker's share of the data.

    Every epoch shuffles all ids with (seed, epoch) and deals them
    round-robin to the workers, so shares are disjoint within an epoch.
    """

    def __init__(self, n_utterances, seed, worker=0, workers=1):
        if n_utterances < workers:
            raise ValueError(f"{n_utterances} utterances cannot be shared by {workers} workers")
        self.n, self.seed, self.worker, self.workers = n_utterances, seed, worker, workers
        self.epoch = -1
        self._current = UtteranceCursor([])

    def next_id(self):
        nxt = self._current.next_id()
        if nxt is None:
            self.epoch += 1
            order = np.random.default_rng([self.seed, self.epoch]).permutation(self.n)
            self._current = UtteranceCursor(order[self.worker::self.workers].tolist())
            nxt = self._current.next_id()
        return nxt


def advance_lanes(lanes, cursor, lengths, t_bptt, spec=None, dtype=np.float64):
    """Give every lane its next window of at most ``t_bptt`` frames.

    A lane whose utterance is finished pulls the next id from ``cursor``
    and, when ``spec`` is given, gets a fresh zero state. Lanes left
    without data are skipped; an empty result means the cursor is drained.
    """
    windows = []
    for k, lane in enumerate(lanes):
        fresh = False
        if not lane.active:
            nxt = cursor.next_id()
            if nxt is None:
                lane.utt_id = None
                continue
            lane.utt_id, lane.cursor, lane.length = nxt, 0, int(lengths[nxt])
            lane.state = reset_state(spec, dtype=dtype) if spec is not None else None
            fresh = True
        start = lane.cursor
        lane.cursor = min(start + t_bptt, lane.length)
        windows.append(Window(k, lane.utt_id, start, lane.cursor, fresh))
    return windows


def assemble_batch(windows, lanes, dataset, output_delay, dtype=np.float64, target_cache=None):
    """Pad the lanes' windows into (T, B, n_i) frames, targets, mask and state."""
    T = max(w.stop - w.start for w in windows)
    B = len(windows)
    X = np.zeros((T, B, dataset.n_i), dtype=dtype)
    targets = np.full((T, B), -1, dtype=np.int64)
    mask = np.zeros((T, B), dtype=bool)
    for b, w in enumerate(windows):
        n = w.stop - w.start
        utt = dataset[w.utt_id]
        X[:n, b] = utt.frames[w.start:w.stop]
        if target_cache is not None and w.utt_id in target_cache:
            tgt, m = target_cache[w.utt_id]
        else:
            tgt, m = apply_output_delay(utt.labels, output_delay)
            if target_cache is not None:
                target_cache[w.utt_id] = (tgt, m)
        targets[:n, b] = tgt[w.start:w.stop]
        mask[:n, b] = m[w.start:w.stop]
    state = stack_states([lanes[w.lane].state for w in windows])
    return X, targets, mask, state


def sgd_step(store, g, lr, frames):
    """θ ← θ − lr·g/frames, in place on the store's flat buffer."""
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    store.flat -= (lr / frames) * g.flat


# ---------------------------------------------------------------------------
# worker loop shared by the sync and async drivers

class _LocalProgress:
    def __init__(self, start_step, max_steps, max_frames):
        self.step = start_step
        self.end = start_step + max_steps
        self.max_frames = max_frames
        self.frames_seen = 0
        self._loss = 0.0
        self._targets = 0

    def claim(self):
        if self.step >= self.end or (self.max_frames is not None and self.frames_seen >= self.max_frames):
            return None
        self.step += 1
        return self.step - 1

    def record(self, loss, n_targets, n_frames):
        self.frames_seen += n_frames
        self._loss += loss
        self._targets += n_targets

    def take_loss(self):
        mean = self._loss / self._targets if self._targets else float("nan")
        self._loss, self._targets = 0.0, 0
        return mean

    def stop(self):
        self.end = self.step

    def completed(self):
        return self.step, self.frames_seen


class _SharedProgress(_LocalProgress):
    """Step/frame/loss counters in shared memory behind one lock."""

    def __init__(self, ctx, start_step, max_steps, max_frames):
        self.lock = ctx.Lock()
        self._vals = ctx.RawArray("d", 5)   # next step, frames, loss sum, targets, stop flag
        self._vals[0] = start_step
        self.end = start_step + max_steps
        self.max_frames = max_frames

    def claim(self):
        with self.lock:
            v = self._vals
            if v[4] or v[0] >= self.end or (self.max_frames is not None and v[1] >= self.max_frames):
                return None
            v[0] += 1
            return int(v[0]) - 1

    def record(self, loss, n_targets, n_frames):
        with self.lock:
            self._vals[1] += n_frames
            self._vals[2] += loss
            self._vals[3] += n_targets

    def take_loss(self):
        with self.lock:
            mean = self._vals[2] / self._vals[3] if self._vals[3] else float("nan")
            self._vals[2] = self._vals[3] = 0.0
        return mean

    def stop(self):
        self._vals[4] = 1.0

    @property
    def frames_seen(self):
        return int(self._vals[1])

    def completed(self):
        return int(self._vals[0]), int(self._vals[1])


def _evaluate(store, config, dev):
    if dev is None or len(dev) == 0:
        return float("nan")
    snapshot = store.copy()
    bound = config.clip.activation_bound_for(config.arch.kind)
    return frame_accuracy(snapshot, dev, config.output_delay, bound).accuracy


def _make_row(store, config, dev, progress, step, start_time):
    acc = _evaluate(store, config, dev)
    return CurveRow(time.perf_counter() - start_time, step, progress.frames_seen, acc, progress.take_loss())


def _run_worker(store, config, dataset, dev, worker, progress, emit, start_time, on_checkpoint=None):
    spec = config.arch
    dtype = store.dtype
    lengths = dataset.lengths
    cursor = EpochCursor(len(dataset), config.seed, worker, config.workers)
    lanes = [Lane() for _ in range(config.lanes_per_worker)]
    cache = {}
    act_bound = config.clip.activation_bound_for(spec.kind)
    clip_on = config.clip.enabled_for(spec.kind)
    while True:
        step = progress.claim()
        if step is None:
            return
        windows = advance_lanes(lanes, cursor, lengths, config.t_bptt, spec, dtype)
        X, targets, mask, state = assemble_batch(windows, lanes, dataset, config.output_delay, dtype, cache)
        with np.errstate(over="ignore", invalid="ignore"):   # non-finite results are caught below
            state_out, caches, _ = forward_sequence(store, state, X, act_bound)
            g, loss = backward_window(store, caches, targets, mask, act_bound)
        if not math.isfinite(loss):
            raise DivergenceError(step + 1)
        n_targets = int(mask.sum())
        if n_targets:
            g.flat *= 1.0 / n_targets
            if clip_on:
                g = clip_gradients(g, config.clip, spec.kind)
            sgd_step(store, g, lr_at(config.schedule, step), 1)
        for b, w in enumerate(windows):
            lanes[w.lane].state = CellState(state_out.c[b].copy(), state_out.rec[b].copy())
        progress.record(loss, n_targets, sum(w.stop - w.start for w in windows))
        if (step + 1) % config.eval_interval == 0:
            emit(_make_row(store, config, dev, progress, step + 1, start_time))
            if on_checkpoint is not None:
                on_checkpoint(store.copy(), step + 1)


def _initial_params(config, init):
    dtype = np.dtype(config.dtype)
    if init is not None:
        if init.spec != config.arch:
            raise ValueError(f"initial params are {init.spec.name}, config wants {config.arch.name}")
        return ModelParams(config.arch, init.flat.astype(dtype))
    return init_params(config.arch, config.seed, config.init_scale, config.forget_bias, dtype)


def _check_data(config, dataset):
    if dataset.n_i != config.arch.n_i or dataset.n_o > config.arch.n_o:
        raise ValueError(f"dataset (n_i={dataset.n_i}, n_o={dataset.n_o}) does not fit {config.arch.name} "
                         f"(n_i={config.arch.n_i}, n_o={config.arch.n_o})")
    if len(dataset) == 0:
        raise ValueError("training set is empty")


def _finish(store, config, dev, progress, rows, start_time):
    steps, frames = progress.completed()
    if steps and (not rows or rows[-1].step != steps):
        rows.append(_make_row(store, config, dev, progress, steps, start_time))
    return TrainResult(store, rows, steps, frames, time.perf_counter() - start_time)


def train_sync(config, dataset, dev=None, init=None, start_step=0, on_checkpoint=None):
    """Single-worker training; bit-for-bit reproducible for a given config."""
    _check_data(config, dataset)
    start = time.perf_counter()
    store = _initial_params(config, init)
    progress = _LocalProgress(start_step, config.max_steps, config.max_frames)
    rows = []
    sync_config = config if config.workers == 1 else _with_workers(config, 1)
    try:
        _run_worker(store, sync_config, dataset, dev, 0, progress, rows.append, start, on_checkpoint)
    except DivergenceError as exc:
        raise DivergenceError(exc.step, rows) from None
    return _finish(store, config, dev, progress, rows, start)


def _with_workers(config, workers):
    from dataclasses import replace
    return replace(config, workers=workers)


def _async_entry(store, config, dataset, dev, worker, progress, out, start, on_checkpoint):
    try:
        _run_worker(store, config, dataset, dev, worker, progress,
                    lambda row: out.put(("row", row)), start, on_checkpoint)
    except DivergenceError as exc:
        progress.stop()
        out.put(("diverged", exc.step))
    except BaseException:
        progress.stop()
        out.put(("error", traceback.format_exc()))
    finally:
        out.put(("done", worker))


def train_async(config, dataset, dev=None, init=None, start_step=0, on_checkpoint=None):
    """Hogwild training: ``config.workers`` processes share one parameter vector.

    Every worker trains on its own round-robin share of the utterances and
    applies its updates straight to shared memory. With one worker the
    result is bit-identical to ``train_sync``.
    """
    _check_data(config, dataset)
    start = time.perf_counter()
    ctx = mp.get_context("fork")
    initial = _initial_params(config, init)
    typecode = "d" if initial.dtype == np.float64 else "f"
    shared = ctx.RawArray(typecode, initial.flat.size)
    store = ModelParams(config.arch, np.frombuffer(shared, dtype=initial.dtype))
    store.flat[:] = initial.flat
    progress = _SharedProgress(ctx, start_step, config.max_steps, config.max_frames)
    out = ctx.Queue()
    procs = [ctx.Process(target=_async_entry,
                         args=(store, config, dataset, dev, w, progress, out, start, on_checkpoint),
                         daemon=True)
             for w in range(config.workers)]
    for p in procs:
        p.start()
    rows, diverged, errors, done = [], None, [], 0
    while done < len(procs):
        try:
            kind, payload = out.get(timeout=1.0)
        except queue_mod.Empty:
            if not any(p.is_alive() for p in procs):
                break
            continue
        if kind == "row":
            rows.append(payload)
        elif kind == "diverged":
            diverged = payload if diverged is None else min(diverged, payload)
        elif kind == "error":
            errors.append(payload)
        else:
            done += 1
    for p in procs:
        p.join()
    if errors:
        raise RuntimeError("async worker failed:\n" + errors[0])
    rows.sort(key=lambda r: r.step)
    if diverged is not None:
        raise DivergenceError(diverged, rows)
    result = _finish(store, config, dev, progress, rows, start)
    result.params = store.copy()
    return result


def train(config, dataset, dev=None, **kwargs):
    """Dispatch to the synchronous or the asynchronous driver."""
    if config.workers == 1:
        return train_sync(config, dataset, dev, **kwargs)
    return train_async(config, dataset, dev, **kwargs)
