"""Matched-parameter architecture comparisons.

``matched_budget`` inverts the parameter-count formulas: given a template
(architecture family plus fixed input/output sizes and projection ratios)
and a weight budget, it returns the largest cell count that fits.
``compare_architectures`` trains one model per template on the same data
for the same number of training frames and tabulates the outcome.
"""

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cells import ArchSpec, Kind, forward_sequence, init_params, param_count, reset_state
from .errors import ConfigError, DivergenceError
from .grad import ClipPolicy, backward_window
from .train import LrSchedule, TrainConfig, sgd_step, train

# Learning rates found by sweeping each family on each synthetic task (see README).
TUNED_LR = {
    ("delayed-echo", Kind.RNN): 4.0,
    ("delayed-echo", Kind.LSTM): 2.0,
    ("delayed-echo", Kind.LSTM_RP): 2.0,
    ("delayed-echo", Kind.LSTM_RP_NP): 2.0,
    ("synthetic-frames", Kind.RNN): 0.1,
    ("synthetic-frames", Kind.LSTM): 0.1,
    ("synthetic-frames", Kind.LSTM_RP): 0.2,
    ("synthetic-frames", Kind.LSTM_RP_NP): 0.2,
}


def tuned_lr(task, kind):
    try:
        return TUNED_LR[(task, Kind(kind))]
    except KeyError:
        raise ConfigError(f"no tuned learning rate for task {task!r}, kind {kind}") from None


@dataclass(frozen=True)
class BudgetTemplate:
    """An architecture family with everything but the cell count fixed.

    ``rec_ratio`` and ``nonrec_ratio`` give n_r and n_p as fractions of
    n_c (rounded down, at least 1) for the projected variants.
    """
    kind: Kind
    n_i: int
    n_o: int
    rec_ratio: float = 0.25
    nonrec_ratio: float = 0.25

    def spec(self, n_c):
        kind = Kind(self.kind)
        n_r = max(1, int(n_c * self.rec_ratio)) if kind in (Kind.LSTM_RP, Kind.LSTM_RP_NP) else None
        n_p = max(1, int(n_c * self.nonrec_ratio)) if kind == Kind.LSTM_RP_NP else None
        return ArchSpec(kind, self.n_i, n_c, self.n_o, n_r, n_p)


def matched_budget(template, budget, include_biases=False):
    """Largest-n_c spec of ``template`` whose parameter count is <= ``budget``.

    The count grows with n_c (projection widths are nondecreasing in n_c),
    so a doubling search followed by bisection finds the boundary.
    """
    def fits(n_c):
        return param_count(template.spec(n_c), include_biases) <= budget

    if not fits(1):
        raise ConfigError(f"budget {budget} is below the smallest {Kind(template.kind).value} "
                          f"({param_count(template.spec(1), include_biases)} parameters)")
    lo, hi = 1, 2
    while fits(hi):
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return template.spec(lo)


@dataclass(frozen=True)
class CompareSettings:
    frame_budget: int
    task: str = "delayed-echo"
    lrs: dict = field(default_factory=dict)     # kind -> lr0, overriding TUNED_LR
    decay_factor: float = 0.5
    decay_interval: int = 20000
    clip: ClipPolicy = field(default_factory=ClipPolicy)
    t_bptt: int = 20
    lanes_per_worker: int = 8
    workers: int = 1
    output_delay: int = 0
    eval_interval: int = 500
    seed: int = 0
    init_scale: float = 0.1


@dataclass
class ComparisonRow:
    architecture: str
    params: int
    final_dev_accuracy: float
    steps: int
    wall_clock_sec: float
    outcome: str


@dataclass
class Comparison:
    rows: list
    curves: dict      # architecture name -> list of CurveRow

    def table(self, delimiter=","):
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["architecture", "params", "final_dev_accuracy", "steps", "wall_clock_sec", "outcome"])
        for r in self.rows:
            writer.writerow([r.architecture, r.params, f"{r.final_dev_accuracy:.6f}", r.steps,
                             f"{r.wall_clock_sec:.3f}", r.outcome])
        return buf.getvalue()


def frames_to_reach(curve, threshold):
    """Training frames seen at the first curve row with accuracy >= threshold."""
    for row in curve:
        if row.dev_frame_accuracy >= threshold:
            return row.frames_seen
    return None


def _train_config(spec, settings):
    lr0 = settings.lrs.get(Kind(spec.kind), None)
    if lr0 is None:
        lr0 = tuned_lr(settings.task, spec.kind)
    return TrainConfig(
        arch=spec, schedule=LrSchedule(lr0, settings.decay_factor, settings.decay_interval),
        clip=settings.clip, t_bptt=settings.t_bptt, lanes_per_worker=settings.lanes_per_worker,
        workers=settings.workers, output_delay=settings.output_delay, max_steps=2 ** 62,
        max_frames=settings.frame_budget, eval_interval=settings.eval_interval,
        seed=settings.seed, init_scale=settings.init_scale)


def compare_architectures(train_set, dev_set, budget, templates, settings, log=None):
    """Train every template at the matched budget on the same frame budget.

    A run whose loss goes non-finite is recorded with outcome
    ``diverged@<step>`` and the accuracy of its last curve row (NaN when
    it never reached an evaluation).
    """
    specs = [matched_budget(t, budget) for t in templates]
    rows, curves = [], {}
    for spec in specs:
        config = _train_config(spec, settings)
        try:
            result = train(config, train_set, dev_set)
            curve, steps, wall = result.curve, result.steps, result.wall_clock
            outcome = "completed"
        except DivergenceError as exc:
            curve = exc.curve or []
            steps, wall = exc.step, curve[-1].wall_clock_sec if curve else 0.0
            outcome = f"diverged@{exc.step}"
        final = curve[-1].dev_frame_accuracy if curve else math.nan
        rows.append(ComparisonRow(spec.name, param_count(spec), final, steps, wall, outcome))
        curves[spec.name] = curve
        if log is not None:
            log(f"{spec.name}: params={param_count(spec)} acc={final:.4f} steps={steps} {outcome}")
    return Comparison(rows, curves)



def measure_step_time(spec, t_bptt=20, lanes=8, repeats=5, seed=0):
    """Median wall-clock seconds of one training step (forward, backward, update).

    Inputs and targets are random; one untimed warm-up step runs first.
    """
    rng = np.random.default_rng(seed)
    params = init_params(spec, seed)
    X = rng.normal(size=(t_bptt, lanes, spec.n_i))
    targets = rng.integers(0, spec.n_o, size=(t_bptt, lanes))
    mask = np.ones((t_bptt, lanes), dtype=bool)
    times = []
    for k in range(repeats + 1):
        start = time.perf_counter()
        _, caches, _ = forward_sequence(params, reset_state(spec, lanes), X)
        g, _ = backward_window(params, caches, targets, mask)
        sgd_step(params, g, 1e-3, t_bptt * lanes)
        if k:
            times.append(time.perf_counter() - start)
    return float(np.median(times))
