"""``lstmp`` command line: gen, train, eval, gradcheck, params, compare.

Exit codes: 0 success, 1 usage error, 2 invalid input or configuration,
3 numerical failure (divergence or a failed gradient check).
"""

import argparse
import os
import sys

from .cells import ArchSpec, Kind, init_params, param_count, param_layout
from .checkpoint import load_checkpoint, save_checkpoint
from .compare import BudgetTemplate, CompareSettings, compare_architectures
from .config import RunConfig, build_train_config, format_config, load_config, parse_pairs
from .data import gen_delayed_echo, gen_synthetic_frames, read_dataset, split_dataset, write_dataset
from .errors import ConfigError, DivergenceError, FormatError, ShapeError
from .evaluation import frame_accuracy
from .grad import ClipPolicy, gradient_check
from .train import train, write_curve

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _add_arch_flags(p, defaults=(None, None, None)):
    n_i, n_c, n_o = defaults
    p.add_argument("--kind", type=str.upper, choices=[k.value for k in Kind], default="LSTM")
    p.add_argument("--n-i", type=int, default=n_i, required=n_i is None)
    p.add_argument("--n-c", type=int, default=n_c, required=n_c is None)
    p.add_argument("--n-o", type=int, default=n_o, required=n_o is None)
    p.add_argument("--n-r", type=int)
    p.add_argument("--n-p", type=int)


def _spec_from_args(args, kind=None):
    kind = Kind(kind or args.kind)
    n_r = args.n_r if kind in (Kind.LSTM_RP, Kind.LSTM_RP_NP) else None
    n_p = args.n_p if kind == Kind.LSTM_RP_NP else None
    return ArchSpec(kind, args.n_i, args.n_c, args.n_o, n_r, n_p)


# ---------------------------------------------------------------------------

def cmd_gen(args):
    if args.min_len > args.max_len:
        raise ConfigError(f"--min-len {args.min_len} exceeds --max-len {args.max_len}")
    if args.generator == "delayed-echo":
        ds = gen_delayed_echo(args.n_symbols, args.delay, args.utterances,
                              (args.min_len, args.max_len), args.seed)
    else:
        ds = gen_synthetic_frames(args.phones, args.utterances, (args.min_len, args.max_len), args.seed,
                                  noise=args.noise, states_per_phone=args.states_per_phone,
                                  feature_dim=args.feature_dim)
    write_dataset(ds, args.out)
    for key, value in ds.stats().items():
        print(f"{key}={value}")
    if "nearest_mean_accuracy" in ds.info:
        print(f"nearest_mean_accuracy={ds.info['nearest_mean_accuracy']:.6f}")
    return EXIT_OK


def _load_run_config(args):
    if args.config:
        return load_config(args.config, args.overrides)
    return parse_pairs(args.overrides, RunConfig())


def _train_dev(cfg):
    if cfg.train_path is None:
        raise ConfigError("train_path is not set")
    data = read_dataset(cfg.train_path)
    if cfg.dev_path is not None:
        return data, read_dataset(cfg.dev_path)
    return split_dataset(data, cfg.dev_fraction, cfg.seed)


def _atomic_save(path, params, step):
    tmp = f"{path}.tmp{os.getpid()}"
    save_checkpoint(tmp, params, step)
    os.replace(tmp, path)


def cmd_train(args):
    cfg = _load_run_config(args)
    print(format_config(cfg), end="")
    train_set, dev = _train_dev(cfg)
    config = build_train_config(cfg, train_set.n_i, train_set.n_o)
    init, start_step = None, 0
    if args.resume:
        init, start_step = load_checkpoint(args.resume)
        if init.spec != config.arch:
            raise ConfigError(f"checkpoint holds {init.spec.name}, config describes {config.arch.name}")
    elif os.path.exists(cfg.curve_path):
        os.remove(cfg.curve_path)

    def on_checkpoint(params, step):
        _atomic_save(cfg.checkpoint_path, params, step)

    try:
        result = train(config, train_set, dev, init=init, start_step=start_step, on_checkpoint=on_checkpoint)
    except DivergenceError as exc:
        write_curve(exc.curve, cfg.curve_path)
        print(f"error: training diverged at step {exc.step}", file=sys.stderr)
        return EXIT_NUMERIC
    write_curve(result.curve, cfg.curve_path)
    _atomic_save(cfg.checkpoint_path, result.params, result.steps)
    last = result.curve[-1] if result.curve else None
    print(f"steps={result.steps}")
    print(f"frames_seen={result.frames_seen}")
    if last is not None:
        print(f"dev_frame_accuracy={last.dev_frame_accuracy:.6f}")
    print(f"checkpoint={cfg.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args):
    params, step = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.data)
    bound = args.activation_bound if params.spec.kind == Kind.RNN else None
    report = frame_accuracy(params, ds, args.output_delay, bound)
    print(f"architecture={params.spec.name}")
    print(f"step={step}")
    for line in report.lines():
        print(line)
    if args.confusion:
        for row in report.confusion:
            print(" ".join(str(int(v)) for v in row))
    return EXIT_OK


def cmd_gradcheck(args):
    kinds = list(Kind) if args.kind == "ALL" else [Kind(args.kind)]
    specs = [_spec_from_args(args, kind) for kind in kinds]
    names = [{name for name, _, _ in param_layout(spec)} for spec in specs]
    if args.inject_fault and not any(args.inject_fault in n for n in names):
        raise ConfigError(f"no parameter block named {args.inject_fault!r}")
    failed = []
    for kind, spec, blocks in zip(kinds, specs, names):
        perturb = args.inject_fault if args.inject_fault in blocks else None
        worst = {}
        for seed in range(args.seed, args.seed + args.seeds):
            for name, err in gradient_check(spec, seed, args.steps, perturb=perturb).items():
                worst[name] = max(worst.get(name, 0.0), err)
        for name, err in worst.items():
            print(f"{kind.value}.{name},{err:.3e}")
            if not err < GRADCHECK_TOL:
                failed.append(f"{kind.value}.{name}")
    if failed:
        print(f"FAIL: {len(failed)} block(s) over {GRADCHECK_TOL:g}: {' '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"PASS: all blocks below {GRADCHECK_TOL:g}")
    return EXIT_OK


def cmd_params(args):
    spec = _spec_from_args(args)
    formula = param_count(spec, args.include_biases)
    instantiated = init_params(spec, 0).count(args.include_biases)
    print(f"architecture={spec.name}")
    print(f"formula={formula}")
    print(f"instantiated={instantiated}")
    if formula != instantiated:
        print("error: formula and instantiated counts differ", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_compare(args):
    train_set = read_dataset(args.train)
    if args.dev:
        dev = read_dataset(args.dev)
    else:
        train_set, dev = split_dataset(train_set, args.dev_fraction, args.seed)
    templates = [BudgetTemplate(Kind(k), train_set.n_i, train_set.n_o, args.rec_ratio, args.nonrec_ratio)
                 for k in args.kinds]
    clip = ClipPolicy() if args.clip else ClipPolicy.disabled()
    lrs = {}
    for item in args.lr or []:
        kind, _, value = item.partition("=")
        lrs[Kind(kind.upper())] = float(value)
    settings = CompareSettings(frame_budget=args.frames, task=args.task, lrs=lrs, clip=clip,
                               t_bptt=args.t_bptt, lanes_per_worker=args.lanes, workers=args.workers,
                               output_delay=args.output_delay, eval_interval=args.eval_interval,
                               seed=args.seed)
    result = compare_architectures(train_set, dev, args.budget, templates, settings,
                                   log=lambda msg: print(msg, file=sys.stderr))
    table = result.table("\t")
    print(table, end="")
    if args.table:
        with open(args.table, "w") as fh:
            fh.write(table)
    if args.curve_dir:
        os.makedirs(args.curve_dir, exist_ok=True)
        for name, curve in result.curves.items():
            path = os.path.join(args.curve_dir, f"{name}.csv")
            if os.path.exists(path):
                os.remove(path)
            write_curve(curve, path)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="lstmp", description="LSTM and projected-LSTM sequence labelling toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic SEQD dataset")
    gens = gen.add_subparsers(dest="generator", required=True)
    echo = gens.add_parser("delayed-echo", help="one-hot symbols labelled with the symbol d steps back")
    echo.add_argument("--n-symbols", type=int, default=8)
    echo.add_argument("--delay", type=int, default=10)
    frames = gens.add_parser("synthetic-frames", help="3-state phone HMM with Gaussian 40-dim frames")
    frames.add_argument("--phones", type=int, default=14)
    frames.add_argument("--noise", type=float, default=2.3)
    frames.add_argument("--states-per-phone", type=int, default=3)
    frames.add_argument("--feature-dim", type=int, default=40)
    for p in (echo, frames):
        p.add_argument("--out", required=True, help="output SEQD file")
        p.add_argument("--utterances", type=int, default=2000)
        p.add_argument("--min-len", type=int, default=50)
        p.add_argument("--max-len", type=int, default=100)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", help="train a model from a key=value config")
    tr.add_argument("--config", help="config file of key = value lines")
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.add_argument("overrides", nargs="*", metavar="key=value")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="frame accuracy of a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--output-delay", type=int, default=0)
    ev.add_argument("--activation-bound", type=float, default=50.0,
                    help="RNN pre-activation bound used in training (ignored for LSTMs)")
    ev.add_argument("--confusion", action="store_true", help="also print the confusion matrix")
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    gc.add_argument("--kind", type=str.upper, choices=["ALL"] + [k.value for k in Kind], default="ALL")
    gc.add_argument("--n-i", type=int, default=5)
    gc.add_argument("--n-c", type=int, default=7)
    gc.add_argument("--n-o", type=int, default=6)
    gc.add_argument("--n-r", type=int, default=4)
    gc.add_argument("--n-p", type=int, default=3)
    gc.add_argument("--steps", type=int, default=12)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--seeds", type=int, default=5)
    gc.add_argument("--inject-fault", metavar="BLOCK", help=argparse.SUPPRESS)
    gc.set_defaults(func=cmd_gradcheck)

    pa = sub.add_parser("params", help="print formula and instantiated parameter counts")
    _add_arch_flags(pa)
    pa.add_argument("--include-biases", action="store_true")
    pa.set_defaults(func=cmd_params)

    cm = sub.add_parser("compare", help="train several architectures at a matched parameter budget")
    cm.add_argument("--train", required=True)
    cm.add_argument("--dev")
    cm.add_argument("--dev-fraction", type=float, default=0.1)
    cm.add_argument("--budget", type=int, required=True, help="weight budget W* (biases excluded)")
    cm.add_argument("--kinds", type=str.upper, nargs="+", default=["RNN", "LSTM"],
                    choices=[k.value for k in Kind])
    cm.add_argument("--task", choices=["delayed-echo", "synthetic-frames"], default="delayed-echo")
    cm.add_argument("--frames", type=int, required=True, help="training frames per architecture")
    cm.add_argument("--lr", action="append", metavar="KIND=LR", help="override a tuned learning rate")
    cm.add_argument("--rec-ratio", type=float, default=0.25)
    cm.add_argument("--nonrec-ratio", type=float, default=0.25)
    cm.add_argument("--no-clip", dest="clip", action="store_false")
    cm.add_argument("--t-bptt", type=int, default=20)
    cm.add_argument("--lanes", type=int, default=8)
    cm.add_argument("--workers", type=int, default=1)
    cm.add_argument("--output-delay", type=int, default=0)
    cm.add_argument("--eval-interval", type=int, default=500)
    cm.add_argument("--seed", type=int, default=0)
    cm.add_argument("--table", help="also write the table here")
    cm.add_argument("--curve-dir", help="write one curve CSV per architecture here")
    cm.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, FormatError, ShapeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
