"""``key = value`` run configuration for the command line.

Blank lines and ``#`` comments are ignored, unknown keys are rejected, and
``format_config`` prints every key in a fixed order so its output parses
back to the same configuration.
"""

from dataclasses import dataclass, fields, replace
from typing import Optional

from .cells import ArchSpec, Kind
from .errors import ConfigError
from .grad import ClipPolicy
from .train import LrSchedule, TrainConfig


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _kind(text):
    return Kind(text.upper()).value


@dataclass(frozen=True)
class RunConfig:
    kind: str = "LSTM"
    n_i: Optional[int] = None
    n_c: int = 32
    n_o: Optional[int] = None
    n_r: Optional[int] = None
    n_p: Optional[int] = None
    t_bptt: int = 20
    lanes_per_worker: int = 8
    workers: int = 1
    lr0: float = 0.1
    decay_factor: float = 1.0
    decay_interval: int = 1000
    gradient_bound: float = 1.0
    activation_bound: float = 50.0
    clip_rnn: bool = True
    clip_lstm: bool = False
    output_delay: int = 5
    max_steps: int = 1000
    max_frames: Optional[int] = None
    eval_interval: int = 100
    seed: int = 0
    init_scale: float = 0.1
    forget_bias: float = 0.0
    precision: str = "float64"
    train_path: Optional[str] = None
    dev_path: Optional[str] = None
    dev_fraction: float = 0.1
    checkpoint_path: str = "model.ckpt"
    curve_path: str = "curve.csv"


_PARSERS = {
    "kind": _kind, "n_i": int, "n_c": int, "n_o": int, "n_r": int, "n_p": int,
    "t_bptt": int, "lanes_per_worker": int, "workers": int,
    "lr0": float, "decay_factor": float, "decay_interval": int,
    "gradient_bound": float, "activation_bound": float, "clip_rnn": _bool, "clip_lstm": _bool,
    "output_delay": int, "max_steps": int, "max_frames": int, "eval_interval": int, "seed": int,
    "init_scale": float, "forget_bias": float, "precision": str,
    "train_path": str, "dev_path": str, "dev_fraction": float,
    "checkpoint_path": str, "curve_path": str,
}
_OPTIONAL = {"n_i", "n_o", "n_r", "n_p", "max_frames", "train_path", "dev_path"}


def parse_pairs(pairs, base=None):
    """Apply ``key=value`` strings on top of ``base`` (defaults when None)."""
    updates = {}
    for lineno, raw in enumerate(pairs, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if value.lower() == "none" and key in _OPTIONAL:
            updates[key] = None
            continue
        try:
            updates[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    cfg = replace(base or RunConfig(), **updates)
    validate(cfg)
    return cfg


def parse_config(text, base=None):
    return parse_pairs(text.splitlines(), base)


def load_config(path, overrides=()):
    with open(path) as fh:
        cfg = parse_config(fh.read())
    return parse_pairs(overrides, cfg)


def format_config(cfg):
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            text = "none"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def validate(cfg):
    """Raise ConfigError for anything the training code would reject."""
    try:
        build_train_config(cfg, cfg.n_i or 1, cfg.n_o or 1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 < cfg.dev_fraction < 1:
        raise ConfigError(f"dev_fraction must be in (0, 1), got {cfg.dev_fraction}")
    if cfg.max_frames is not None and cfg.max_frames < 1:
        raise ConfigError(f"max_frames must be >= 1, got {cfg.max_frames}")


def arch_spec(cfg, n_i=None, n_o=None):
    """ArchSpec from the config, filling n_i/n_o from the data when unset."""
    for key, given in (("n_i", n_i), ("n_o", n_o)):
        configured = getattr(cfg, key)
        if configured is not None and given is not None and configured != given and key == "n_i":
            raise ConfigError(f"config says n_i={configured} but the dataset has n_i={given}")
        if configured is not None and given is not None and key == "n_o" and configured < given:
            raise ConfigError(f"config says n_o={configured} but the dataset has {given} classes")
    n_i = cfg.n_i if cfg.n_i is not None else n_i
    n_o = cfg.n_o if cfg.n_o is not None else n_o
    if n_i is None or n_o is None:
        raise ConfigError("n_i and n_o must come from the config or the dataset")
    kind = Kind(cfg.kind)
    return ArchSpec(kind, n_i, cfg.n_c, n_o,
                    cfg.n_r if kind in (Kind.LSTM_RP, Kind.LSTM_RP_NP) else None,
                    cfg.n_p if kind == Kind.LSTM_RP_NP else None)


def build_train_config(cfg, n_i=None, n_o=None):
    return TrainConfig(
        arch=arch_spec(cfg, n_i, n_o),
        schedule=LrSchedule(cfg.lr0, cfg.decay_factor, cfg.decay_interval),
        clip=ClipPolicy(cfg.gradient_bound, cfg.activation_bound, cfg.clip_rnn, cfg.clip_lstm),
        t_bptt=cfg.t_bptt, lanes_per_worker=cfg.lanes_per_worker, workers=cfg.workers,
        output_delay=cfg.output_delay, max_steps=cfg.max_steps, max_frames=cfg.max_frames,
        eval_interval=cfg.eval_interval, seed=cfg.seed, init_scale=cfg.init_scale,
        forget_bias=cfg.forget_bias, dtype=cfg.precision)
