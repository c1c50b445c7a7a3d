"""
Run configuration: an INI file with one section per concern.

Example::

    [run]
    task = sentiment          ; sentiment | pos | ner | mt
    seed = 13
    out = runs/sentiment

    [data]
    train = data/train.tsv    ; mt uses train_src / train_tgt etc.
    test = data/test.tsv

    [model]
    d_model = 128

    [train]
    max_epochs = 500

    [transfer]
    from = runs/pos/model.hit
    freeze = true

Relative paths resolve against the config file's directory. Unknown
sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

TASK_HEADS = {"sentiment": "classifier", "pos": "tagger", "ner": "tagger", "mt": "seq2seq"}
SYNTHETIC_KINDS = ("classification", "tagging", "copy", "reverse")

_PATH_KEYS = ("train", "valid", "test", "train_src", "train_tgt", "valid_src", "valid_tgt", "test_src", "test_tgt")


@dataclass
class ModelSection:
    d_model: int = 128
    n_heads: int = 4
    l_c: int = 2
    l_w: int = 2
    l_dec: int | None = None
    d_ff: int | None = None
    c_max: int = 24
    n_max: int = 64
    no_opa: bool = False
    no_char_level: bool = False
    tfidf_features: int = 5000
    min_freq: int = 1
    dtype: str = "float64"


@dataclass
class TrainSection:
    max_epochs: int = 500
    early_stop_patience: int = 50
    plateau_patience: int = 20
    plateau_factor: float = 0.7
    batch_size: int = 32
    lr: float = 0.001
    dropout: float = 0.1
    max_len: int = 64


@dataclass
class DataSection:
    train: Path | None = None
    valid: Path | None = None
    test: Path | None = None
    train_src: Path | None = None
    train_tgt: Path | None = None
    valid_src: Path | None = None
    valid_tgt: Path | None = None
    test_src: Path | None = None
    test_tgt: Path | None = None
    valid_fraction: float = 0.1
    synthetic: str | None = None
    synthetic_train: int = 1000
    synthetic_test: int | None = None
    synthetic_seed: int = 7
    synthetic_max_len: int | None = None
    synthetic_vocab: int = 50


@dataclass
class TransferSection:
    source: Path | None = None
    freeze: bool = False


@dataclass
class RunConfig:
    task: str
    seed: int = 0
    out: Path = Path("runs/default")
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    transfer: TransferSection = field(default_factory=TransferSection)

    @property
    def head(self) -> str:
        return TASK_HEADS[self.task]

    def to_dict(self) -> dict:
        def conv(obj):
            return {f.name: (str(v) if isinstance(v := getattr(obj, f.name), Path) else v) for f in fields(obj)}
        return {"task": self.task, "seed": self.seed, "out": str(self.out), "data": conv(self.data),
                "model": conv(self.model), "train": conv(self.train), "transfer": conv(self.transfer)}


def _coerce(section: str, key: str, raw: str, typ):
    raw = raw.strip()
    where = f"[{section}] {key}"
    typ = str(typ)
    optional = "None" in typ
    if optional and raw == "":
        return None
    try:
        if "bool" in typ:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
        if "Path" in typ:
            return Path(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ}") from None


def _fill(obj, section: str, items: dict, rename: dict | None = None):
    rename = rename or {}
    known = {f.name: f for f in fields(obj)}
    for key, raw in items.items():
        name = rename.get(key, key)
        if name not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        setattr(obj, name, _coerce(section, key, raw, known[name].type))


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    allowed = {"run", "data", "model", "train", "transfer"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown section(s): {sorted(extra)}")
    if not cp.has_section("run") or "task" not in cp["run"]:
        raise ConfigError("[run] task is required")
    run = dict(cp["run"])
    task = run.pop("task").strip()
    cfg = RunConfig(task=task)
    for key, raw in run.items():
        if key == "seed":
            cfg.seed = _coerce("run", key, raw, "int")
        elif key == "out":
            cfg.out = Path(raw.strip())
        else:
            raise ConfigError(f"[run] unknown key {key!r}")
    for name, obj, rename in (("data", cfg.data, None), ("model", cfg.model, None),
                              ("train", cfg.train, None), ("transfer", cfg.transfer, {"from": "source"})):
        if cp.has_section(name):
            _fill(obj, name, dict(cp[name]), rename)
    base = path.parent
    for key in _PATH_KEYS:
        v = getattr(cfg.data, key)
        if v is not None and not v.is_absolute():
            setattr(cfg.data, key, base / v)
    if cfg.transfer.source is not None and not cfg.transfer.source.is_absolute():
        cfg.transfer.source = base / cfg.transfer.source
    if not cfg.out.is_absolute():
        cfg.out = base / cfg.out
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Field-level checks; raises ConfigError naming the offending field."""
    if cfg.task not in TASK_HEADS:
        raise ConfigError(f"[run] task must be one of {sorted(TASK_HEADS)}, got {cfg.task!r}")
    d = cfg.data
    if d.synthetic is not None:
        if d.synthetic not in SYNTHETIC_KINDS:
            raise ConfigError(f"[data] synthetic must be one of {SYNTHETIC_KINDS}")
        want = {"sentiment": ("classification",), "pos": ("tagging",), "ner": ("tagging",),
                "mt": ("copy", "reverse")}[cfg.task]
        if d.synthetic not in want:
            raise ConfigError(f"[data] synthetic={d.synthetic} does not fit task {cfg.task}")
    elif cfg.task == "mt":
        if d.train_src is None or d.train_tgt is None:
            raise ConfigError("[data] mt needs train_src and train_tgt (or synthetic)")
    elif d.train is None:
        raise ConfigError("[data] train is required (or synthetic)")
    for key in _PATH_KEYS:
        v = getattr(d, key)
        if v is not None and not v.exists():
            raise ConfigError(f"[data] {key}: file not found: {v}")
    if cfg.transfer.source is not None and not cfg.transfer.source.exists():
        raise ConfigError(f"[transfer] from: file not found: {cfg.transfer.source}")
    if not 0.0 < d.valid_fraction < 1.0:
        raise ConfigError("[data] valid_fraction must lie in (0, 1)")
    m = cfg.model
    if m.d_model < 1 or m.n_heads < 1 or m.d_model % m.n_heads:
        raise ConfigError("[model] n_heads must divide d_model (both >= 1)")
    if m.tfidf_features < 0:
        raise ConfigError("[model] tfidf_features must be >= 0")
    if m.dtype not in ("float64", "float32"):
        raise ConfigError("[model] dtype must be float64 or float32")
    t = cfg.train
    if not 0.0 < t.plateau_factor < 1.0:
        raise ConfigError("[train] plateau_factor must lie in (0, 1)")
    if t.early_stop_patience < 1 or t.plateau_patience < 1:
        raise ConfigError("[train] patience values must be >= 1")
    if t.max_epochs < 1 or t.batch_size < 1:
        raise ConfigError("[train] max_epochs and batch_size must be >= 1")
    if not 0.0 <= t.dropout < 1.0:
        raise ConfigError("[train] dropout must lie in [0, 1)")
