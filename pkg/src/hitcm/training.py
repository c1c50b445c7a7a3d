"""
Training loop: shuffled mini-batches, Adam, validation-loss early stopping and
a plateau learning-rate scheduler, keeping the best-validation weights.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .data import Example, TfIdfExtractor, Vocabs, make_batches
from .errors import ConfigError, NaNLossError
from .metrics import MetricsReport, evaluate_classification, evaluate_mt, evaluate_tagging
from .model import HitModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    max_epochs: int = 500
    early_stop_patience: int = 50
    plateau_patience: int = 20
    plateau_factor: float = 0.7
    batch_size: int = 32
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.1
    seed: int = 0
    monitor: str = "val_loss"

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError("plateau_factor must lie in (0, 1)")
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.monitor != "val_loss":
            raise ConfigError("only val_loss can be monitored")


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without improvement; the rate after ``k`` reductions is ``base * factor**k``."""

    def __init__(self, base_lr: float, factor: float = 0.7, patience: int = 20):
        self.base_lr = base_lr
        self.factor = factor
        self.patience = patience
        self.reductions = 0
        self.best = math.inf
        self.bad_epochs = 0

    @property
    def lr(self) -> float:
        return self.base_lr * self.factor ** self.reductions

    def step(self, value: float) -> float:
        if value < self.best:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.reductions += 1
                self.bad_epochs = 0
        return self.lr


class EarlyStopping:
    def __init__(self, patience: int = 50):
        self.patience = patience
        self.best = math.inf
        self.counter = 0

    def step(self, value: float) -> bool:
        """Record one epoch; True when it improved on the best so far."""
        if value < self.best:
            self.best = value
            self.counter = 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.patience


@dataclass
class TaskData:
    train: list[Example]
    valid: list[Example]
    vocabs: Vocabs
    tfidf: TfIdfExtractor | None = None
    c_max: int = 24
    n_max: int = 64

    def batches(self, split: Sequence[Example], batch_size: int, shuffle_seed=None):
        return make_batches(split, self.vocabs, batch_size, shuffle_seed, self.c_max, self.n_max, self.tfidf)


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    epochs_run: int = 0
    stopped_early: bool = False
    optimizer: nx.Adam | None = None

    def log_lines(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log)


def _batch_weight(model: HitModel, batch) -> float:
    head = model.config.head
    if head == "tagger":
        return float(batch.word_mask.sum())
    if head == "seq2seq":
        return float(batch.tgt_mask.sum())
    return float(batch.size)


def _correct(model: HitModel, logits: np.ndarray, batch) -> tuple[float, float]:
    head = model.config.head
    pred = logits.argmax(axis=-1)
    if head == "classifier":
        return float((pred == batch.labels).sum()), float(batch.size)
    if head == "tagger":
        m = batch.word_mask
        return float(((pred == batch.labels) & m).sum()), float(m.sum())
    m = batch.tgt_mask
    return float(((pred == batch.tgt_out) & m).sum()), float(m.sum())


def validate(model: HitModel, batches) -> tuple[float, float]:
    """(mean validation loss, accuracy) in eval mode."""
    tot_loss = tot_w = hits = count = 0.0
    for b in batches:
        w = _batch_weight(model, b)
        tot_loss += float(model.loss(b).data) * w
        tot_w += w
        h, c = _correct(model, model.logits(b).data, b)
        hits += h
        count += c
    return tot_loss / tot_w, hits / count if count else 0.0


def train(model: HitModel, data: TaskData, config: TrainConfig, log_path=None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Fit ``model`` on ``data.train``; on return the model holds its best-validation weights."""
    root = np.random.SeedSequence(config.seed)
    shuffle_ss, dropout_ss = root.spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    opt = nx.Adam(model.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    sched = PlateauScheduler(config.lr, config.plateau_factor, config.plateau_patience)
    stopper = EarlyStopping(config.early_stop_patience)
    val_batches = data.batches(data.valid, config.batch_size)
    result = TrainResult(optimizer=opt)
    best_state = {k: v.copy() for k, v in model.state_arrays().items()}
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            seed = int(shuffle_rng.integers(2**31 - 1))
            tot = weight = 0.0
            for bi, batch in enumerate(data.batches(data.train, config.batch_size, shuffle_seed=seed)):
                if opt.params:
                    with nx.Tape() as tape:
                        loss = model.loss(batch, training=True, rng=dropout_rng)
                    value = float(loss.data)
                    if not math.isfinite(value):
                        raise NaNLossError(epoch, bi)
                    tape.backward(loss)
                    opt.step()
                    opt.zero_grad()
                else:
                    value = float(model.loss(batch, training=True, rng=dropout_rng).data)
                    if not math.isfinite(value):
                        raise NaNLossError(epoch, bi)
                w = _batch_weight(model, batch)
                tot += value * w
                weight += w
            val_loss, metric = validate(model, val_batches)
            lr_used = opt.lr
            improved = stopper.step(val_loss)
            opt.lr = sched.step(val_loss)
            if improved:
                result.best_epoch, result.best_val_loss = epoch, val_loss
                best_state = {k: v.copy() for k, v in model.state_arrays().items()}
            rec = {"epoch": epoch, "train_loss": tot / weight, "val_loss": val_loss, "lr": lr_used,
                   "metric": metric, "improved": improved}
            result.log.append(rec)
            result.epochs_run = epoch
            if fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                fh.flush()
            if on_epoch:
                on_epoch(rec)
            log.info("epoch %d train %.4f val %.4f acc %.4f lr %.2e", epoch, rec["train_loss"], val_loss, metric, lr_used)
            if stopper.should_stop:
                result.stopped_early = True
                break
    finally:
        if fh:
            fh.close()
    model.load_arrays(best_state)
    return result


# -- prediction and evaluation -------------------------------------------------

def predict_examples(model: HitModel, examples: Sequence[Example], vocabs: Vocabs,
                     tfidf: TfIdfExtractor | None = None, batch_size: int = 64, max_len: int = 64) -> list:
    """Labels, tag lists or target token lists, in input order."""
    cfg = model.config
    out: list = [None] * len(examples)
    for b in make_batches(examples, vocabs, batch_size, None, cfg.c_max, cfg.n_max, tfidf):
        if cfg.head == "classifier":
            preds = [vocabs.labels[i] for i in model.predict(b)]
        elif cfg.head == "tagger":
            preds = [[vocabs.labels[i] for i in seq] for seq in model.predict(b)]
        else:
            preds = [vocabs.target.decode(seq) for seq in model.translate_greedy(b, max_len)]
        for i, p in zip(b.indices, preds):
            out[int(i)] = p
    return out


def evaluate_model(model: HitModel, examples: Sequence[Example], vocabs: Vocabs,
                   tfidf: TfIdfExtractor | None = None, max_len: int = 64) -> MetricsReport:
    preds = predict_examples(model, examples, vocabs, tfidf, max_len=max_len)
    head = model.config.head
    if head == "classifier":
        return evaluate_classification(preds, [ex.label for ex in examples], vocabs.labels)
    if head == "tagger":
        return evaluate_tagging(preds, [ex.tags[: model.config.n_max] for ex in examples], vocabs.labels)
    return evaluate_mt(preds, [[t.lower() for t in ex.target] for ex in examples])


def write_log(result: TrainResult, path) -> None:
    Path(path).write_text(result.log_lines(), encoding="utf-8")


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
