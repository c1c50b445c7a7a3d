"""Glue between a RunConfig and the library: data, vocabularies, model, training, reports."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plotting
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, transfer_load
from .config import RunConfig
from .data import (Example, SyntheticSpec, TfIdfExtractor, Vocabs, generate_synthetic, label_set,
                   load_conll, load_parallel, load_tsv_classification, split_validation, vocabs_for,
                   build_target_vocab)
from .errors import ConfigError, ParseError
from .metrics import MetricsReport
from .model import HitModel, HitModelConfig
from .training import TaskData, TrainConfig, TrainResult, evaluate_model, train

log = logging.getLogger(__name__)


def load_task_file(task: str, path, tgt_path=None) -> list[Example]:
    """Read one split in the format a task expects."""
    try:
        if task == "sentiment":
            return load_tsv_classification(path)
        if task in ("pos", "ner"):
            return load_conll(path)
        if tgt_path is None:
            raise ConfigError("mt data needs a source and a target file")
        return load_parallel(path, tgt_path)
    except ParseError as exc:
        raise ParseError(f"data does not match task {task!r}: {exc}") from None


def load_splits(cfg: RunConfig) -> tuple[list[Example], list[Example], list[Example]]:
    """(train, valid, test); valid comes from train when not given, test may be empty."""
    d = cfg.data
    if d.synthetic is not None:
        kw = {}
        if d.synthetic_max_len is not None:
            kw["max_len"] = d.synthetic_max_len
        spec = SyntheticSpec(d.synthetic, d.synthetic_train, d.synthetic_test, vocab_size=d.synthetic_vocab, **kw)
        train_ex, test_ex = generate_synthetic(spec, d.synthetic_seed)
        valid_ex = []
    elif cfg.task == "mt":
        train_ex = load_task_file("mt", d.train_src, d.train_tgt)
        valid_ex = load_task_file("mt", d.valid_src, d.valid_tgt) if d.valid_src else []
        test_ex = load_task_file("mt", d.test_src, d.test_tgt) if d.test_src else []
    else:
        train_ex = load_task_file(cfg.task, d.train)
        valid_ex = load_task_file(cfg.task, d.valid) if d.valid else []
        test_ex = load_task_file(cfg.task, d.test) if d.test else []
    if not train_ex:
        raise ConfigError("[data] training split is empty")
    if not valid_ex:
        train_ex, valid_ex = split_validation(train_ex, d.valid_fraction, cfg.seed)
    return train_ex, valid_ex, test_ex


def model_config(cfg: RunConfig, vocabs: Vocabs, tfidf_dim: int) -> HitModelConfig:
    m = cfg.model
    return HitModelConfig(
        char_vocab_size=len(vocabs.chars), word_vocab_size=len(vocabs.words), head=cfg.head,
        n_labels=max(len(vocabs.labels), 1), target_vocab_size=len(vocabs.target) if vocabs.target else 0,
        tfidf_dim=tfidf_dim, d_model=m.d_model, n_heads=m.n_heads, l_c=m.l_c, l_w=m.l_w, l_dec=m.l_dec,
        d_ff=m.d_ff, c_max=m.c_max, n_max=m.n_max, dropout=cfg.train.dropout, use_opa=not m.no_opa,
        use_char_level=not m.no_char_level, dtype=m.dtype,
    )


@dataclass
class Prepared:
    model: HitModel
    data: TaskData
    test: list[Example]
    source: Checkpoint | None = None


def prepare(cfg: RunConfig) -> Prepared:
    train_ex, valid_ex, test_ex = load_splits(cfg)
    source = load_checkpoint(cfg.transfer.source) if cfg.transfer.source else None
    if source is not None:
        vocabs = Vocabs(source.vocabs.chars, source.vocabs.words, label_set(train_ex),
                        build_target_vocab(train_ex, cfg.model.min_freq) if cfg.task == "mt" else None)
    else:
        vocabs = vocabs_for(train_ex, cfg.model.min_freq)
    tfidf = None
    if cfg.task == "sentiment" and cfg.model.tfidf_features > 0:
        tfidf = TfIdfExtractor(cfg.model.tfidf_features).fit(ex.text for ex in train_ex)
    mcfg = model_config(cfg, vocabs, tfidf.n_features if tfidf else 0)
    if source is not None:
        model = transfer_load(source, mcfg, freeze=cfg.transfer.freeze, seed=cfg.seed)
    else:
        model = HitModel(mcfg, seed=cfg.seed)
    data = TaskData(train_ex, valid_ex, vocabs, tfidf, cfg.model.c_max, cfg.model.n_max)
    return Prepared(model, data, test_ex, source)


def train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(max_epochs=t.max_epochs, early_stop_patience=t.early_stop_patience,
                       plateau_patience=t.plateau_patience, plateau_factor=t.plateau_factor,
                       batch_size=t.batch_size, lr=t.lr, dropout=t.dropout, seed=cfg.seed)


@dataclass
class RunOutcome:
    result: TrainResult
    report: MetricsReport
    checkpoint: Path
    parameter_count: int


def run(cfg: RunConfig, figures: bool = True) -> RunOutcome:
    """Train, write checkpoint / log / metrics / figures into ``cfg.out``."""
    prep = prepare(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(prep.model, prep.data, train_config(cfg), log_path=out / "train_log.jsonl")
    ckpt = save_checkpoint(out / "model.hit", prep.model, prep.data.vocabs, cfg.task, prep.data.tfidf,
                           best_metric=result.best_val_loss, optimizer=result.optimizer,
                           meta={"best_epoch": result.best_epoch, "epochs_run": result.epochs_run})
    eval_ex = prep.test if prep.test else prep.data.valid
    report = evaluate_model(prep.model, eval_ex, prep.data.vocabs, prep.data.tfidf, max_len=cfg.train.max_len)
    report.task = cfg.task
    write_report(report, out / "metrics")
    (out / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    if figures and result.log:
        plotting.plot_training_curves(result.log, out / "training_curves.png")
    return RunOutcome(result, report, ckpt, prep.model.parameter_count())


def write_report(report: MetricsReport, stem) -> None:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".json").write_text(report.to_json() + "\n", encoding="utf-8")
    stem.with_suffix(".txt").write_text(report.to_text() + "\n", encoding="utf-8")


# -- embedding export ------------------------------------------------------------

def write_embeddings(path, tokens: list[str], vectors) -> Path:
    """One ``token<TAB>v1 v2 ... vd`` line per token, floats in round-trip precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for tok, vec in zip(tokens, vectors):
            if "\t" in tok or "\n" in tok:
                raise ValueError(f"token {tok!r} contains a tab or newline")
            fh.write(tok + "\t" + " ".join(repr(float(x)) for x in vec) + "\n")
    return path


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    tokens, rows = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        tok, sep, vec = line.partition("\t")
        if not sep:
            raise ParseError("expected 'token<TAB>vector'", path, lineno)
        tokens.append(tok)
        rows.append([float(x) for x in vec.split()])
    if len({len(r) for r in rows}) > 1:
        raise ParseError("rows have different widths", path)
    return tokens, np.array(rows, dtype=np.float64).reshape(len(rows), -1 if rows else 0)
