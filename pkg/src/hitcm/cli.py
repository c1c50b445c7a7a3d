"""
Command-line front end.

    hitcm train --config run.ini [--out DIR] [--seed N] [--no-opa] [--no-char-level]
                [--transfer-from CKPT] [--freeze]
    hitcm eval --checkpoint CKPT --data FILE [--target FILE] [--out DIR]
    hitcm translate --checkpoint CKPT --input FILE --out FILE [--max-len N]
    hitcm attribute --checkpoint CKPT --text "..." [--label L] [--out DIR]
    hitcm stats CORPUS CORPUS [...] [--lexicon FILE] [--names a,b,...] [--out DIR]
    hitcm export-embeddings --checkpoint CKPT --out FILE [--tokens FILE]

Exit status: 0 on success, 1 for usage / configuration / input errors,
2 for runtime failures (non-finite loss, anything unexpected).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .checkpoint import check_task, load_checkpoint
from .config import load_run_config, validate
from .data import Example, load_lexicon, make_batches, read_corpus_tokens, tokenize, vocab_overlap
from .errors import (ConfigError, ContractError, HitError, IncompatibleCheckpointError, NaNLossError,
                     ParseError, UnsupportedHeadError)
from .pipeline import load_task_file, run, write_embeddings, write_report
from .training import evaluate_model, predict_examples

log = logging.getLogger("hitcm")

USAGE_ERRORS = (ConfigError, ParseError, UnsupportedHeadError, IncompatibleCheckpointError, FileNotFoundError)


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- train -----------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.out:
        cfg.out = Path(args.out)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.no_opa:
        cfg.model.no_opa = True
    if args.no_char_level:
        cfg.model.no_char_level = True
    if args.transfer_from:
        cfg.transfer.source = Path(args.transfer_from)
    if args.freeze:
        cfg.transfer.freeze = True
    if cfg.transfer.freeze and cfg.transfer.source is None:
        raise UsageError("--freeze needs a transfer source ([transfer] from or --transfer-from)")
    validate(cfg)
    outcome = run(cfg, figures=not args.no_figures)
    print(f"parameters: {outcome.parameter_count:,}")
    r = outcome.result
    print(f"epochs: {r.epochs_run}  best epoch: {r.best_epoch}  best val loss: {r.best_val_loss:.6f}"
          + ("  (early stop)" if r.stopped_early else ""))
    print(outcome.report.to_text())
    print(f"artifacts in {cfg.out}")
    return 0


# -- eval ------------------------------------------------------------------------

def _check_labels(examples: list[Example], known: list[str], task: str) -> None:
    """Reject data whose gold labels share nothing with the checkpoint's label set."""
    gold = set()
    for ex in examples:
        gold.update(ex.tags if ex.tags is not None else [ex.label])
    if gold and not gold & set(known):
        raise ParseError(f"none of the gold labels {sorted(gold)[:5]} are known to this {task} checkpoint; "
                         "task/data mismatch?")


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    task = ckpt.task or {"classifier": "sentiment", "tagger": "pos", "seq2seq": "mt"}[ckpt.config.head]
    if task == "mt" and not args.target:
        raise UsageError("eval of an mt checkpoint needs --target")
    examples = load_task_file(task, args.data, args.target)
    if not examples:
        raise ParseError("no examples", args.data)
    if task != "mt":
        _check_labels(examples, ckpt.vocabs.labels, task)
    model = ckpt.build_model()
    report = evaluate_model(model, examples, ckpt.vocabs, ckpt.tfidf, max_len=args.max_len)
    report.task = task
    print(report.to_text())
    print(report.to_json())
    if args.out:
        write_report(report, Path(args.out) / "metrics")
    return 0


# -- translate -------------------------------------------------------------------

def cmd_translate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    try:
        check_task(ckpt, "seq2seq")
    except ContractError as exc:
        raise UnsupportedHeadError(f"translate needs an mt checkpoint: {exc}") from None
    if args.max_len < 1:
        raise UsageError("--max-len must be >= 1")
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    keep = [i for i, ln in enumerate(lines) if tokenize(ln)]
    outputs = [""] * len(lines)
    if keep:
        model = ckpt.build_model()
        exs = [Example(tokenize(lines[i])) for i in keep]
        for i, toks in zip(keep, predict_examples(model, exs, ckpt.vocabs, max_len=args.max_len)):
            outputs[i] = " ".join(toks)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(o + "\n" for o in outputs), encoding="utf-8")
    print(f"translated {len(keep)} line(s) -> {out}")
    return 0


# -- attribute -------------------------------------------------------------------

def attribution_text(tokens: list[str], word_scores, char_scores, target) -> str:
    w = max(8, max(len(t) for t in tokens) + 2)
    lines = [f"target: {target}", f"{'word':<{w}}{'score':>7}   per-character"]
    for i, tok in enumerate(tokens):
        chars = "  ".join(f"{ch}:{char_scores[i][j]:.2f}" for j, ch in enumerate(tok[: len(char_scores[i])]))
        lines.append(f"{tok:<{w}}{word_scores[i]:>7.3f}   {chars}")
    return "\n".join(lines)


def cmd_attribute(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    head = ckpt.config.head
    if head == "seq2seq":
        raise UnsupportedHeadError("attribution is not supported for mt checkpoints")
    tokens = tokenize(args.text)
    if not tokens:
        raise UsageError("--text is empty")
    tokens = tokens[: ckpt.config.n_max]
    labels = ckpt.vocabs.labels
    target = None
    if args.label is not None:
        wanted = [args.label] if head == "classifier" else args.label.replace(",", " ").split()
        if head == "tagger" and len(wanted) != len(tokens):
            raise UsageError(f"--label needs {len(tokens)} tags, got {len(wanted)}")
        unknown = [t for t in wanted if t not in labels]
        if unknown:
            raise UsageError(f"unknown label(s) {unknown}; known: {labels}")
        ids = [labels.index(t) for t in wanted]
        target = ids[0] if head == "classifier" else ids
    ex = Example(tokens) if head == "classifier" else Example(tokens, tags=[labels[0]] * len(tokens))
    batch = make_batches([ex], ckpt.vocabs, 1, None, ckpt.config.c_max, ckpt.config.n_max, ckpt.tfidf)[0]
    model = ckpt.build_model()
    att = model.gradcam_attribution(batch, target)
    tgt_name = labels[att.target] if head == "classifier" else [labels[t] for t in att.target]
    char_rows = [[float(v) for v in row[: min(len(t), ckpt.config.c_max)]] for row, t in zip(att.char_scores, tokens)]
    report = {"tokens": tokens, "target": tgt_name, "word_scores": [float(v) for v in att.word_scores],
              "char_scores": char_rows}
    print(attribution_text(tokens, att.word_scores, char_rows, tgt_name))
    print(json.dumps(report, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "attribution.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        plotting.plot_attribution(tokens, att.word_scores, att.char_scores, out / "attribution.png",
                                  title=f"attribution for {tgt_name if head == 'classifier' else 'predicted tags'}")
    return 0


# -- stats -----------------------------------------------------------------------

def overlap_matrix(corpora: list[list[str]], english: set[str] | None):
    k = len(corpora)
    ov = np.zeros((k, k))
    en = np.full((k, k), np.nan)
    for i in range(k):
        for j in range(k):
            o, e = vocab_overlap(corpora[i], corpora[j], english)
            ov[i, j] = o
            if e is not None:
                en[i, j] = e
    return ov, en


def overlap_text(names: list[str], ov, en) -> str:
    w = max(10, max(len(n) for n in names) + 2)
    cell = 16
    head = f"{'src/tgt':<{w}}"
    lines = ["overlap (english share of shared types)", head + "".join(f"{n:>{cell}}" for n in names)]
    for i, n in enumerate(names):
        row = []
        for j in range(len(names)):
            e = "" if np.isnan(en[i, j]) else f" ({en[i, j]:.2f})"
            row.append(f"{ov[i, j]:.2f}{e}".rjust(cell))
        lines.append(f"{n:<{w}}" + "".join(row))
    return "\n".join(lines)


def cmd_stats(args) -> int:
    if len(args.corpora) < 2:
        raise UsageError("stats needs at least two corpora")
    names = args.names.split(",") if args.names else [Path(p).stem for p in args.corpora]
    if len(names) != len(args.corpora):
        raise UsageError(f"--names has {len(names)} entries for {len(args.corpora)} corpora")
    corpora = []
    for p in args.corpora:
        toks = read_corpus_tokens(p)
        if not toks:
            raise UsageError(f"corpus {p} is empty")
        corpora.append(toks)
    english = load_lexicon(args.lexicon) if args.lexicon else None
    ov, en = overlap_matrix(corpora, english)
    print(overlap_text(names, ov, en))
    report = {"names": names, "overlap": ov.tolist(),
              "english": None if english is None else en.tolist()}
    print(json.dumps(report, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "overlap.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        plotting.plot_overlap(names, ov, out / "overlap.png")
    return 0


# -- export-embeddings -------------------------------------------------------------

def cmd_export(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if not ckpt.config.use_char_level:
        raise UsageError("checkpoint was trained without the sub-word encoder")
    if args.tokens:
        tokens = [ln.strip() for ln in Path(args.tokens).read_text(encoding="utf-8").splitlines() if ln.strip()]
    else:
        tokens = ckpt.vocabs.words.to_list()[len(ckpt.vocabs.words.specials):]
    model = ckpt.build_model()
    vecs = model.subword_vectors(tokens, ckpt.vocabs.chars)
    write_embeddings(args.out, tokens, vecs)
    print(f"wrote {len(tokens)} x {vecs.shape[1]} vectors -> {args.out}")
    return 0


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hitcm", description="Hierarchical transformer toolkit for code-mixed text.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="override [run] out")
    t.add_argument("--seed", type=int)
    t.add_argument("--no-opa", action="store_true", help="drop the outer-product attention branch")
    t.add_argument("--no-char-level", action="store_true", help="drop the character-level encoder")
    t.add_argument("--transfer-from", help="checkpoint whose encoder initialises this run")
    t.add_argument("--freeze", action="store_true", help="keep transferred encoder weights fixed")
    t.add_argument("--no-figures", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a data file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="TSV, CoNLL or mt source file, matching the checkpoint task")
    e.add_argument("--target", help="mt reference file")
    e.add_argument("--out", help="directory for metrics.json / metrics.txt")
    e.add_argument("--max-len", type=int, default=64)
    e.set_defaults(func=cmd_eval)

    tr = sub.add_parser("translate", help="greedy decoding, one output line per input line")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--input", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--max-len", type=int, default=64)
    tr.set_defaults(func=cmd_translate)

    a = sub.add_parser("attribute", help="gradient-magnitude word and character attribution")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--text", required=True)
    a.add_argument("--label", help="class (classifier) or space/comma separated tags (tagger); default: prediction")
    a.add_argument("--out", help="directory for attribution.json / attribution.png")
    a.set_defaults(func=cmd_attribute)

    s = sub.add_parser("stats", help="pairwise vocabulary overlap between corpora")
    s.add_argument("corpora", nargs="+")
    s.add_argument("--lexicon", help="English word list, one per line")
    s.add_argument("--names", help="comma separated display names")
    s.add_argument("--out", help="directory for overlap.json / overlap.png")
    s.set_defaults(func=cmd_stats)

    x = sub.add_parser("export-embeddings", help="sub-word encoder vectors as TSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--tokens", help="file with one token per line (default: the word vocabulary)")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NaNLossError as exc:
        print(f"hitcm: training aborted: {exc}", file=sys.stderr)
        return 2
    except USAGE_ERRORS as exc:
        print(f"hitcm: error: {exc}", file=sys.stderr)
        return 1
    except HitError as exc:
        print(f"hitcm: runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled", exc_info=True)
        print(f"hitcm: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
