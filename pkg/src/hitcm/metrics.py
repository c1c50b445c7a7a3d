"""Precision/recall/F1 with a confusion matrix, corpus BLEU-4 and ROUGE-L."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError


@dataclass
class MetricsReport:
    task: str
    labels: list[str] = field(default_factory=list)
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    accuracy: float | None = None
    confusion: list[list[int]] | None = None
    bleu: float | None = None
    rouge_l: float | None = None
    support: int = 0

    def to_dict(self) -> dict:
        d = {"task": self.task, "support": self.support}
        for k in ("accuracy", "precision", "recall", "f1", "bleu", "rouge_l"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        if self.labels:
            d["labels"] = list(self.labels)
            d["per_class"] = self.per_class
            d["confusion"] = self.confusion
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"task: {self.task}   support: {self.support}"]
        for k in ("accuracy", "precision", "recall", "f1", "bleu", "rouge_l"):
            v = getattr(self, k)
            if v is not None:
                lines.append(f"{k:>10}: {v:.4f}")
        if self.labels:
            w = max(8, max(len(l) for l in self.labels) + 2)
            lines.append("")
            lines.append(f"{'class':<{w}}{'P':>8}{'R':>8}{'F1':>8}")
            for lab in self.labels:
                pc = self.per_class[lab]
                lines.append(f"{lab:<{w}}{pc['precision']:>8.3f}{pc['recall']:>8.3f}{pc['f1']:>8.3f}")
            lines.append("")
            lines.append("confusion (rows = gold, columns = predicted)")
            lines.append(" " * w + "".join(f"{lab[:7]:>8}" for lab in self.labels))
            for lab, row in zip(self.labels, self.confusion):
                lines.append(f"{lab:<{w}}" + "".join(f"{c:>8d}" for c in row))
        return "\n".join(lines)


def _ratio(a: float, b: float) -> float:
    return a / b if b else 0.0


def evaluate_classification(preds: Sequence, gold: Sequence, labels: Sequence[str] | None = None,
                            task: str = "classification") -> MetricsReport:
    """Per-class P/R/F1 (0 for empty denominators), macro averages over classes
    seen in gold or predictions, accuracy and a gold-by-predicted confusion matrix."""
    preds, gold = list(preds), list(gold)
    if len(preds) != len(gold):
        raise ContractError(f"{len(preds)} predictions for {len(gold)} gold items")
    if labels is None:
        labels = sorted(set(gold) | set(preds), key=str)
    labels = [str(l) for l in labels]
    idx = {l: i for i, l in enumerate(labels)}
    k = len(labels)
    cm = np.zeros((k, k), dtype=np.int64)
    for g, p in zip(gold, preds):
        cm[idx[str(g)], idx[str(p)]] += 1
    per_class = {}
    present = []
    for i, lab in enumerate(labels):
        tp = cm[i, i]
        pred_n = cm[:, i].sum()
        gold_n = cm[i, :].sum()
        p = _ratio(tp, pred_n)
        r = _ratio(tp, gold_n)
        f = _ratio(2 * p * r, p + r)
        per_class[lab] = {"precision": float(p), "recall": float(r), "f1": float(f), "support": int(gold_n)}
        if pred_n or gold_n:
            present.append(lab)
    macro = lambda key: float(np.mean([per_class[l][key] for l in present])) if present else 0.0
    return MetricsReport(
        task=task, labels=labels, per_class=per_class,
        precision=macro("precision"), recall=macro("recall"), f1=macro("f1"),
        accuracy=_ratio(float(np.trace(cm)), float(cm.sum())), confusion=cm.tolist(), support=len(gold),
    )


def evaluate_tagging(pred_seqs: Sequence[Sequence], gold_seqs: Sequence[Sequence],
                     labels: Sequence[str] | None = None) -> MetricsReport:
    """Token-level scores over real (unpadded) positions."""
    if len(pred_seqs) != len(gold_seqs):
        raise ContractError(f"{len(pred_seqs)} predicted sequences for {len(gold_seqs)} gold sequences")
    flat_p, flat_g = [], []
    for p, g in zip(pred_seqs, gold_seqs):
        if len(p) != len(g):
            raise ContractError("predicted and gold sequence lengths differ")
        flat_p.extend(p)
        flat_g.extend(g)
    return evaluate_classification(flat_p, flat_g, labels, task="tagging")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Pooled-count BLEU with brevity penalty.

    An order whose clipped match count is zero uses add-one smoothing,
    ``(0 + 1) / (total + 1)``.
    """
    if len(hypotheses) != len(references):
        raise ContractError("hypotheses and references are not aligned")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        log_p += math.log((m + 1) / (t + 1)) if m == 0 else math.log(m / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p / max_n)


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: Sequence[str], reference: Sequence[str]) -> float:
    """Sentence ROUGE-L F-measure (beta = 1)."""
    lcs = lcs_length(hypothesis, reference)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hypothesis), lcs / len(reference)
    return 2 * p * r / (p + r)


def evaluate_mt(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> MetricsReport:
    if len(hypotheses) != len(references):
        raise ContractError(f"{len(hypotheses)} hypotheses for {len(references)} references")
    rl = float(np.mean([rouge_l(h, r) for h, r in zip(hypotheses, references)])) if references else 0.0
    exact = _ratio(sum(list(h) == list(r) for h, r in zip(hypotheses, references)), len(references))
    return MetricsReport(task="mt", bleu=corpus_bleu(hypotheses, references), rouge_l=rl,
                         accuracy=exact, support=len(references))
