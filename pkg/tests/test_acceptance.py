"""
Acceptance suite: one test per criterion, each printing a single
``[PASS]`` / ``[FAIL] criterion N: ...`` line to the terminal.

The training criteria run real (small) experiments and take several minutes
in total; deselect them with ``-m "not slow"``.
"""

import contextlib
import itertools
import math
import time

import numpy as np
import pytest

from hitcm import numerics as nx
from hitcm import training
from hitcm.attention import fame_forward, msa_forward, opa_forward
from hitcm.checkpoint import load_checkpoint, save_checkpoint, transfer_load
from hitcm.data import (SyntheticSpec, TfIdfExtractor, Vocabs, generate_synthetic, label_set, make_batches,
                        split_validation, vocabs_for)
from hitcm.metrics import corpus_bleu, evaluate_classification, rouge_l
from hitcm.model import HitModel, HitModelConfig
from hitcm.numerics import Tensor
from hitcm.training import EarlyStopping, PlateauScheduler, TaskData, TrainConfig, evaluate_model, train

from conftest import batch_of
from test_attention import block, naive_msa, naive_opa, random_mask, standard_encoder_block
from test_metrics import brute_force_prf
from test_numerics import _ops

SMALL = dict(d_model=32, n_heads=2, l_c=1, l_w=1)


@contextlib.contextmanager
def criterion(capsys, n: int, title: str):
    """Yield a dict for details; print exactly one verdict line for the criterion."""
    info: dict = {}
    t0 = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        line = f"[FAIL] criterion {n}: {title} ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
        with capsys.disabled():
            print("\n" + line)
        raise
    detail = ", ".join(f"{k}={v}" for k, v in info.items())
    with capsys.disabled():
        print(f"\n[PASS] criterion {n}: {title} ({detail}; {time.perf_counter() - t0:.1f}s)")


def check(ok: bool, msg: str) -> None:
    if not ok:
        raise AssertionError(msg)


def fmt(x: float) -> str:
    return f"{x:.4f}"


# -- shared experiments ---------------------------------------------------------------------

def _split(kind, n_train, n_test, seed, **kw):
    tr, te = generate_synthetic(SyntheticSpec(kind, n_train, n_test, **kw), seed=seed)
    tr, va = split_validation(tr, 0.1, seed=1)
    return tr, va, te


@pytest.fixture(scope="module")
def sentiment_run():
    tr, va, te = _split("classification", 1000, 100, seed=7)
    voc = vocabs_for(tr)
    tf = TfIdfExtractor(5000).fit(ex.text for ex in tr)
    cfg = HitModelConfig(len(voc.chars), len(voc.words), "classifier", len(voc.labels),
                         tfidf_dim=tf.n_features, **SMALL)
    model = HitModel(cfg, seed=0)
    t0 = time.perf_counter()
    res = train(model, TaskData(tr, va, voc, tf), TrainConfig(max_epochs=50, early_stop_patience=10,
                                                              plateau_patience=5, seed=0))
    rep = evaluate_model(model, te, voc, tf)
    return dict(model=model, voc=voc, tfidf=tf, test=te, result=res, report=rep,
                seconds=time.perf_counter() - t0)


def _tagging(use_char_level: bool):
    tr, va, te = _split("tagging", 800, 100, seed=11)
    voc = vocabs_for(tr)
    cfg = HitModelConfig(len(voc.chars), len(voc.words), "tagger", len(voc.labels),
                         use_char_level=use_char_level, **SMALL)
    model = HitModel(cfg, seed=0)
    res = train(model, TaskData(tr, va, voc), TrainConfig(max_epochs=50, early_stop_patience=5,
                                                          plateau_patience=3, seed=0))
    return model, voc, res, evaluate_model(model, te, voc)


@pytest.fixture(scope="module")
def tagging_run():
    return _tagging(True)


# -- 1 ----------------------------------------------------------------------------------------

def test_criterion_01_gradient_integrity(capsys):
    with criterion(capsys, 1, "finite-difference gradients, every op and a full tiny model") as info:
        t0 = time.perf_counter()
        r = np.random.default_rng(5)
        worst_op = 0.0
        for name, f in _ops(r).items():
            x = Tensor(r.normal(size=(2, 3)))
            err = nx.finite_diff_check(f, x, 1e-5)
            check(err < 1e-3, f"op {name}: rel err {err}")
            worst_op = max(worst_op, err)
        worst_model = 0.0
        for head in ("classifier", "tagger", "seq2seq"):
            tr, _ = generate_synthetic(SyntheticSpec({"classifier": "classification", "tagger": "tagging",
                                                      "seq2seq": "copy"}[head], 3, 1, max_len=4, vocab_size=8),
                                       seed=2)
            voc = vocabs_for(tr)
            cfg = HitModelConfig(len(voc.chars), len(voc.words), head, max(len(voc.labels), 1),
                                 target_vocab_size=len(voc.target) if voc.target else 0,
                                 d_model=8, n_heads=2, l_c=1, l_w=1, c_max=6, dropout=0.0)
            model = HitModel(cfg, seed=2)
            model.set_gates([0.3, -0.2])
            b = batch_of(tr, voc)
            for name, p in model.named_parameters().items():
                err = nx.finite_diff_check(lambda _: model.loss(b), p, 1e-5)
                check(err < 1e-3, f"{head} parameter {name}: rel err {err}")
                worst_model = max(worst_model, err)
        elapsed = time.perf_counter() - t0
        check(elapsed < 120, f"took {elapsed:.1f}s")
        info.update(ops=len(_ops(r)), worst_op=f"{worst_op:.1e}", worst_model=f"{worst_model:.1e}")


# -- 2 ----------------------------------------------------------------------------------------

def test_criterion_02_attention_oracles(capsys):
    with criterion(capsys, 2, "vectorized MSA/OPA equal per-query loops") as info:
        worst = 0.0
        r = np.random.default_rng(2024)
        for trial in range(50):
            n = int(r.integers(1, 7))
            h = int(r.choice([1, 2, 4]))
            d = h * int(r.integers(1, 4))
            w = block(r, d, h)
            x = r.normal(size=(n, d))
            mask = random_mask(r, n) if trial % 2 else None
            for got, ref in ((msa_forward(Tensor(x), w.msa, mask).data, naive_msa(x, w.msa, mask)),
                             (opa_forward(Tensor(x), w.opa, mask).data, naive_opa(x, w.opa, mask))):
                worst = max(worst, float(np.abs(got - ref).max()))
        check(worst <= 1e-10, f"max abs diff {worst}")
        info.update(instances=50, max_abs_diff=f"{worst:.1e}")


# -- 3 ----------------------------------------------------------------------------------------

def test_criterion_03_fame_degeneracy(capsys):
    with criterion(capsys, 3, "FAME gate degeneracy") as info:
        r = np.random.default_rng(3)
        w = block(r)
        x = Tensor(r.normal(size=(6, 8)))
        w.gate.data[:] = [40.0, -40.0]
        msa_diff = float(np.abs(fame_forward(x, w).data - standard_encoder_block(x.data, w)).max())
        w.gate.data[:] = [-40.0, 40.0]
        got = fame_forward(x, w).data

        def ln(y, p):
            return nx.layer_norm(Tensor(y), p.gain, p.bias).data
        f = w.ffn
        y = ln(x.data + opa_forward(x, w.opa).data, w.ln1)
        ref = ln(y + np.maximum(y @ f.w1.data + f.b1.data, 0) @ f.w2.data + f.b2.data, w.ln2)
        opa_diff = float(np.abs(got - ref).max())
        w.gate.data[:] = [0.0, 0.0]
        alphas = w.alphas().data.tolist()
        check(msa_diff <= 1e-9, f"(+40,-40) vs MSA block: {msa_diff}")
        check(opa_diff <= 1e-9, f"(-40,+40) vs OPA block: {opa_diff}")
        check(alphas == [0.5, 0.5], f"(0,0) alphas {alphas}")
        info.update(msa_diff=f"{msa_diff:.1e}", opa_diff=f"{opa_diff:.1e}", alphas=alphas)


# -- 4 ----------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_04_synthetic_sentiment(capsys, sentiment_run):
    with criterion(capsys, 4, "synthetic sentiment accuracy") as info:
        rep, res = sentiment_run["report"], sentiment_run["result"]
        te = sentiment_run["test"]
        check(any(ex.meta.get("perturbed") for ex in te), "no spelling-perturbed test examples")
        info.update(accuracy=fmt(rep.accuracy), epochs=res.epochs_run, best_epoch=res.best_epoch,
                    train_seconds=f"{sentiment_run['seconds']:.0f}")
        check(res.epochs_run <= 50, "ran more than 50 epochs")
        check(rep.accuracy >= 0.95, f"accuracy {rep.accuracy}")
        check(sentiment_run["seconds"] < 300, f"took {sentiment_run['seconds']:.0f}s")


# -- 5 ----------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_05_synthetic_tagging_and_ablation(capsys, tagging_run):
    with criterion(capsys, 5, "synthetic tagging accuracy and char-level ablation") as info:
        _, _, res, rep = tagging_run
        _, _, res_ab, rep_ab = _tagging(False)
        drop = rep.accuracy - rep_ab.accuracy
        info.update(accuracy=fmt(rep.accuracy), ablated=fmt(rep_ab.accuracy), drop_points=f"{100 * drop:.1f}",
                    epochs=f"{res.epochs_run}/{res_ab.epochs_run}")
        check(rep.accuracy >= 0.95, f"token accuracy {rep.accuracy}")
        check(drop >= 0.10, f"ablation drop {drop}")


# -- 6 ----------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_06_synthetic_copy_mt(capsys):
    with criterion(capsys, 6, "synthetic copy task BLEU with greedy decoding") as info:
        t0 = time.perf_counter()
        tr, va, te = _split("copy", 2000, 200, seed=5, max_len=8, vocab_size=50)
        voc = vocabs_for(tr)
        cfg = HitModelConfig(len(voc.chars), len(voc.words), "seq2seq", target_vocab_size=len(voc.target),
                             d_model=64, n_heads=2, l_c=1, l_w=1)
        model = HitModel(cfg, seed=0)
        res = train(model, TaskData(tr, va, voc), TrainConfig(max_epochs=100, early_stop_patience=10,
                                                              plateau_patience=5, seed=0))
        rep = evaluate_model(model, te, voc, max_len=12)
        elapsed = time.perf_counter() - t0
        info.update(bleu=fmt(rep.bleu), exact_match=fmt(rep.accuracy), rouge_l=fmt(rep.rouge_l),
                    epochs=res.epochs_run, seconds=f"{elapsed:.0f}")
        check(rep.bleu >= 0.90, f"BLEU {rep.bleu}")
        check(rep.accuracy >= 0.90, f"exact-match copies {rep.accuracy}")
        check(elapsed < 900, f"took {elapsed:.0f}s")


# -- 7 ----------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_07_transfer_learning(capsys, tagging_run, tmp_path):
    with criterion(capsys, 7, "transfer tagging -> sentiment, frozen vs fine-tuned") as info:
        src_model, src_voc, _, _ = tagging_run
        ck = load_checkpoint(save_checkpoint(tmp_path / "tagger.hit", src_model, src_voc, "pos"))
        tr, va, te = _split("classification", 1000, 100, seed=7)
        voc = Vocabs(ck.vocabs.chars, ck.vocabs.words, label_set(tr))
        tf = TfIdfExtractor(5000).fit(ex.text for ex in tr)
        acc = {}
        for freeze in (True, False):
            cfg = HitModelConfig(1, 1, "classifier", len(voc.labels), tfidf_dim=tf.n_features, **SMALL)
            model = transfer_load(ck, cfg, freeze=freeze)
            names = model.encoder_parameter_names()
            train(model, TaskData(tr, va, voc, tf), TrainConfig(max_epochs=50, early_stop_patience=10,
                                                                plateau_patience=5, seed=0))
            acc[freeze] = evaluate_model(model, te, voc, tf).accuracy
            if freeze:
                unchanged = all(np.array_equal(model.named_parameters()[n].data, ck.arrays[n]) for n in names)
                check(unchanged, "frozen encoder arrays changed")
        info.update(frozen=fmt(acc[True]), finetuned=fmt(acc[False]), encoder_bitwise_unchanged=True)
        check(acc[True] >= 0.85, f"frozen accuracy {acc[True]}")
        check(acc[False] >= acc[True], f"fine-tuned {acc[False]} < frozen {acc[True]}")


# -- 8 ----------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_08_attribution(capsys, sentiment_run):
    with criterion(capsys, 8, "trigger word gets top-1 Grad-CAM attribution") as info:
        model, voc, tf = sentiment_run["model"], sentiment_run["voc"], sentiment_run["tfidf"]
        hits = {False: [], True: []}
        for ex in sentiment_run["test"]:
            if "trigger_index" not in ex.meta:
                continue
            b = make_batches([ex], voc, 1, tfidf=tf)[0]
            att = model.gradcam_attribution(b, voc.labels.index(ex.label))
            hits[bool(ex.meta["perturbed"])].append(int(np.argmax(att.word_scores)) == ex.meta["trigger_index"])
        clean, pert = float(np.mean(hits[False])), float(np.mean(hits[True]))
        info.update(clean=f"{clean:.2f} of {len(hits[False])}", perturbed=f"{pert:.2f} of {len(hits[True])}")
        check(len(hits[True]) > 0, "no perturbed examples")
        check(clean >= 0.90, f"clean top-1 {clean}")
        check(pert >= 0.80, f"perturbed top-1 {pert}")


# -- 9 ----------------------------------------------------------------------------------------

def test_criterion_09_metric_oracles(capsys):
    with criterion(capsys, 9, "metric oracles") as info:
        r = np.random.default_rng(9)
        for _ in range(1000):
            n = int(r.integers(1, 21))
            gold = [str(c) for c in r.choice(list("abcd"), n)]
            preds = [str(c) for c in r.choice(list("abcd"), n)]
            rep = evaluate_classification(preds, gold)
            per, macro = brute_force_prf(preds, gold)
            check((rep.precision, rep.recall, rep.f1) == macro, f"macro mismatch on {preds} vs {gold}")
            for c, vals in per.items():
                pc = rep.per_class[c]
                check((pc["precision"], pc["recall"], pc["f1"]) == vals, f"class {c} mismatch")
        bp = corpus_bleu(["a b c d".split()], ["a b c d e f g h".split()])
        smooth = corpus_bleu(["a b c d".split()], ["a b c e".split()])
        rl = rouge_l("a b c d e".split(), "a x c e".split())
        check(abs(bp - math.exp(-1)) <= 1e-9, f"brevity case {bp}")
        check(abs(smooth - (3 / 4 * 2 / 3 * 1 / 2 * 1 / 2) ** 0.25) <= 1e-9, f"smoothed BLEU {smooth}")
        check(abs(rouge_l("a b c d".split(), "a b c e".split()) - 0.75) <= 1e-9, "ROUGE-L 0.75 case")
        check(abs(rl - 2 * 0.6 * 0.75 / 1.35) <= 1e-9, f"ROUGE-L {rl}")
        check(corpus_bleu([list("abc")], [list("abc")]) == 1.0, "identity BLEU")
        info.update(random_cases=1000, bleu_brevity=fmt(bp), bleu_smoothed=fmt(smooth))


# -- 10 ---------------------------------------------------------------------------------------

def test_criterion_10_recipe_conformance(capsys, monkeypatch):
    with criterion(capsys, 10, "scheduler, early stopping and parameter count") as info:
        s = PlateauScheduler(0.001, 0.7, 20)
        s.step(0.0)
        for k in range(1, 8):
            for _ in range(20):
                lr = s.step(1.0)
            check(lr == 0.001 * 0.7 ** k, f"after {k} triggers lr={lr}")
        es = EarlyStopping(50)
        stop = next(e for e in itertools.count(1) if (es.step(float(e)), es.should_stop)[1])
        check(stop == 51, f"early stop at {stop}")

        # the same through the real loop, with validation loss never improving after epoch 1
        tr, _ = generate_synthetic(SyntheticSpec("classification", 10, 1, max_len=4, vocab_size=8), seed=1)
        voc = vocabs_for(tr)
        model = HitModel(HitModelConfig(len(voc.chars), len(voc.words), "classifier", len(voc.labels),
                                        d_model=8, n_heads=2, l_c=1, l_w=1), seed=0)
        calls = iter(range(1, 10_000))
        monkeypatch.setattr(training, "validate", lambda m, b: (float(next(calls)), 0.0))
        res = train(model, TaskData(tr[:8], tr[8:], voc), TrainConfig(max_epochs=500, batch_size=8))
        check(res.epochs_run == 51, f"loop stopped at {res.epochs_run}")

        cfg = HitModelConfig(char_vocab_size=100, word_vocab_size=9005, head="classifier", n_labels=3,
                             tfidf_dim=5000, d_model=128, n_heads=4, l_c=2, l_w=2)
        count = HitModel(cfg, seed=0).parameter_count()
        check(1_000_000 <= count < 10_000_000, f"parameter count {count}")
        info.update(lr_after_7=f"{0.001 * 0.7 ** 7:.3e}", stop_epoch=stop, hien_parameters=f"{count:,}")


# -- 11 ---------------------------------------------------------------------------------------

def test_criterion_11_determinism_and_persistence(capsys, tmp_path):
    with criterion(capsys, 11, "deterministic logs and bitwise checkpoint round-trip") as info:
        logs = []
        for i in range(2):
            tr, va, te = _split("classification", 60, 10, seed=3, max_len=5, vocab_size=12)
            voc = vocabs_for(tr)
            tf = TfIdfExtractor(50).fit(ex.text for ex in tr)
            cfg = HitModelConfig(len(voc.chars), len(voc.words), "classifier", len(voc.labels),
                                 tfidf_dim=tf.n_features, d_model=8, n_heads=2, l_c=1, l_w=1, dropout=0.1)
            model = HitModel(cfg, seed=4)
            train(model, TaskData(tr, va, voc, tf), TrainConfig(max_epochs=3, batch_size=16, seed=4),
                  log_path=tmp_path / f"log{i}.jsonl")
            logs.append((tmp_path / f"log{i}.jsonl").read_bytes())
        check(logs[0] == logs[1], "training logs differ")
        path = save_checkpoint(tmp_path / "m.hit", model, voc, "sentiment", tf)
        again = load_checkpoint(path).build_model()
        b = batch_of(te, voc, tfidf=tf)
        check(np.array_equal(again.classify_forward(b), model.classify_forward(b)), "forward outputs differ")
        info.update(log_bytes=len(logs[0]), checkpoint_bytes=path.stat().st_size)
