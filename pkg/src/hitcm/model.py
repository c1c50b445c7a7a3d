"""
The two-level HIT hierarchy and its task heads.

A character-level stack of FAME blocks turns each word's characters into one
sub-word vector (mean over character positions). Those vectors are summed
with a learned word embedding and a positional encoding and fed to the
word-level stack. Heads: sentence classifier (pooled words + tf-idf), per-token
tagger, and a seq2seq decoder for translation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import numerics as nx
from .attention import (DecoderWeights, FameConfig, FameWeights, causal_mask, decoder_forward,
                        fame_forward, padding_mask, positional_encoding)
from .data import BOS_ID, EOS_ID, Batch
from .errors import ConfigError, ContractError, ShapeError, UnsupportedHeadError
from .numerics import Tensor

HEADS = ("classifier", "tagger", "seq2seq")


@dataclass(frozen=True)
class HitModelConfig:
    char_vocab_size: int
    word_vocab_size: int
    head: str = "classifier"
    n_labels: int = 2
    target_vocab_size: int = 0
    tfidf_dim: int = 0
    d_model: int = 128
    n_heads: int = 4
    l_c: int = 2
    l_w: int = 2
    l_dec: int | None = None
    d_ff: int | None = None
    c_max: int = 24
    n_max: int = 64
    dropout: float = 0.1
    use_opa: bool = True
    use_char_level: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.use_char_level and self.l_c < 1:
            raise ConfigError("l_c must be >= 1 unless the char-level encoder is ablated")
        if self.l_w < 1:
            raise ConfigError("l_w must be >= 1")
        if self.head == "seq2seq" and self.target_vocab_size < 5:
            raise ConfigError("seq2seq head needs a target vocabulary")
        if self.head != "seq2seq" and self.n_labels < 1:
            raise ConfigError("n_labels must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        FameConfig(self.d_model, self.n_heads, self.d_ff, self.dropout, self.use_opa)

    @property
    def fame(self) -> FameConfig:
        return FameConfig(self.d_model, self.n_heads, self.d_ff, self.dropout, self.use_opa)

    @property
    def decoder_layers(self) -> int:
        return self.l_dec if self.l_dec is not None else self.l_w

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HitModelConfig":
        return cls(**d)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Attribution:
    tokens: list[str] | None
    word_scores: np.ndarray     # [N]
    char_scores: np.ndarray     # [N, C], zero on padding
    target: object


def _embedding(rng, n: int, d: int, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, size=(n, d)).astype(dtype), requires_grad=True)


class HitModel:
    """Parameters plus forward passes for one task."""

    def __init__(self, config: HitModelConfig, seed: int = 0):
        self.config = c = config
        self.dtype = np.dtype(c.dtype)
        rng = np.random.default_rng(seed)
        d, dt = c.d_model, self.dtype
        self.char_emb = _embedding(rng, c.char_vocab_size, d, dt) if c.use_char_level else None
        self.char_blocks = [FameWeights.init(c.fame, rng, dt) for _ in range(c.l_c)] if c.use_char_level else []
        self.word_emb = _embedding(rng, c.word_vocab_size, d, dt)
        self.word_blocks = [FameWeights.init(c.fame, rng, dt) for _ in range(c.l_w)]
        self.head: dict[str, Tensor] = {}
        self.dec_blocks: list[DecoderWeights] = []
        if c.head == "classifier":
            self.head["w"] = Tensor(nx.glorot(rng, d + c.tfidf_dim, c.n_labels, dtype=dt), requires_grad=True)
            self.head["b"] = Tensor(np.zeros(c.n_labels, dtype=dt), requires_grad=True)
        elif c.head == "tagger":
            self.head["w"] = Tensor(nx.glorot(rng, d, c.n_labels, dtype=dt), requires_grad=True)
            self.head["b"] = Tensor(np.zeros(c.n_labels, dtype=dt), requires_grad=True)
        else:
            self.head["tgt_emb"] = _embedding(rng, c.target_vocab_size, d, dt)
            self.dec_blocks = [DecoderWeights.init(c.fame, rng, dt) for _ in range(c.decoder_layers)]
            self.head["w"] = Tensor(nx.glorot(rng, d, c.target_vocab_size, dtype=dt), requires_grad=True)
            self.head["b"] = Tensor(np.zeros(c.target_vocab_size, dtype=dt), requires_grad=True)
        self._pe = positional_encoding(max(c.c_max, c.n_max) + 1, d, dt)

    # -- parameters ----------------------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.char_emb is not None:
            out["char_emb"] = self.char_emb
        for i, blk in enumerate(self.char_blocks):
            out.update(blk.named(f"char.{i}."))
        out["word_emb"] = self.word_emb
        for i, blk in enumerate(self.word_blocks):
            out.update(blk.named(f"word.{i}."))
        for name, t in self.head.items():
            out[f"head.{name}"] = t
        for i, blk in enumerate(self.dec_blocks):
            out.update(blk.named(f"dec.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def encoder_parameter_names(self) -> list[str]:
        return [n for n in self.named_parameters() if n.split(".")[0] in ("char_emb", "char", "word_emb", "word")]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        if strict and set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise ContractError(f"array names differ; missing={missing}, unexpected={extra}")
        for name, arr in arrays.items():
            p = params.get(name)
            if p is None:
                continue
            if p.shape != tuple(arr.shape):
                raise ShapeError(f"{name}: expected {p.shape}, got {tuple(arr.shape)}")
            p.data[...] = arr

    def freeze(self, names) -> None:
        params = self.named_parameters()
        for n in names:
            params[n].requires_grad = False

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_gates(self, logits) -> None:
        """Force every FAME gate (encoder and decoder) to the given two logits."""
        blocks = self.char_blocks + self.word_blocks + [b.self_block for b in self.dec_blocks]
        for blk in blocks:
            if blk.gate is not None:
                blk.gate.data[:] = logits

    # -- encoder ---------------------------------------------------------------
    def _pe_rows(self, n: int) -> np.ndarray:
        if n > self._pe.shape[0]:
            self._pe = positional_encoding(n, self.config.d_model, self.dtype)
        return self._pe[:n]

    def encode_chars(self, char_ids, char_mask=None, training=False, rng=None, probe=False):
        """``[W, C]`` character ids -> (``[W, d]`` sub-word vectors, char-level input tensor)."""
        if self.char_emb is None:
            raise ConfigError("char-level encoder is ablated in this model")
        ids = np.asarray(char_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        cmask = ids != 0 if char_mask is None else np.asarray(char_mask, dtype=bool).reshape(ids.shape)
        if ids.shape[1] < 1 or not np.all(cmask.any(axis=1)):
            raise ContractError("every word needs at least one character")
        ids = np.where(ids < self.config.char_vocab_size, ids, 1)
        x = nx.take(self.char_emb, ids) + self._pe_rows(ids.shape[1])
        if probe:
            x = Tensor(x.data, requires_grad=True)
        char_in = x
        mask = padding_mask(cmask)
        for blk in self.char_blocks:
            x = fame_forward(x, blk, mask, training, rng)
        weight = (cmask / cmask.sum(axis=1, keepdims=True)).astype(self.dtype)[..., None]
        return (x * weight).sum(axis=1), char_in

    def encode_word_chars(self, char_ids) -> np.ndarray:
        """Sub-word vector for one word (eval mode)."""
        sb, _ = self.encode_chars(np.asarray(char_ids)[None])
        return sb.data[0]

    def encode(self, batch: Batch, training=False, rng=None, probe=False) -> dict:
        """Run both stacks. Returns ``out`` [B, N, d] plus intermediates."""
        c = self.config
        word_mask = np.asarray(batch.word_mask, dtype=bool)
        if word_mask.ndim != 2:
            raise ShapeError(f"word_mask must be [B, N], got {word_mask.shape}")
        if not np.all(word_mask.any(axis=1)):
            raise ContractError("sentence with no real tokens (all padding)")
        b, n = word_mask.shape
        word_ids = np.where(batch.word_ids < c.word_vocab_size, batch.word_ids, 1)
        emb = nx.take(self.word_emb, word_ids) + self._pe_rows(n)
        char_in = None
        real = np.flatnonzero(word_mask.reshape(-1))
        if c.use_char_level:
            cw = batch.char_ids.shape[-1]
            chars = batch.char_ids.reshape(b * n, cw)[real]
            cmask = batch.char_mask.reshape(b * n, cw)[real]
            sb_real, char_in = self.encode_chars(chars, cmask, training, rng, probe)
            slot = np.zeros(b * n, dtype=np.int64)
            slot[real] = np.arange(1, real.size + 1)
            padded = nx.concat([Tensor(np.zeros((1, c.d_model), dtype=self.dtype)), sb_real], axis=0)
            word_in = nx.reshape(nx.take(padded, slot), (b, n, c.d_model)) + emb
        else:
            word_in = emb
        if probe and not c.use_char_level:
            word_in = Tensor(word_in.data, requires_grad=True)
        x = word_in
        mask = padding_mask(word_mask)
        for blk in self.word_blocks:
            x = fame_forward(x, blk, mask, training, rng)
        return {"out": x, "word_in": word_in, "char_in": char_in, "real": real, "word_mask": word_mask}

    def encode_sentence(self, batch: Batch, training=False, rng=None) -> Tensor:
        return self.encode(batch, training, rng)["out"]

    # -- heads -----------------------------------------------------------------
    def _classifier_logits(self, enc: dict, batch: Batch, training, rng) -> Tensor:
        c = self.config
        m = enc["word_mask"]
        weight = (m / m.sum(axis=1, keepdims=True)).astype(self.dtype)[..., None]
        pooled = (enc["out"] * weight).sum(axis=1)
        if c.tfidf_dim:
            feats = batch.tfidf
            if feats is None or feats.shape != (m.shape[0], c.tfidf_dim):
                got = None if feats is None else feats.shape
                raise ContractError(f"expected tf-idf features of shape ({m.shape[0]}, {c.tfidf_dim}), got {got}")
            pooled = nx.concat([pooled, Tensor(np.asarray(feats, dtype=self.dtype))], axis=-1)
        pooled = nx.dropout(pooled, c.dropout, training, rng)
        return pooled @ self.head["w"] + self.head["b"]

    def _tagger_logits(self, enc: dict, training, rng) -> Tensor:
        h = nx.dropout(enc["out"], self.config.dropout, training, rng)
        return h @ self.head["w"] + self.head["b"]

    def _decoder_logits(self, enc: dict, tgt_in, tgt_mask=None, training=False, rng=None) -> Tensor:
        tgt_in = np.asarray(tgt_in, dtype=np.int64)
        b, t = tgt_in.shape
        keys = np.ones((b, t), dtype=bool) if tgt_mask is None else np.asarray(tgt_mask, dtype=bool)
        self_mask = causal_mask(t)[None] & keys[:, None, :]
        self_mask = self_mask | np.eye(t, dtype=bool)[None]
        cross_mask = padding_mask(enc["word_mask"], t)
        y = nx.take(self.head["tgt_emb"], tgt_in) + self._pe_rows(t)
        for blk in self.dec_blocks:
            y = decoder_forward(y, blk, enc["out"], self_mask, cross_mask, training, rng)
        y = nx.dropout(y, self.config.dropout, training, rng)
        return y @ self.head["w"] + self.head["b"]

    def logits(self, batch: Batch, training=False, rng=None) -> Tensor:
        enc = self.encode(batch, training, rng)
        head = self.config.head
        if head == "classifier":
            return self._classifier_logits(enc, batch, training, rng)
        if head == "tagger":
            return self._tagger_logits(enc, training, rng)
        return self._decoder_logits(enc, batch.tgt_in, batch.tgt_mask, training, rng)

    def loss(self, batch: Batch, training=False, rng=None) -> Tensor:
        z = self.logits(batch, training, rng)
        head = self.config.head
        if head == "classifier":
            return nx.cross_entropy(z, batch.labels)
        if head == "tagger":
            b, n, k = z.shape
            return nx.cross_entropy(nx.reshape(z, (b * n, k)), batch.labels.reshape(-1), batch.word_mask.reshape(-1))
        b, t, v = z.shape
        return nx.cross_entropy(nx.reshape(z, (b * t, v)), batch.tgt_out.reshape(-1), batch.tgt_mask.reshape(-1))

    def classify_forward(self, batch: Batch) -> np.ndarray:
        """``[B, L]`` class probabilities (eval mode)."""
        if self.config.head != "classifier":
            raise UnsupportedHeadError("classify_forward needs a classifier head")
        return nx.softmax(self.logits(batch)).data

    def tag_forward(self, batch: Batch) -> np.ndarray:
        """``[B, N, L]`` tag probabilities; padded rows are present but meaningless."""
        if self.config.head != "tagger":
            raise UnsupportedHeadError("tag_forward needs a tagger head")
        return nx.softmax(self.logits(batch)).data

    def predict(self, batch: Batch):
        """Class ids ``[B]``, tag id lists, or decoded target id lists."""
        head = self.config.head
        if head == "classifier":
            return self.classify_forward(batch).argmax(axis=-1)
        if head == "tagger":
            probs = self.tag_forward(batch)
            lens = batch.word_mask.sum(axis=1)
            return [probs[i, : lens[i]].argmax(axis=-1).tolist() for i in range(len(lens))]
        return self.translate_greedy(batch)

    # -- decoding ------------------------------------------------------------------
    def translate_greedy(self, batch: Batch, max_len: int = 64) -> list[list[int]]:
        """Greedy argmax decoding; returns target ids without BOS/EOS."""
        if self.config.head != "seq2seq" or not self.dec_blocks:
            raise ConfigError("translation needs a model with a seq2seq head")
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        enc = self.encode(batch)
        b = batch.word_ids.shape[0]
        seqs = np.full((b, 1), BOS_ID, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        out: list[list[int]] = [[] for _ in range(b)]
        for _ in range(max_len):
            z = self._decoder_logits(enc, seqs).data[:, -1]
            nxt = z.argmax(axis=-1)
            for i in range(b):
                if not done[i]:
                    if nxt[i] == EOS_ID:
                        done[i] = True
                    else:
                        out[i].append(int(nxt[i]))
            if done.all():
                break
            seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
        return out

    # -- attribution ---------------------------------------------------------------
    def gradcam_attribution(self, batch: Batch, target=None) -> Attribution:
        """Gradient-magnitude saliency for the first example of ``batch``.

        ``target``: class id (classifier) or a tag-id sequence (tagger);
        defaults to the model's own prediction. Scores are L2 norms of the loss
        gradient at the word-level inputs and the character-level inputs,
        each divided by its maximum (all zeros when the gradient vanishes).
        """
        head = self.config.head
        if head == "seq2seq":
            raise UnsupportedHeadError("attribution is defined for classifier and tagger heads only")
        one = _first(batch)
        if target is None:
            pred = self.predict(one)
            target = int(pred[0]) if head == "classifier" else pred[0]
        params = self.parameters()
        saved = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            with nx.Tape() as tape:
                enc = self.encode(one, probe=True)
                if head == "classifier":
                    z = self._classifier_logits(enc, one, False, None)
                    loss = nx.cross_entropy(z, [int(target)])
                else:
                    z = self._tagger_logits(enc, False, None)
                    n = z.shape[1]
                    tags = np.zeros(n, dtype=np.int64)
                    tags[: len(target)] = target
                    loss = nx.cross_entropy(nx.reshape(z, (n, z.shape[2])), tags, one.word_mask[0])
            tape.backward(loss)
        finally:
            for p, rg in zip(params, saved):
                p.requires_grad = rg
        n_real = int(one.word_mask[0].sum())
        wgrad = enc["word_in"].grad
        wnorm = np.zeros(n_real) if wgrad is None else np.linalg.norm(wgrad[0, :n_real], axis=-1)
        cw = one.char_ids.shape[-1]
        cnorm = np.zeros((n_real, cw))
        if enc["char_in"] is not None and enc["char_in"].grad is not None:
            cnorm = np.linalg.norm(enc["char_in"].grad, axis=-1) * one.char_mask[0, :n_real]
        return Attribution(None, _max_normalise(wnorm), _max_normalise(cnorm), target)

    # -- export ----------------------------------------------------------------------
    def subword_vectors(self, words: list[str], char_vocab) -> np.ndarray:
        """Sub-word encoder outputs for arbitrary words (eval mode)."""
        if not words:
            return np.zeros((0, self.config.d_model), dtype=self.dtype)
        cmax = self.config.c_max
        enc = [char_vocab.encode(w.lower()[:cmax]) for w in words]
        width = max(len(e) for e in enc)
        ids = np.zeros((len(words), width), dtype=np.int64)
        for i, e in enumerate(enc):
            ids[i, : len(e)] = e
        sb, _ = self.encode_chars(ids, ids != 0)
        return sb.data

    def with_config(self, **changes) -> HitModelConfig:
        return replace(self.config, **changes)


def _first(batch: Batch) -> Batch:
    sl = slice(0, 1)
    pick = lambda a: None if a is None else a[sl]
    return Batch(batch.char_ids[sl], batch.word_ids[sl], batch.word_mask[sl], batch.char_mask[sl],
                 batch.indices[sl], pick(batch.labels), pick(batch.tfidf), pick(batch.tgt_in),
                 pick(batch.tgt_out), pick(batch.tgt_mask))


def _max_normalise(a: np.ndarray) -> np.ndarray:
    top = a.max() if a.size else 0.0
    return a / top if top > 0 else np.zeros_like(a)
