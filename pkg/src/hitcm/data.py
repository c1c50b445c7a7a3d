"""
Corpus loading, vocabularies, tf-idf side features, padded batching, the
synthetic code-mixed corpora used for desk-scale verification, and the
cross-corpus vocabulary-overlap statistic.

All text is UTF-8. Tokenisation is whitespace splitting; lower-casing happens
at lookup time (vocabularies, tf-idf), never in the loaders, so a loaded file
can be written back byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, ContractError, ParseError, StateError

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

C_MAX = 24
N_MAX = 64


@dataclass
class Example:
    """One corpus item: tagging (``tags``), classification (``label``) or MT (``target``)."""

    tokens: list[str]
    tags: list[str] | None = None
    label: str | None = None
    target: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tokens:
            raise ContractError("example has no tokens")
        if self.tags is not None and len(self.tags) != len(self.tokens):
            raise ContractError(f"{len(self.tokens)} tokens but {len(self.tags)} tags")
        if self.target is not None and not self.target:
            raise ContractError("MT example has an empty target")

    @property
    def kind(self) -> str:
        if self.tags is not None:
            return "tagging"
        if self.target is not None:
            return "mt"
        return "classification"

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def tokenize(text: str) -> list[str]:
    return text.split()


# -- loaders ---------------------------------------------------------------

def _read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").split("\n")


def load_conll(path) -> list[Example]:
    """``token<TAB>tag`` lines, sentences separated by blank lines."""
    examples: list[Example] = []
    toks: list[str] = []
    tags: list[str] = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            if toks:
                examples.append(Example(toks, tags))
                toks, tags = [], []
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ParseError(f"expected 'token<TAB>tag', got {len(parts)} field(s): {line!r}", path, lineno)
        toks.append(parts[0])
        tags.append(parts[1])
    if toks:
        examples.append(Example(toks, tags))
    return examples


def serialize_conll(examples: Sequence[Example]) -> str:
    blocks = ["".join(f"{t}\t{g}\n" for t, g in zip(ex.tokens, ex.tags)) for ex in examples]
    return "\n".join(blocks)


def load_tsv_classification(path) -> list[Example]:
    """``text<TAB>label`` per line; blank lines skipped."""
    out = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        text, sep, label = line.rpartition("\t")
        if not sep or not label.strip() or not tokenize(text):
            raise ParseError(f"expected 'text<TAB>label': {line!r}", path, lineno)
        out.append(Example(tokenize(text), label=label.strip()))
    return out


def serialize_tsv_classification(examples: Sequence[Example]) -> str:
    return "".join(f"{ex.text}\t{ex.label}\n" for ex in examples)


def load_parallel(src_path, tgt_path) -> list[Example]:
    """Line-aligned source/target files."""
    def lines(p):
        ls = [ln.rstrip("\r") for ln in _read_lines(p)]
        if ls and ls[-1] == "":
            ls.pop()
        return ls

    src, tgt = lines(src_path), lines(tgt_path)
    if len(src) != len(tgt):
        raise AlignmentError(f"{len(src)} source lines vs {len(tgt)} target lines", src_path)
    out = []
    for i, (s, t) in enumerate(zip(src, tgt), start=1):
        if not tokenize(s) or not tokenize(t):
            raise ParseError("empty sentence in parallel data", src_path if not tokenize(s) else tgt_path, i)
        out.append(Example(tokenize(s), target=tokenize(t)))
    return out


def load_lexicon(path) -> set[str]:
    """One word per line."""
    return {ln.strip().lower() for ln in _read_lines(path) if ln.strip()}


def read_corpus_tokens(path) -> list[str]:
    """Tokens from any supported corpus file: the first TAB field of each line, split on whitespace."""
    toks = []
    for line in _read_lines(path):
        if "\t" in line:
            # CoNLL lines carry one token before the tag; TSV lines carry text.
            line = line.rpartition("\t")[0]
        toks.extend(t.lower() for t in tokenize(line))
    return toks


def label_set(examples: Iterable[Example]) -> list[str]:
    labels = set()
    for ex in examples:
        if ex.tags is not None:
            labels.update(ex.tags)
        elif ex.label is not None:
            labels.add(ex.label)
    return sorted(labels)


# -- vocabularies ------------------------------------------------------------

class Vocab:
    """Token <-> id table with reserved special ids at the front."""

    def __init__(self, tokens: Sequence[str] = (), specials: Sequence[str] = (PAD, UNK)):
        self.specials = tuple(specials)
        self.itos: list[str] = list(self.specials)
        for t in tokens:
            if t not in self.specials:
                self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str], n_specials: int = 2) -> "Vocab":
        return cls(itos[n_specials:], specials=itos[:n_specials])


def _ranked(counts: Counter, min_freq: int) -> list[str]:
    return [t for t, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])) if c >= min_freq]


def build_vocabs(examples: Sequence[Example], min_freq: int = 1) -> tuple[Vocab, Vocab]:
    """Character and word vocabularies over (source) tokens.

    Ids 0 and 1 are PAD and UNK; the rest follow descending frequency with
    lexicographic tie-breaks.
    """
    if not examples:
        raise ContractError("cannot build vocabularies from an empty corpus")
    words: Counter = Counter()
    chars: Counter = Counter()
    for ex in examples:
        for tok in ex.tokens:
            tok = tok.lower()
            words[tok] += 1
            chars.update(tok)
    return Vocab(_ranked(chars, 1)), Vocab(_ranked(words, min_freq))


def build_target_vocab(examples: Sequence[Example], min_freq: int = 1) -> Vocab:
    counts = Counter(t.lower() for ex in examples for t in ex.target)
    return Vocab(_ranked(counts, min_freq), specials=(PAD, UNK, BOS, EOS))


@dataclass
class Vocabs:
    """Everything needed to turn examples into id arrays for one task."""

    chars: Vocab
    words: Vocab
    labels: list[str] = field(default_factory=list)
    target: Vocab | None = None

    def label_id(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ContractError(f"unknown label {label!r}") from None

    def to_dict(self) -> dict:
        return {"chars": self.chars.to_list(), "words": self.words.to_list(), "labels": list(self.labels),
                "target": None if self.target is None else self.target.to_list()}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabs":
        return cls(Vocab.from_list(d["chars"]), Vocab.from_list(d["words"]), list(d.get("labels") or []),
                   None if d.get("target") is None else Vocab.from_list(d["target"], 4))


def vocabs_for(examples: Sequence[Example], min_freq: int = 1) -> Vocabs:
    chars, words = build_vocabs(examples, min_freq)
    kind = examples[0].kind
    target = build_target_vocab(examples, min_freq) if kind == "mt" else None
    return Vocabs(chars, words, label_set(examples), target)


# -- tf-idf --------------------------------------------------------------------

class TfIdfExtractor:
    """Word and character {1,2,3}-gram tf-idf with smoothed idf.

    ``idf = ln((1 + D) / (1 + df)) + 1``; features are the ``max_features``
    n-grams with the highest training-corpus counts; rows are L2-normalised.
    """

    def __init__(self, max_features: int = 5000, word_orders=(1, 2, 3), char_orders=(1, 2, 3)):
        self.max_features = max_features
        self.word_orders = tuple(word_orders)
        self.char_orders = tuple(char_orders)
        self.vocabulary: dict[str, int] | None = None
        self.idf: np.ndarray | None = None

    def ngrams(self, text: str) -> Counter:
        words = [w.lower() for w in tokenize(text)]
        grams: Counter = Counter()
        for n in self.word_orders:
            for i in range(len(words) - n + 1):
                grams["w:" + " ".join(words[i:i + n])] += 1
        joined = " ".join(words)
        for n in self.char_orders:
            for i in range(len(joined) - n + 1):
                grams["c:" + joined[i:i + n]] += 1
        return grams

    def fit(self, texts: Iterable[str]) -> "TfIdfExtractor":
        df: Counter = Counter()
        total: Counter = Counter()
        n_docs = 0
        for text in texts:
            g = self.ngrams(text)
            total.update(g)
            df.update(g.keys())
            n_docs += 1
        if n_docs == 0:
            raise ContractError("cannot fit tf-idf on an empty corpus")
        keep = sorted(total.items(), key=lambda kv: (-kv[1], kv[0]))[: self.max_features]
        terms = sorted(t for t, _ in keep)
        self.vocabulary = {t: i for i, t in enumerate(terms)}
        self.idf = np.array([math.log((1 + n_docs) / (1 + df[t])) + 1.0 for t in terms])
        return self

    @property
    def fitted(self) -> bool:
        return self.vocabulary is not None

    @property
    def n_features(self) -> int:
        if not self.fitted:
            raise StateError("tf-idf extractor is not fitted")
        return len(self.vocabulary)

    def transform(self, text: str) -> np.ndarray:
        if not self.fitted:
            raise StateError("tf-idf extractor is not fitted")
        vec = np.zeros(len(self.vocabulary))
        for g, c in self.ngrams(text).items():
            j = self.vocabulary.get(g)
            if j is not None:
                vec[j] = c * self.idf[j]
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def transform_many(self, texts: Iterable[str]) -> np.ndarray:
        rows = [self.transform(t) for t in texts]
        return np.stack(rows) if rows else np.zeros((0, self.n_features))

    def state_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        return {"max_features": self.max_features, "word_orders": list(self.word_orders),
                "char_orders": list(self.char_orders),
                "terms": None if self.vocabulary is None else sorted(self.vocabulary, key=self.vocabulary.get),
                "idf": None if self.idf is None else [float(x) for x in self.idf]}

    @classmethod
    def from_dict(cls, d: dict) -> "TfIdfExtractor":
        ex = cls(d["max_features"], d["word_orders"], d["char_orders"])
        if d.get("terms") is not None:
            ex.vocabulary = {t: i for i, t in enumerate(d["terms"])}
            ex.idf = np.asarray(d["idf"], dtype=np.float64)
        return ex


# -- batching --------------------------------------------------------------------

@dataclass
class Batch:
    char_ids: np.ndarray            # [B, N, C]
    word_ids: np.ndarray            # [B, N]
    word_mask: np.ndarray           # [B, N] bool
    char_mask: np.ndarray           # [B, N, C] bool
    indices: np.ndarray             # [B] positions in the source example list
    labels: np.ndarray | None = None    # [B] class ids or [B, N] tag ids
    tfidf: np.ndarray | None = None     # [B, F]
    tgt_in: np.ndarray | None = None    # [B, T] starts with BOS
    tgt_out: np.ndarray | None = None   # [B, T] ends with EOS
    tgt_mask: np.ndarray | None = None  # [B, T] bool

    @property
    def size(self) -> int:
        return self.word_ids.shape[0]


def make_batches(examples: Sequence[Example], vocabs: Vocabs, batch_size: int = 32,
                 shuffle_seed: int | None = None, c_max: int = C_MAX, n_max: int = N_MAX,
                 tfidf: TfIdfExtractor | None = None) -> list[Batch]:
    """Pad examples into batches; order is a seeded permutation when ``shuffle_seed`` is set."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(examples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(examples))
    cut_words = cut_chars = 0
    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        exs = [examples[i] for i in idx]
        toks = [[t.lower() for t in ex.tokens[:n_max]] for ex in exs]
        cut_words += sum(len(ex.tokens) > n_max for ex in exs)
        cut_chars += sum(len(t) > c_max for tt in toks for t in tt)
        b = len(exs)
        n = max(len(t) for t in toks)
        c = min(c_max, max(len(w) for tt in toks for w in tt))
        char_ids = np.zeros((b, n, c), dtype=np.int64)
        word_ids = np.zeros((b, n), dtype=np.int64)
        word_mask = np.zeros((b, n), dtype=bool)
        char_mask = np.zeros((b, n, c), dtype=bool)
        for r, tt in enumerate(toks):
            word_ids[r, :len(tt)] = vocabs.words.encode(tt)
            word_mask[r, :len(tt)] = True
            for j, w in enumerate(tt):
                w = w[:c_max]
                char_ids[r, j, :len(w)] = vocabs.chars.encode(w)
                char_mask[r, j, :len(w)] = True
        batch = Batch(char_ids, word_ids, word_mask, char_mask, np.asarray(idx, dtype=np.int64))
        kind = exs[0].kind
        if kind == "classification":
            if all(ex.label is not None for ex in exs):
                batch.labels = np.array([vocabs.labels.index(ex.label) if ex.label in vocabs.labels else -1
                                         for ex in exs], dtype=np.int64)
            if tfidf is not None:
                batch.tfidf = tfidf.transform_many(ex.text for ex in exs)
        elif kind == "tagging":
            labels = np.zeros((b, n), dtype=np.int64)
            for r, ex in enumerate(exs):
                tags = ex.tags[:n_max]
                # unseen tags (e.g. in a test split) get -1; they cannot enter a loss
                labels[r, :len(tags)] = [vocabs.labels.index(t) if t in vocabs.labels else -1 for t in tags]
            batch.labels = labels
        elif kind == "mt":
            tv = vocabs.target
            tgts = [tv.encode(t.lower() for t in ex.target[: n_max - 1]) for ex in exs]
            t_len = max(len(t) for t in tgts) + 1
            tin = np.zeros((b, t_len), dtype=np.int64)
            tout = np.zeros((b, t_len), dtype=np.int64)
            tmask = np.zeros((b, t_len), dtype=bool)
            for r, t in enumerate(tgts):
                tin[r, : len(t) + 1] = [BOS_ID] + t
                tout[r, : len(t) + 1] = t + [EOS_ID]
                tmask[r, : len(t) + 1] = True
            batch.tgt_in, batch.tgt_out, batch.tgt_mask = tin, tout, tmask
        batches.append(batch)
    if cut_words or cut_chars:
        log.warning("truncated %d sentence(s) to %d words and %d word(s) to %d chars",
                    cut_words, n_max, cut_chars, c_max)
    return batches


def split_validation(examples: Sequence[Example], fraction: float = 0.1, seed: int = 0):
    """Seeded (train, validation) split of a training list."""
    perm = np.random.default_rng(seed).permutation(len(examples))
    n_val = max(1, int(round(len(examples) * fraction)))
    val = set(perm[:n_val].tolist())
    return ([ex for i, ex in enumerate(examples) if i not in val],
            [ex for i, ex in enumerate(examples) if i in val])


# -- synthetic corpora -------------------------------------------------------------

POSITIVE_TRIGGERS = ("badhai", "shukriya", "mubarak", "zabardast")
NEGATIVE_TRIGGERS = ("bekar", "ghatiya", "nafrat", "bakwas")
FILLER_SEED_WORDS = ("sir", "ho", "ke", "liye", "yaar", "bhai", "kya", "hai", "aaj", "kal", "the",
                     "movie", "match", "ye", "wo", "hum", "tum", "main", "and", "is", "to", "se",
                     "par", "bhi", "abhi", "phir", "log", "ghar", "office", "team", "news", "<url>")

_CONSONANTS = "bdkmprstvhcgly"
_VOWELS = "aeiou"

TAG_RULES = (
    ("@", "prefix", "MENTION"),
    ("#", "prefix", "HASHTAG"),
    ("ing", "suffix", "VERB"),
    ("wala", "suffix", "NOUN"),
    ("ly", "suffix", "ADV"),
    ("ji", "suffix", "PROPN"),
)


def spelling_variant(word: str) -> str:
    """Double the last two vowels, e.g. ``badhai`` -> ``badhaaii``."""
    pos = [i for i, ch in enumerate(word) if ch in _VOWELS][-2:]
    return "".join(ch * 2 if i in pos else ch for i, ch in enumerate(word))


def trigger_label(tokens: Sequence[str]) -> str:
    """Recompute a synthetic sentiment label from its trigger lexemes."""
    pos = {*POSITIVE_TRIGGERS, *map(spelling_variant, POSITIVE_TRIGGERS)}
    neg = {*NEGATIVE_TRIGGERS, *map(spelling_variant, NEGATIVE_TRIGGERS)}
    low = {t.lower() for t in tokens}
    if low & pos:
        return "pos"
    if low & neg:
        return "neg"
    return "neu"


def shape_tag(word: str) -> str:
    if word.isdigit():
        return "NUM"
    for pat, where, tag in TAG_RULES:
        if (where == "prefix" and word.startswith(pat)) or (where == "suffix" and word.endswith(pat)):
            return tag
    return "X"


@dataclass(frozen=True)
class SyntheticSpec:
    """What to generate. ``kind``: classification | tagging | copy | reverse."""

    kind: str
    n_train: int
    n_test: int | None = None
    min_len: int = 3
    max_len: int = 10
    vocab_size: int = 50
    perturb_fraction: float = 0.5

    @property
    def test_size(self) -> int:
        return self.n_test if self.n_test is not None else max(1, round(self.n_train / 9))


def _syllable_word(rng, lo=2, hi=4, consonants="bdkmprstvh", vowels="aeou") -> str:
    n = int(rng.integers(lo, hi + 1))
    return "".join(str(rng.choice(list(consonants))) + str(rng.choice(list(vowels))) for _ in range(n))


def _fillers(rng, n: int, banned: set[str]) -> list[str]:
    words = [w for w in FILLER_SEED_WORDS if w not in banned]
    seen = set(words) | banned
    while len(words) < n:
        w = _syllable_word(rng, 1, 3, _CONSONANTS, _VOWELS)
        if w not in seen and trigger_label([w]) == "neu":
            seen.add(w)
            words.append(w)
    return words


def generate_synthetic(spec: SyntheticSpec, seed: int) -> tuple[list[Example], list[Example]]:
    """Seeded (train, test) corpora whose labels follow known rules."""
    rng = np.random.default_rng(seed)
    total = spec.n_train + spec.test_size
    if spec.kind == "classification":
        exs = _gen_classification(rng, spec, total)
    elif spec.kind == "tagging":
        exs = _gen_tagging(rng, spec, total)
    elif spec.kind in ("copy", "reverse"):
        exs = _gen_mt(rng, spec, total)
    else:
        raise ValueError(f"unknown synthetic task kind {spec.kind!r}")
    return exs[: spec.n_train], exs[spec.n_train:]


def _gen_classification(rng, spec: SyntheticSpec, total: int) -> list[Example]:
    triggers = {"pos": POSITIVE_TRIGGERS, "neg": NEGATIVE_TRIGGERS}
    banned = set(POSITIVE_TRIGGERS + NEGATIVE_TRIGGERS)
    banned |= {spelling_variant(w) for w in banned}
    fillers = _fillers(rng, 200, banned)
    out = []
    for i in range(total):
        label = ("neg", "neu", "pos")[int(rng.integers(3))]
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        toks = [str(rng.choice(fillers)) for _ in range(n)]
        meta = {}
        if label != "neu":
            word = str(rng.choice(triggers[label]))
            perturbed = i >= spec.n_train and rng.random() < spec.perturb_fraction
            if perturbed:
                word = spelling_variant(word)
            pos = int(rng.integers(n + 1))
            toks.insert(pos, word)
            meta = {"trigger_index": pos, "perturbed": bool(perturbed)}
        out.append(Example(toks, label=label, meta=meta))
    return out


def _gen_tagging(rng, spec: SyntheticSpec, total: int) -> list[Example]:
    def word():
        r = int(rng.integers(8))
        stem = _syllable_word(rng, 1, 3)
        if r == 0:
            return "@" + stem
        if r == 1:
            return "#" + stem
        if r == 2:
            return str(int(rng.integers(1, 3000)))
        if r == 7:
            return stem
        return stem + ("ing", "wala", "ly", "ji")[r - 3]

    out = []
    for _ in range(total):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        toks = [word() for _ in range(n)]
        out.append(Example(toks, tags=[shape_tag(t) for t in toks]))
    return out


def _gen_mt(rng, spec: SyntheticSpec, total: int) -> list[Example]:
    lex: list[str] = []
    while len(lex) < spec.vocab_size:
        w = _syllable_word(rng, 1, 3, _CONSONANTS, _VOWELS)
        if w not in lex:
            lex.append(w)
    out = []
    for _ in range(total):
        n = int(rng.integers(1, spec.max_len + 1))
        src = [lex[int(j)] for j in rng.integers(0, len(lex), size=n)]
        tgt = list(src) if spec.kind == "copy" else src[::-1]
        out.append(Example(src, target=tgt))
    return out


# -- corpus statistics -----------------------------------------------------------

def vocab_overlap(source: Iterable[str], target: Iterable[str],
                  english: set[str] | None = None) -> tuple[float, float | None]:
    """(share of source word types found in target, English share of those shared types)."""
    src = {t.lower() for t in source}
    if not src:
        raise ContractError("source corpus has an empty vocabulary")
    tgt = {t.lower() for t in target}
    shared = src & tgt
    overlap = len(shared) / len(src)
    if english is None:
        return overlap, None
    eng = {w.lower() for w in english}
    return overlap, (len(shared & eng) / len(shared) if shared else 0.0)
