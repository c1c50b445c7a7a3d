"""
Checkpoint container and transfer loading.

Layout (little-endian)::

    b"HIT1" | u32 format version | u64 header length | UTF-8 JSON header | array bytes

The header lists every array as ``{name, dtype, shape, offset, nbytes}`` with
offsets relative to the start of the array section, and carries the model
config, its fingerprint, vocabularies, the fitted tf-idf state and optional
optimizer scalars (moments are stored as ``opt.m.*`` / ``opt.v.*`` arrays).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import TfIdfExtractor, Vocabs
from .errors import ContractError, IncompatibleCheckpointError, ParseError
from .model import HitModel, HitModelConfig
from .numerics import Adam

MAGIC = b"HIT1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: HitModelConfig
    arrays: dict[str, np.ndarray]
    vocabs: Vocabs
    task: str = ""
    tfidf: TfIdfExtractor | None = None
    best_metric: float | None = None
    optimizer: dict | None = None
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def model_arrays(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if not k.startswith("opt.")}

    def build_model(self) -> HitModel:
        model = HitModel(self.config, seed=0)
        model.load_arrays(self.model_arrays())
        return model


def save_checkpoint(path, model: HitModel, vocabs: Vocabs, task: str = "", tfidf: TfIdfExtractor | None = None,
                    best_metric: float | None = None, optimizer: Adam | None = None, meta: dict | None = None) -> Path:
    arrays = dict(model.state_arrays())
    opt_header = None
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters().items()}
        st = optimizer.state
        opt_header = {"t": st.t, "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps,
                      "params": [names[id(p)] for p in optimizer.params]}
        for p, m, v in zip(optimizer.params, st.m, st.v):
            arrays[f"opt.m.{names[id(p)]}"] = m
            arrays[f"opt.v.{names[id(p)]}"] = v
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(le.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "task": task,
        "config": model.config.to_dict(),
        "fingerprint": model.config.fingerprint(),
        "vocabs": vocabs.to_dict(),
        "tfidf": None if tfidf is None else tfidf.to_dict(),
        "best_metric": best_metric,
        "optimizer": opt_header,
        "meta": meta or {},
        "arrays": entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for raw in blobs:
            fh.write(raw)
    return path


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ParseError("not a HIT checkpoint (bad magic)", path)
    version, hlen = struct.unpack_from("<IQ", blob, 4)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint format version {version}", path)
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(blob[start:start + hlen].decode("utf-8"))
    base = start + hlen
    arrays = {}
    for e in header["arrays"]:
        lo = base + e["offset"]
        arr = np.frombuffer(blob, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=lo).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    config = HitModelConfig.from_dict(header["config"])
    if config.fingerprint() != header["fingerprint"]:
        raise ParseError("config fingerprint mismatch; header is corrupt", path)
    return Checkpoint(
        config=config, arrays=arrays, vocabs=Vocabs.from_dict(header["vocabs"]), task=header.get("task", ""),
        tfidf=None if header.get("tfidf") is None else TfIdfExtractor.from_dict(header["tfidf"]),
        best_metric=header.get("best_metric"), optimizer=header.get("optimizer"),
        meta=header.get("meta", {}), version=version,
    )


def restore_optimizer(ckpt: Checkpoint, model: HitModel) -> Adam | None:
    if ckpt.optimizer is None:
        return None
    o = ckpt.optimizer
    params = model.named_parameters()
    opt = Adam([params[n] for n in o["params"]], lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"])
    opt.state.t = o["t"]
    opt.state.m = [ckpt.arrays[f"opt.m.{n}"].copy() for n in o["params"]]
    opt.state.v = [ckpt.arrays[f"opt.v.{n}"].copy() for n in o["params"]]
    return opt


def transfer_load(ckpt: Checkpoint, target: HitModelConfig, freeze: bool, seed: int = 0) -> HitModel:
    """New model for ``target`` with encoder weights (both stacks and embeddings)
    taken from ``ckpt``; the head starts fresh. The checkpoint vocabularies are
    adopted, so vocabulary sizes come from it. With ``freeze`` the encoder is
    excluded from training."""
    target = replace(target, char_vocab_size=ckpt.config.char_vocab_size,
                     word_vocab_size=ckpt.config.word_vocab_size)
    model = HitModel(target, seed=seed)
    params = model.named_parameters()
    src = ckpt.model_arrays()
    mismatches = []
    for name in model.encoder_parameter_names():
        if name not in src:
            mismatches.append(f"{name}: missing from checkpoint")
        elif tuple(src[name].shape) != params[name].shape:
            mismatches.append(f"{name}: checkpoint {tuple(src[name].shape)} vs target {params[name].shape}")
        elif src[name].dtype != params[name].dtype:
            mismatches.append(f"{name}: checkpoint dtype {src[name].dtype} vs target {params[name].dtype}")
    if mismatches:
        raise IncompatibleCheckpointError(mismatches)
    for name in model.encoder_parameter_names():
        params[name].data[...] = src[name]
    if freeze:
        model.freeze(model.encoder_parameter_names())
    return model


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def check_task(ckpt: Checkpoint, head: str) -> None:
    if ckpt.config.head != head:
        raise ContractError(f"checkpoint has a {ckpt.config.head} head, expected {head}")
