"""
FAME encoder blocks: multi-headed self-attention and outer-product attention
run side by side, mixed by a two-way softmax gate, then the usual
Add & Norm / feed-forward / Add & Norm sublayers (post-norm).

Inputs are ``[N, d]`` or ``[B, N, d]``. Masks are boolean, ``True`` meaning
"may attend", shaped ``[Nq, Nk]`` or ``[B, Nq, Nk]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, ShapeError
from .numerics import Tensor


@dataclass(frozen=True)
class FameConfig:
    d_model: int
    n_heads: int = 1
    d_ff: int | None = None
    dropout: float = 0.1
    use_opa: bool = True

    def __post_init__(self):
        if self.d_model < 1 or self.n_heads < 1:
            raise ConfigError("d_model and n_heads must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigError(f"n_heads={self.n_heads} does not divide d_model={self.d_model}")
        if self.d_ff is not None and self.d_ff < 1:
            raise ConfigError("d_ff must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 2 * self.d_model


class _Params:
    """Named-tensor container; subclasses are dataclasses of Tensor fields."""

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, _Params):
                out.update(v.named(f"{prefix}{f.name}."))
            else:
                out[prefix + f.name] = v
        return out


@dataclass
class MsaWeights(_Params):
    # Per-head projections are stored side by side: head h owns columns
    # h*d_k:(h+1)*d_k of wq/wk/wv and rows h*d_k:(h+1)*d_k of wo.
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    n_heads: int = 1

    def named(self, prefix=""):
        return {prefix + k: getattr(self, k) for k in ("wq", "wk", "wv", "wo")}

    @classmethod
    def init(cls, d: int, n_heads: int, rng, dtype=nx.DEFAULT_DTYPE) -> "MsaWeights":
        mk = lambda: Tensor(nx.glorot(rng, d, d, dtype=dtype), requires_grad=True)
        return cls(mk(), mk(), mk(), mk(), n_heads)


@dataclass
class OpaWeights(_Params):
    wq: Tensor
    wk: Tensor
    wv: Tensor
    u: Tensor

    @classmethod
    def init(cls, d: int, rng, dtype=nx.DEFAULT_DTYPE) -> "OpaWeights":
        mk = lambda: Tensor(nx.glorot(rng, d, d, dtype=dtype), requires_grad=True)
        wq, wk, wv = mk(), mk(), mk()
        return cls(wq, wk, wv, Tensor(np.full(d, 1.0 / d, dtype=dtype), requires_grad=True))


@dataclass
class FeedForward(_Params):
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, d: int, d_ff: int, rng, dtype=nx.DEFAULT_DTYPE) -> "FeedForward":
        return cls(
            Tensor(nx.glorot(rng, d, d_ff, dtype=dtype), requires_grad=True),
            Tensor(np.zeros(d_ff, dtype=dtype), requires_grad=True),
            Tensor(nx.glorot(rng, d_ff, d, dtype=dtype), requires_grad=True),
            Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        )


@dataclass
class LayerNormWeights(_Params):
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int, dtype=nx.DEFAULT_DTYPE) -> "LayerNormWeights":
        return cls(Tensor(np.ones(d, dtype=dtype), requires_grad=True),
                   Tensor(np.zeros(d, dtype=dtype), requires_grad=True))


@dataclass
class FameWeights(_Params):
    """One encoder layer. ``opa`` and ``gate`` are absent when OPA is ablated."""

    msa: MsaWeights
    opa: OpaWeights | None
    gate: Tensor | None
    ffn: FeedForward
    ln1: LayerNormWeights
    ln2: LayerNormWeights
    dropout: float = 0.1

    def named(self, prefix=""):
        out = self.msa.named(prefix + "msa.")
        if self.opa is not None:
            out.update(self.opa.named(prefix + "opa."))
            out[prefix + "gate"] = self.gate
        out.update(self.ffn.named(prefix + "ffn."))
        out.update(self.ln1.named(prefix + "ln1."))
        out.update(self.ln2.named(prefix + "ln2."))
        return out

    @classmethod
    def init(cls, cfg: FameConfig, rng, dtype=nx.DEFAULT_DTYPE) -> "FameWeights":
        d = cfg.d_model
        msa = MsaWeights.init(d, cfg.n_heads, rng, dtype)
        opa = OpaWeights.init(d, rng, dtype) if cfg.use_opa else None
        gate = Tensor(np.zeros(2, dtype=dtype), requires_grad=True) if cfg.use_opa else None
        return cls(msa, opa, gate, FeedForward.init(d, cfg.ff_width, rng, dtype),
                   LayerNormWeights.init(d, dtype), LayerNormWeights.init(d, dtype), cfg.dropout)

    def alphas(self) -> Tensor:
        if self.gate is None:
            return Tensor(np.array([1.0, 0.0], dtype=self.msa.wq.dtype))
        return nx.softmax(self.gate)


@dataclass
class DecoderWeights(_Params):
    """FAME self-attention (causal) followed by MSA cross-attention."""

    self_block: FameWeights
    cross: MsaWeights
    ln_cross: LayerNormWeights

    def named(self, prefix=""):
        out = {}
        fb = self.self_block
        out.update(fb.msa.named(prefix + "msa."))
        if fb.opa is not None:
            out.update(fb.opa.named(prefix + "opa."))
            out[prefix + "gate"] = fb.gate
        out.update(self.cross.named(prefix + "cross."))
        out.update(self.ln_cross.named(prefix + "ln_cross."))
        out.update(fb.ffn.named(prefix + "ffn."))
        out.update(fb.ln1.named(prefix + "ln1."))
        out.update(fb.ln2.named(prefix + "ln2."))
        return out

    @classmethod
    def init(cls, cfg: FameConfig, rng, dtype=nx.DEFAULT_DTYPE) -> "DecoderWeights":
        block = FameWeights.init(cfg, rng, dtype)
        return cls(block, MsaWeights.init(cfg.d_model, cfg.n_heads, rng, dtype),
                   LayerNormWeights.init(cfg.d_model, dtype))


# -- masks ------------------------------------------------------------------

def padding_mask(key_mask, n_queries: int | None = None) -> np.ndarray:
    """``[B, Nk]`` key validity -> ``[B, Nq, Nk]`` attention mask (columns blocked)."""
    km = np.asarray(key_mask, dtype=bool)
    nq = km.shape[-1] if n_queries is None else n_queries
    return np.broadcast_to(km[..., None, :], km.shape[:-1] + (nq, km.shape[-1]))


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def _check_mask(mask, nq: int, nk: int) -> np.ndarray | None:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-2:] != (nq, nk):
        raise ShapeError(f"mask shape {mask.shape} does not match {nq} queries x {nk} keys")
    if not np.all(mask.any(axis=-1)):
        raise ContractError("attention mask leaves a query row with no attendable key")
    return mask


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return nx.reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise ShapeError(f"attention input must be [N, d] or [B, N, d], got {x.shape}")
    return x, False


# -- attention ---------------------------------------------------------------

def msa_forward(x: Tensor, w: MsaWeights, mask=None, memory: Tensor | None = None) -> Tensor:
    """Multi-headed scaled dot-product attention, projected by ``wo``.

    With ``memory`` given, keys and values come from it (cross-attention).
    """
    x, squeeze = _batched(x)
    src = x if memory is None else _batched(memory)[0]
    b, nq, d = x.shape
    nk = src.shape[1]
    h = w.n_heads
    dk = d // h
    mask = _check_mask(mask, nq, nk)

    def heads(t: Tensor, n: int) -> Tensor:
        return nx.transpose(nx.reshape(t, (t.shape[0], n, h, dk)), (0, 2, 1, 3))

    q = heads(x @ w.wq, nq)
    k = heads(src @ w.wk, nk)
    v = heads(src @ w.wv, nk)
    scores = nx.scale(q @ nx.swap_last(k), 1.0 / math.sqrt(dk))
    if mask is not None:
        mask = mask[:, None] if mask.ndim == 3 else mask
    attn = nx.softmax(scores, axis=-1, mask=mask)
    z = nx.transpose(attn @ v, (0, 2, 1, 3))
    out = nx.reshape(z, (z.shape[0], nq, d)) @ w.wo
    return nx.reshape(out, (nq, d)) if squeeze else out


def opa_forward(x: Tensor, w: OpaWeights, mask=None) -> Tensor:
    """Outer-product attention contracted by the learned vector ``u``.

    For query q, ``M_q = sum_i tanh(q * k_i / sqrt(d)) (outer) v_i`` and the
    output is ``u^T M_q``. Since ``u^T (a outer b) = (u . a) b`` the matrix is
    never formed: each key gets the scalar ``u . tanh(q * k_i / sqrt(d))``.
    Masked keys are dropped from the sum.
    """
    x, squeeze = _batched(x)
    b, n, d = x.shape
    mask = _check_mask(mask, n, n)
    q = nx.reshape(x @ w.wq, (b, n, 1, d))
    k = nx.reshape(x @ w.wk, (b, 1, n, d))
    v = x @ w.wv
    t = nx.tanh(nx.scale(q * k, 1.0 / math.sqrt(d)))
    s = nx.reshape(t @ nx.reshape(w.u, (d, 1)), (b, n, n))
    if mask is not None:
        s = s * np.broadcast_to(mask, (b, n, n)).astype(x.dtype)
    out = s @ v
    return nx.reshape(out, (n, d)) if squeeze else out


def opa_outer_matrices(x, w: OpaWeights, mask=None) -> np.ndarray:
    """The un-contracted ``M_q`` matrices, ``[..., N, d, d]`` (no gradient)."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x)
    d = xd.shape[-1]
    q, k, v = xd @ w.wq.data, xd @ w.wk.data, xd @ w.wv.data
    t = np.tanh(q[..., :, None, :] * k[..., None, :, :] / math.sqrt(d))
    if mask is not None:
        t = t * np.asarray(mask, dtype=xd.dtype)[..., None]
    return np.einsum("...qij,...il->...qjl", t, v)


def fame_forward(x: Tensor, w: FameWeights, mask=None, training: bool = False, rng=None) -> Tensor:
    """One FAME encoder block (post-norm)."""
    h = _fused_attention(x, w, mask)
    y = nx.layer_norm(x + nx.dropout(h, w.dropout, training, rng), w.ln1.gain, w.ln1.bias)
    return _ffn_sublayer(y, w, training, rng)


def _fused_attention(x: Tensor, w: FameWeights, mask) -> Tensor:
    z_self = msa_forward(x, w.msa, mask)
    if w.opa is None:
        return z_self
    z_outer = opa_forward(x, w.opa, mask)
    alpha = w.alphas()
    return z_self * alpha[0] + z_outer * alpha[1]


def _ffn_sublayer(y: Tensor, w: FameWeights, training: bool, rng) -> Tensor:
    f = w.ffn
    hidden = nx.relu(y @ f.w1 + f.b1)
    out = hidden @ f.w2 + f.b2
    return nx.layer_norm(y + nx.dropout(out, w.dropout, training, rng), w.ln2.gain, w.ln2.bias)


def decoder_forward(y: Tensor, w: DecoderWeights, memory: Tensor, self_mask, cross_mask,
                    training: bool = False, rng=None) -> Tensor:
    """Decoder layer: causal FAME self-attention, MSA cross-attention, feed-forward."""
    blk = w.self_block
    h = _fused_attention(y, blk, self_mask)
    y = nx.layer_norm(y + nx.dropout(h, blk.dropout, training, rng), blk.ln1.gain, blk.ln1.bias)
    c = msa_forward(y, w.cross, cross_mask, memory=memory)
    y = nx.layer_norm(y + nx.dropout(c, blk.dropout, training, rng), w.ln_cross.gain, w.ln_cross.bias)
    return _ffn_sublayer(y, blk, training, rng)


def positional_encoding(n: int, d_model: int, dtype=nx.DEFAULT_DTYPE) -> np.ndarray:
    """Fixed sinusoidal table: sin on even columns, cos on odd columns."""
    if n < 1 or d_model < 1:
        raise ValueError("positional_encoding needs n >= 1 and d_model >= 1")
    pos = np.arange(n, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, two_i / d_model)
    pe = np.zeros((n, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe.astype(dtype)
