"""Attention-based encoder-decoder with a conditional-GRU decoder.

Encoder: bidirectional GRU over source embeddings, states concatenated
``[forward; backward]``.  Decoder step::

    s~ = GRU1(e[y_prev], s_prev)
    c, alpha = attention(s~)
    s = GRU2(c, s~)
    t = W_t [e[y_prev]; c; s] + b_t
    o = W_o t + b_o

and per-word costs are ``logsumexp(o) - o`` (normalized) or ``-o``
(self-normalized, no partition function computed).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .numerics import DTYPE, DimensionError, logsumexp, sigmoid

BOS, EOS, UNK = 0, 1, 2
RESERVED = ("<bos>", "<eos>", "<unk>")

NORMALIZED = "normalized"
SELF_NORMALIZED = "self_normalized"
MODES = (NORMALIZED, SELF_NORMALIZED)


class VocabError(IndexError):
    """A word index or token is outside the vocabulary."""


class InputError(ValueError):
    """Malformed input sequence."""


class Vocabulary:
    """Bijective token/index map with ``<bos>``, ``<eos>``, ``<unk>`` at 0, 1, 2."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            raise VocabError(f"first three tokens must be {RESERVED}, got {tokens[:3]}")
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise VocabError(f"duplicate token {tok!r}")
            index[tok] = i
        self.tokens = tokens
        self._index = index

    @classmethod
    def build(cls, words: Iterable[str]) -> "Vocabulary":
        seen = dict.fromkeys(w for w in words if w not in RESERVED)
        return cls(list(RESERVED) + list(seen))

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def lookup(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, i: int) -> str:
        if not 0 <= i < len(self.tokens):
            raise VocabError(f"index {i} outside vocabulary of size {len(self.tokens)}")
        return self.tokens[i]

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.lookup(w) for w in words]

    def decode(self, ids: Iterable[int], strip_eos: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip_eos and i == EOS:
                break
            out.append(self.token(i))
        return out


@dataclass(frozen=True)
class Dims:
    src_vocab: int
    tgt_vocab: int
    d_emb: int = 32
    d_hid: int = 64
    d_att: int = 64
    d_out: int = 32

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def param_shapes(dims: Dims) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape manifest for every trainable tensor."""
    E, H, A, D = dims.d_emb, dims.d_hid, dims.d_att, dims.d_out
    shapes = {
        "src_emb": (dims.src_vocab, E),
        "tgt_emb": (dims.tgt_vocab, E),
    }
    for pre, d_in in (("enc_fwd", E), ("enc_bwd", E)):
        shapes[f"{pre}_Wx"] = (d_in, 3 * H)
        shapes[f"{pre}_Wh"] = (H, 3 * H)
        shapes[f"{pre}_b"] = (3 * H,)
    shapes.update({
        "init_W": (2 * H, H),
        "init_b": (H,),
        "att_W": (H, A),
        "att_U": (2 * H, A),
        "att_b": (A,),
        "att_v": (A,),
    })
    for pre, d_in in (("dec_gru1", E), ("dec_gru2", 2 * H)):
        shapes[f"{pre}_Wx"] = (d_in, 3 * H)
        shapes[f"{pre}_Wh"] = (H, 3 * H)
        shapes[f"{pre}_b"] = (3 * H,)
    shapes.update({
        "read_W": (E + 2 * H + H, D),
        "read_b": (D,),
        "out_W": (D, dims.tgt_vocab),
        "out_b": (dims.tgt_vocab,),
    })
    return shapes


class ModelParams:
    """Immutable container of all model tensors, keyed by manifest name."""

    def __init__(self, dims: Dims, tensors: Mapping[str, np.ndarray], dtype=DTYPE):
        shapes = param_shapes(dims)
        missing = set(shapes) - set(tensors)
        extra = set(tensors) - set(shapes)
        if missing or extra:
            raise DimensionError(f"tensor names differ from manifest: missing={sorted(missing)} extra={sorted(extra)}")
        frozen = {}
        for name, shape in shapes.items():
            arr = np.array(tensors[name], dtype=dtype, copy=True, order="C")
            if arr.shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
            arr.flags.writeable = False
            frozen[name] = arr
        self.dims = dims
        self._t = frozen

    @classmethod
    def init_uniform(cls, dims: Dims, rng: np.random.Generator, scale: float = 0.1, dtype=DTYPE):
        tensors = {
            name: rng.uniform(-scale, scale, size=shape)
            for name, shape in param_shapes(dims).items()
        }
        return cls(dims, tensors, dtype=dtype)

    def __getitem__(self, name):
        return self._t[name]

    def names(self):
        return list(self._t)

    def items(self):
        return self._t.items()

    @property
    def dtype(self):
        return self._t["src_emb"].dtype

    def astype(self, dtype):
        return ModelParams(self.dims, self._t, dtype=dtype)

    def to_dict(self, dtype=None):
        return {k: (v.astype(dtype) if dtype else v.copy()) for k, v in self._t.items()}

    def gru(self, prefix):
        return self._t[f"{prefix}_Wx"], self._t[f"{prefix}_Wh"], self._t[f"{prefix}_b"]

    def __eq__(self, other):
        if not isinstance(other, ModelParams) or other.dims != self.dims:
            return False
        return all(np.array_equal(v, other[k]) for k, v in self._t.items())


@dataclass(frozen=True)
class SourceEncoding:
    states: np.ndarray      # [|x|, 2H]
    proj: np.ndarray        # [|x|, A], U_a h_i + b_a
    tokens: tuple = ()

    def __len__(self):
        return self.states.shape[0]


@dataclass
class StepOutput:
    next_state: np.ndarray
    word_nll: np.ndarray
    attention_weights: np.ndarray
    scores: np.ndarray = field(repr=False, default=None)


def gru_step(weights, x, h):
    """One GRU update; works on single vectors or on row batches.

    ``weights`` is ``(Wx [in, 3H], Wh [H, 3H], b [3H])`` with gate blocks
    ordered update, reset, candidate.
    """
    Wx, Wh, b = weights
    H = Wh.shape[0]
    if x.shape[-1] != Wx.shape[0] or h.shape[-1] != H:
        raise DimensionError(f"gru_step: input {x.shape} / state {h.shape} vs weights {Wx.shape}, {Wh.shape}")
    gx = x @ Wx + b
    gzr = gx[..., : 2 * H] + h @ Wh[:, : 2 * H]
    z = sigmoid(gzr[..., :H])
    r = sigmoid(gzr[..., H:])
    n = np.tanh(gx[..., 2 * H:] + (r * h) @ Wh[:, 2 * H:])
    return h + z * (n - h)


def _check_ids(ids, size, what):
    for i in ids:
        if not 0 <= i < size:
            raise VocabError(f"{what} index {i} outside vocabulary of size {size}")


def encode(params: ModelParams, src: Sequence[int]) -> SourceEncoding:
    src = [int(i) for i in src]
    if not src:
        raise InputError("empty source sentence")
    _check_ids(src, params.dims.src_vocab, "source")
    H = params.dims.d_hid
    emb = params["src_emb"][src]
    fwd_w, bwd_w = params.gru("enc_fwd"), params.gru("enc_bwd")
    h = np.zeros(H, dtype=params.dtype)
    fwd = []
    for x in emb:
        h = gru_step(fwd_w, x, h)
        fwd.append(h)
    h = np.zeros(H, dtype=params.dtype)
    bwd = [None] * len(src)
    for i in range(len(src) - 1, -1, -1):
        h = gru_step(bwd_w, emb[i], h)
        bwd[i] = h
    states = np.concatenate([np.stack(fwd), np.stack(bwd)], axis=1)
    proj = states @ params["att_U"] + params["att_b"]
    return SourceEncoding(states=states, proj=proj, tokens=tuple(src))


def init_decoder_state(params: ModelParams, enc: SourceEncoding) -> np.ndarray:
    return np.tanh(enc.states[0] @ params["init_W"] + params["init_b"])


def attention(params: ModelParams, enc: SourceEncoding, query: np.ndarray):
    if query.shape[-1] != params.dims.d_hid:
        raise DimensionError(f"attention query has dim {query.shape[-1]}, expected {params.dims.d_hid}")
    pre = np.tanh(enc.proj + query @ params["att_W"])
    r = pre @ params["att_v"]
    e = np.exp(r - r.max())
    weights = e / e.sum()
    return weights @ enc.states, weights


def decode_step(params: ModelParams, enc: SourceEncoding, prev_word: int, prev_state: np.ndarray,
                mode: str = NORMALIZED, timers=None) -> StepOutput:
    if not 0 <= prev_word < params.dims.tgt_vocab:
        raise VocabError(f"target index {prev_word} outside vocabulary of size {params.dims.tgt_vocab}")
    if timers is not None:
        t0 = time.perf_counter()
    e = params["tgt_emb"][prev_word]
    s_mid = gru_step(params.gru("dec_gru1"), e, prev_state)
    ctx, alpha = attention(params, enc, s_mid)
    s = gru_step(params.gru("dec_gru2"), ctx, s_mid)
    if timers is not None:
        t1 = time.perf_counter()
    t = np.concatenate([e, ctx, s]) @ params["read_W"] + params["read_b"]
    if timers is not None:
        t2 = time.perf_counter()
    o = t @ params["out_W"] + params["out_b"]
    if mode == SELF_NORMALIZED:
        nll = -o  # raw scores are the costs: no normalizer to compute
    elif mode != NORMALIZED:
        raise ValueError(f"unknown scoring mode {mode!r}")
    if timers is not None:
        t3 = time.perf_counter()
    if mode == NORMALIZED:
        nll = logsumexp(o) - o
    if timers is not None:
        t4 = time.perf_counter()
        timers.add("recurrence", t1 - t0)
        timers.add("readout", t2 - t1)
        timers.add("projection", t3 - t2)
        timers.add("normalization", t4 - t3)
    return StepOutput(next_state=s, word_nll=nll, attention_weights=alpha, scores=o)


def score_sequence(params: ModelParams, enc: SourceEncoding, target: Sequence[int],
                   mode: str = NORMALIZED) -> float:
    """Teacher-forced total cost of ``target`` (which should end in EOS)."""
    state = init_decoder_state(params, enc)
    prev = BOS
    total = 0.0
    for w in target:
        out = decode_step(params, enc, prev, state, mode)
        total += float(out.word_nll[w])
        prev, state = w, out.next_state
    return total
