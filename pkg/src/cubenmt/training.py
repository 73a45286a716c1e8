"""Desk-scale trainer: teacher-forced CE / self-normalized loss, backprop, AdaDelta.

The forward pass mirrors :func:`cubenmt.model.decode_step` but runs on padded
mini-batches in float64 and keeps the activations needed for the backward
pass.  Parameters are handed back as float32 :class:`ModelParams`.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import BOS, EOS, Dims, InputError, ModelParams, Vocabulary, param_shapes

log = logging.getLogger(__name__)

COPY, REVERSE = "copy", "reverse"


class TrainingError(RuntimeError):
    def __init__(self, msg, epoch=None, batch=None):
        super().__init__(f"{msg} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    alpha: float = 0.5
    batch_size: int = 32
    rho: float = 0.95
    epsilon: float = 1e-6
    clip_norm: float = 1.0
    max_epochs: int = 20
    seed: int = 1
    d_emb: int = 32
    d_hid: int = 64
    d_att: int = 64
    d_out: int = 32
    init_scale: float = 0.1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")


@dataclass
class SyntheticTask:
    """Source sentences of random content words; target is the source copied or reversed.

    ``vocab_size`` counts the three reserved tokens, so ``vocab_size - 3``
    content words are used.
    """

    kind: str = COPY
    vocab_size: int = 12
    min_len: int = 3
    max_len: int = 8
    count: int = 3000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (COPY, REVERSE):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must leave at least one content word")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.build(f"w{i}" for i in range(3, self.vocab_size))

    def target_of(self, src: Sequence[int]) -> list[int]:
        body = list(src) if self.kind == COPY else list(reversed(src))
        return body + [EOS]

    def pairs(self) -> list[tuple[list[int], list[int]]]:
        rng = np.random.default_rng(self.seed)
        out = []
        for _ in range(self.count):
            n = int(rng.integers(self.min_len, self.max_len + 1))
            src = [int(w) for w in rng.integers(3, self.vocab_size, size=n)]
            out.append((src, self.target_of(src)))
        return out

    def split(self):
        """(train, held-out); the held-out set is the last 10% of generated pairs."""
        pairs = self.pairs()
        n_held = max(1, len(pairs) // 10)
        return pairs[:-n_held], pairs[-n_held:]


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _gru_fwd(W, x, h):
    Wx, Wh, b = W
    H = Wh.shape[0]
    gx = x @ Wx + b
    gzr = gx[:, : 2 * H] + h @ Wh[:, : 2 * H]
    z = _sig(gzr[:, :H])
    r = _sig(gzr[:, H:])
    rh = r * h
    n = np.tanh(gx[:, 2 * H:] + rh @ Wh[:, 2 * H:])
    return h + z * (n - h), (x, h, z, r, rh, n)


def _gru_bwd(W, G, cache, dout):
    Wx, Wh, _ = W
    gWx, gWh, gb = G
    x, h, z, r, rh, n = cache
    H = Wh.shape[0]
    dz = dout * (n - h)
    dn = dout * z
    dh = dout * (1.0 - z)
    dan = dn * (1.0 - n * n)
    gWh[:, 2 * H:] += rh.T @ dan
    drh = dan @ Wh[:, 2 * H:].T
    dh += drh * r
    dar = drh * h * r * (1.0 - r)
    daz = dz * z * (1.0 - z)
    dg = np.concatenate([daz, dar, dan], axis=1)
    gWx += x.T @ dg
    gb += dg.sum(axis=0)
    gWh[:, : 2 * H] += h.T @ dg[:, : 2 * H]
    dh += dg[:, : 2 * H] @ Wh[:, : 2 * H].T
    return dg @ Wx.T, dh


def _gru(P, prefix):
    return P[prefix + "_Wx"], P[prefix + "_Wh"], P[prefix + "_b"]


def _pad(seqs):
    T = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), T), dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=np.float64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def forward_backward(P: dict, pairs, alpha: float, need_grad: bool = True):
    """Summed loss over ``pairs`` (and its gradient) for float64 parameter dict ``P``.

    Per target step the cost is ``log Z - o[y] + alpha * (log Z)**2``.
    Returns ``(loss, grads or None, log_z)`` with ``log_z`` the per-step
    partition values at unmasked positions.
    """
    for src, tgt in pairs:
        if not tgt:
            raise InputError("empty target sentence")
        if not src:
            raise InputError("empty source sentence")
    X, mx = _pad([s for s, _ in pairs])
    Y, my = _pad([t for _, t in pairs])
    B, Tx = X.shape
    Ty = Y.shape[1]
    H = P["enc_fwd_Wh"].shape[0]
    E = P["src_emb"].shape[1]
    Yprev = np.concatenate([np.full((B, 1), BOS, dtype=np.int64), Y[:, :-1]], axis=1)

    # encoder
    emb = P["src_emb"][X]
    Wf, Wb = _gru(P, "enc_fwd"), _gru(P, "enc_bwd")
    hf = np.zeros((B, Tx, H))
    hb = np.zeros((B, Tx, H))
    cf, cb = [None] * Tx, [None] * Tx
    h = np.zeros((B, H))
    for t in range(Tx):
        h, cf[t] = _gru_fwd(Wf, emb[:, t], h)
        hf[:, t] = h
    h = np.zeros((B, H))
    for t in range(Tx - 1, -1, -1):
        hn, cb[t] = _gru_fwd(Wb, emb[:, t], h)
        m = mx[:, t, None]
        h = m * hn + (1.0 - m) * h
        hb[:, t] = h
    hs = np.concatenate([hf, hb], axis=2)
    Uh = hs @ P["att_U"] + P["att_b"]
    att_bias = (mx - 1.0) * 1e9
    s = np.tanh(hs[:, 0] @ P["init_W"] + P["init_b"])
    s0 = s

    W1, W2 = _gru(P, "dec_gru1"), _gru(P, "dec_gru2")
    rows = np.arange(B)
    loss = 0.0
    log_z = []
    steps = []
    for j in range(Ty):
        e = P["tgt_emb"][Yprev[:, j]]
        st, c1 = _gru_fwd(W1, e, s)
        pre = np.tanh(Uh + (st @ P["att_W"])[:, None, :])
        r = pre @ P["att_v"] + att_bias
        r = r - r.max(axis=1, keepdims=True)
        a = np.exp(r)
        a /= a.sum(axis=1, keepdims=True)
        ctx = np.einsum("bt,btd->bd", a, hs)
        s2, c2 = _gru_fwd(W2, ctx, st)
        inp = np.concatenate([e, ctx, s2], axis=1)
        tj = inp @ P["read_W"] + P["read_b"]
        o = tj @ P["out_W"] + P["out_b"]
        om = o.max(axis=1, keepdims=True)
        ex = np.exp(o - om)
        lz = np.log(ex.sum(axis=1)) + om[:, 0]
        m = my[:, j]
        y = Y[:, j]
        loss += float(np.sum(m * (lz - o[rows, y] + alpha * lz * lz)))
        log_z.append(lz[m > 0])
        if need_grad:
            p = np.exp(o - lz[:, None])
            do = p * (1.0 + 2.0 * alpha * lz)[:, None]
            do[rows, y] -= 1.0
            do *= m[:, None]
            steps.append((e, st, c1, pre, a, ctx, c2, inp, tj, do))
        s = s2
    log_z = np.concatenate(log_z)
    if not need_grad:
        return loss, None, log_z

    G = {k: np.zeros_like(v) for k, v in P.items()}
    G1, G2 = _gru(G, "dec_gru1"), _gru(G, "dec_gru2")
    dhs = np.zeros_like(hs)
    dUh = np.zeros_like(Uh)
    ds_next = np.zeros((B, H))
    for j in range(Ty - 1, -1, -1):
        e, st, c1, pre, a, ctx, c2, inp, tj, do = steps[j]
        G["out_W"] += tj.T @ do
        G["out_b"] += do.sum(axis=0)
        dt = do @ P["out_W"].T
        G["read_W"] += inp.T @ dt
        G["read_b"] += dt.sum(axis=0)
        dinp = dt @ P["read_W"].T
        de = dinp[:, :E]
        dctx = dinp[:, E:E + 2 * H]
        ds2 = dinp[:, E + 2 * H:] + ds_next
        dctx2, dst = _gru_bwd(W2, G2, c2, ds2)
        dctx = dctx + dctx2
        dalpha = np.einsum("bd,btd->bt", dctx, hs)
        dhs += a[:, :, None] * dctx[:, None, :]
        dr = a * (dalpha - (a * dalpha).sum(axis=1, keepdims=True))
        G["att_v"] += np.einsum("bt,bta->a", dr, pre)
        dpa = dr[:, :, None] * P["att_v"] * (1.0 - pre * pre)
        dUh += dpa
        dq = dpa.sum(axis=1)
        G["att_W"] += st.T @ dq
        dst = dst + dq @ P["att_W"].T
        de1, ds_next = _gru_bwd(W1, G1, c1, dst)
        np.add.at(G["tgt_emb"], Yprev[:, j], de + de1)

    da0 = ds_next * (1.0 - s0 * s0)
    G["init_W"] += hs[:, 0].T @ da0
    G["init_b"] += da0.sum(axis=0)
    dhs[:, 0] += da0 @ P["init_W"].T
    G["att_U"] += np.einsum("btd,bta->da", hs, dUh)
    G["att_b"] += dUh.sum(axis=(0, 1))
    dhs += dUh @ P["att_U"].T

    demb = np.zeros_like(emb)
    Gf, Gb = _gru(G, "enc_fwd"), _gru(G, "enc_bwd")
    dh = np.zeros((B, H))
    for t in range(Tx - 1, -1, -1):
        dx, dh = _gru_bwd(Wf, Gf, cf[t], dhs[:, t, :H] + dh)
        demb[:, t] += dx
    carry = np.zeros((B, H))
    for t in range(Tx):
        m = mx[:, t, None]
        dtot = dhs[:, t, H:] + carry
        dx, dprev = _gru_bwd(Wb, Gb, cb[t], m * dtot)
        demb[:, t] += dx
        carry = (1.0 - m) * dtot + dprev
    np.add.at(G["src_emb"], X, demb)
    return loss, G, log_z


def _as_dict64(params):
    if isinstance(params, ModelParams):
        return params.to_dict(np.float64)
    return {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}


def ce_loss(params, pair) -> float:
    """Teacher-forced cross-entropy of one (src, tgt) pair, summed over target steps."""
    loss, _, _ = forward_backward(_as_dict64(params), [pair], 0.0, need_grad=False)
    return loss


def sn_loss(params, pair, alpha: float) -> float:
    """Cross-entropy plus ``alpha * (log Z)**2`` per target step."""
    loss, _, _ = forward_backward(_as_dict64(params), [pair], alpha, need_grad=False)
    return loss


def loss_and_grads(params, pairs, alpha: float = 0.0):
    loss, G, _ = forward_backward(_as_dict64(params), list(pairs), alpha)
    return loss, G


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict, clip_norm: float):
    """Rescale in place so the joint L2 norm is at most ``clip_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class AdaDelta:
    """Per-coordinate AdaDelta (unit learning rate)."""

    def __init__(self, params: dict, rho=0.95, epsilon=1e-6):
        self.rho = rho
        self.epsilon = epsilon
        self.acc_grad = {k: np.zeros_like(v) for k, v in params.items()}
        self.acc_delta = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        rho, eps = self.rho, self.epsilon
        for k, g in grads.items():
            ag = self.acc_grad[k]
            ad = self.acc_delta[k]
            ag *= rho
            ag += (1.0 - rho) * g * g
            delta = -np.sqrt(ad + eps) / np.sqrt(ag + eps) * g
            ad *= rho
            ad += (1.0 - rho) * delta * delta
            params[k] += delta


@dataclass
class EpochStats:
    epoch: int
    train_loss: float            # mean per sentence, including the penalty term
    heldout_ce: float            # mean per sentence
    mean_abs_log_z: float
    max_abs_log_z: float
    grad_norm: float
    seconds: float


@dataclass
class TrainResult:
    params: ModelParams
    stats: list[EpochStats] = field(default_factory=list)
    src_vocab: Vocabulary | None = None
    tgt_vocab: Vocabulary | None = None


def log_partition_stats(params, corpus, batch_size: int = 64):
    """(mean, max) of ``|log Z|`` over every teacher-forced step of ``corpus``."""
    P = _as_dict64(params)
    vals = []
    for i in range(0, len(corpus), batch_size):
        _, _, lz = forward_backward(P, corpus[i:i + batch_size], 0.0, need_grad=False)
        vals.append(np.abs(lz))
    if not vals:
        return 0.0, 0.0
    v = np.concatenate(vals)
    return float(v.mean()), float(v.max())


def _heldout_ce(P, corpus, batch_size=64):
    total = 0.0
    for i in range(0, len(corpus), batch_size):
        loss, _, _ = forward_backward(P, corpus[i:i + batch_size], 0.0, need_grad=False)
        total += loss
    return total / max(len(corpus), 1)


def _batches(pairs, batch_size, rng):
    # bucket by source length to cut padding, then shuffle the batch order
    order = rng.permutation(len(pairs))
    order = sorted(order, key=lambda i: len(pairs[i][0]))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    for ci in rng.permutation(len(chunks)):
        yield [pairs[i] for i in chunks[ci]]


def train(config: TrainConfig, task: SyntheticTask, callback=None) -> TrainResult:
    """Train on ``task`` from a U[-init_scale, init_scale] start; deterministic given the seeds."""
    vocab = task.vocabulary()
    train_pairs, held = task.split()
    dims = Dims(src_vocab=len(vocab), tgt_vocab=len(vocab), d_emb=config.d_emb, d_hid=config.d_hid,
                d_att=config.d_att, d_out=config.d_out)
    rng = np.random.default_rng(config.seed)
    P = {name: rng.uniform(-config.init_scale, config.init_scale, size=shape)
         for name, shape in param_shapes(dims).items()}
    opt = AdaDelta(P, config.rho, config.epsilon)
    stats = []
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        total = 0.0
        norms = []
        for bi, batch in enumerate(_batches(train_pairs, config.batch_size, rng)):
            loss, G, _ = forward_backward(P, batch, config.alpha)
            if not np.isfinite(loss):
                raise TrainingError("loss diverged", epoch, bi)
            for g in G.values():
                g /= len(batch)
            norms.append(clip_by_global_norm(G, config.clip_norm))
            opt.step(P, G)
            total += loss
        mean_z, max_z = log_partition_stats(P, held)
        st = EpochStats(epoch, total / len(train_pairs), _heldout_ce(P, held), mean_z, max_z,
                        float(np.mean(norms)) if norms else 0.0, time.perf_counter() - t0)
        stats.append(st)
        log.info("epoch %d loss %.4f heldout-ce %.4f |logZ| %.4f", epoch, st.train_loss, st.heldout_ce,
                 st.mean_abs_log_z)
        if callback is not None:
            callback(st)
    return TrainResult(ModelParams(dims, P), stats, vocab, vocab)
