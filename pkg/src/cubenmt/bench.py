"""Corpus decoding and the strategy x beam x self-norm benchmark sweep."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .decoder import DecodeTrace, STRATEGIES, translate
from .metrics import BenchRecord, PhaseTimers, attach_speedups, bleu4
from .model import NORMALIZED, SELF_NORMALIZED

log = logging.getLogger(__name__)

BEAM_SWEEP = (1, 2, 3, 4, 8, 10, 15, 18, 20, 30, 40)


@dataclass
class CorpusDecode:
    translations: list            # token-id lists, EOS stripped
    traces: list                  # one DecodeTrace per sentence
    generated_words: int          # output tokens including EOS, summed
    wall_seconds: float
    timers: PhaseTimers = field(default_factory=PhaseTimers)

    def total_trace(self) -> DecodeTrace:
        tot = DecodeTrace()
        for t in self.traces:
            tot.merge(t)
        return tot


def decode_corpus(params, sources, beam_size, strategy, self_norm=False, length_norm=False,
                  max_len_factor=None, threads=1, phase_timers=False) -> CorpusDecode:
    """Decode every source (token ids); results come back in input order for any ``threads``."""
    mode = SELF_NORMALIZED if self_norm else NORMALIZED

    def one(src):
        timers = PhaseTimers() if phase_timers else None
        if not src:
            return [], 0, DecodeTrace(timers=timers)
        res = translate(params, src, beam_size, strategy, mode, length_norm, max_len_factor, timers)
        res.trace.timers = timers
        return res.translation, len(res.words), res.trace

    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(one, sources))
    else:
        outs = [one(s) for s in sources]
    wall = time.perf_counter() - t0
    timers = PhaseTimers()
    for _, _, tr in outs:
        if tr.timers is not None:
            timers.merge(tr.timers)
    return CorpusDecode([o[0] for o in outs], [o[2] for o in outs], sum(o[1] for o in outs), wall, timers)


def bench_sweep(params, sources, references, tgt_vocab, strategies=STRATEGIES, beams=BEAM_SWEEP,
                self_norm=(False, True), length_norm=False, max_len_factor=None, threads=1):
    """One BenchRecord per (strategy, beam, self-norm); ``references`` are token strings."""
    if not sources:
        raise ValueError("empty test corpus")
    if len(sources) != len(references):
        raise ValueError(f"{len(sources)} sources but {len(references)} references")
    records = []
    phases = PhaseTimers()
    for sn in self_norm:
        for beam in beams:
            for strategy in strategies:
                out = decode_corpus(params, sources, beam, strategy, sn, length_norm, max_len_factor,
                                    threads, phase_timers=True)
                tot = out.total_trace()
                hyps = [tgt_vocab.decode(t) for t in out.translations]
                rec = BenchRecord(
                    strategy=strategy, beam_size=beam, self_norm=sn, amr=tot.amr,
                    forward_calls=tot.forward_calls,
                    ms_per_word=1000.0 * out.wall_seconds / max(out.generated_words, 1),
                    bleu=bleu4(hyps, references), sentences=len(sources), n_w=tot.n_w, n_c=tot.n_c)
                records.append(rec)
                phases.merge(out.timers)
                log.info("%s beam=%d sn=%d amr=%.3f calls=%d ms/word=%.3f bleu=%.4f", strategy, beam, sn,
                         rec.amr, rec.forward_calls, rec.ms_per_word, rec.bleu)
    return attach_speedups(records), phases
