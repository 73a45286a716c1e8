"""Evaluation and instrumentation: merging rate, corpus BLEU, phase timers."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

PHASES = ("recurrence", "readout", "projection", "normalization")


class MetricError(ValueError):
    pass


@dataclass
class PhaseTimers:
    """Cumulative wall time per calculation unit of a decoder step."""

    seconds: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0.0))

    def add(self, phase, dt):
        self.seconds[phase] += dt

    def merge(self, other: "PhaseTimers"):
        for k, v in other.seconds.items():
            self.seconds[k] += v

    @property
    def total(self):
        return sum(self.seconds.values())

    def percentages(self, wall=None):
        denom = wall if wall else self.total
        if denom <= 0:
            return dict.fromkeys(PHASES, 0.0)
        return {k: 100.0 * v / denom for k, v in self.seconds.items()}


def amr(traces) -> float:
    """Average merging rate over one trace or a collection: total N_w / total N_c."""
    if hasattr(traces, "n_w"):
        traces = [traces]
    n_w = n_c = 0
    for t in traces:
        n_w += t.n_w
        n_c += t.n_c
    return amr_from_counts(n_w, n_c)


def amr_from_counts(n_w: int, n_c: int) -> float:
    if n_c <= 0:
        raise MetricError("merging rate undefined with zero sub-cubes")
    return n_w / n_c


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _tokens(sent, case_insensitive):
    if isinstance(sent, str):
        sent = sent.split()
    if case_insensitive:
        sent = [w.lower() for w in sent]
    return list(sent)


def bleu_stats(candidates: Sequence, references: Sequence, case_insensitive: bool = True, max_n: int = 4):
    """Corpus totals: (candidate length, reference length, matches[n], totals[n])."""
    if len(candidates) != len(references):
        raise MetricError(f"corpus sizes differ: {len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise MetricError("empty corpus")
    c_len = r_len = 0
    matches = [0] * max_n
    totals = [0] * max_n
    for cand, ref in zip(candidates, references):
        c = _tokens(cand, case_insensitive)
        r = _tokens(ref, case_insensitive)
        c_len += len(c)
        r_len += len(r)
        for n in range(1, max_n + 1):
            cn = _ngrams(c, n)
            rn = _ngrams(r, n)
            matches[n - 1] += sum(min(v, rn[g]) for g, v in cn.items())
            totals[n - 1] += max(len(c) - n + 1, 0)
    return c_len, r_len, matches, totals


def bleu4(candidates: Sequence, references: Sequence, case_insensitive: bool = True) -> float:
    """Unsmoothed corpus-level 4-gram BLEU in [0, 1] against a single reference per sentence.

    Sentences may be strings (split on whitespace) or token lists.
    """
    c_len, r_len, matches, totals = bleu_stats(candidates, references, case_insensitive)
    if any(m == 0 for m in matches) or any(t == 0 for t in totals):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / len(matches)
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


@dataclass
class BenchRecord:
    strategy: str
    beam_size: int
    self_norm: bool
    amr: float
    forward_calls: int
    ms_per_word: float
    bleu: float
    sentences: int
    n_w: int = 0
    n_c: int = 0
    speedup_vs_nbs: float = float("nan")

    CSV_COLUMNS = ("strategy", "beam", "self_norm", "amr", "forward_calls", "ms_per_word", "bleu",
                   "speedup_vs_nbs")

    def __post_init__(self):
        if self.amr < 1.0:
            raise MetricError(f"merging rate below 1: {self.amr}")
        if not 0.0 <= self.bleu <= 1.0:
            raise MetricError(f"BLEU outside [0, 1]: {self.bleu}")

    def csv_row(self) -> list[str]:
        return [
            self.strategy,
            str(self.beam_size),
            "1" if self.self_norm else "0",
            f"{self.amr:.6f}",
            str(self.forward_calls),
            f"{self.ms_per_word:.6f}",
            f"{self.bleu:.6f}",
            "" if math.isnan(self.speedup_vs_nbs) else f"{self.speedup_vs_nbs:.4f}",
        ]

    def as_dict(self):
        return asdict(self)


def attach_speedups(records: Iterable[BenchRecord]):
    """Fill ``speedup_vs_nbs`` = NBS ms/word / own ms/word at matching (beam, self_norm)."""
    records = list(records)
    base = {(r.beam_size, r.self_norm): r.ms_per_word for r in records if r.strategy == "nbs"}
    for r in records:
        ref = base.get((r.beam_size, r.self_norm))
        if ref is not None and r.ms_per_word > 0:
            r.speedup_vs_nbs = ref / r.ms_per_word
    return records
