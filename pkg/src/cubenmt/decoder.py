"""Beam search with naive expansion (NBS) and cube pruning (NCP, ACP).

All three strategies share the outer loop: a beam of hypotheses is expanded
step by step; hypotheses ending in EOS move to the finished set, which keeps
occupying beam slots, so each step selects ``beam_size - len(finished)``
successors.  They differ only in how a step picks those successors:

* ``nbs`` expands every live hypothesis with its own forward call and keeps
  the globally cheapest successors.
* ``ncp`` groups live hypotheses by previous word into sub-cubes, scores each
  sub-cube once from its cheapest member, explores the grid lazily with a
  min-heap and rescores every popped cell exactly from its own state.
* ``acp`` does the same exploration but keeps the approximate scores and the
  representative's next state, so each sub-cube costs one forward call.
"""

from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .metrics import PhaseTimers
from .model import BOS, EOS, NORMALIZED, InputError, ModelParams, SourceEncoding, StepOutput
from .model import decode_step, encode, init_decoder_state
from .numerics import k_smallest

log = logging.getLogger(__name__)

NBS, NCP, ACP = "nbs", "ncp", "acp"
STRATEGIES = (NBS, NCP, ACP)


class SearchInvariantError(RuntimeError):
    """Internal bookkeeping of the search is inconsistent."""


@dataclass
class Hypothesis:
    nll: float
    state: np.ndarray = field(repr=False)
    word: int
    backpointer: int
    length: int = 0
    finished: bool = False


@dataclass
class SubCube:
    """Live hypotheses that share their last word, plus the shared score grid.

    ``columns`` are indices into the previous beam, cheapest first;
    ``row_order`` holds only as many best words as could ever be popped.
    """

    shared_word: int
    columns: list[int]
    column_nll: list[float]
    column_states: list[np.ndarray] = field(repr=False)
    approx_word_nll: np.ndarray = field(repr=False)
    row_order: np.ndarray
    next_state_repr: np.ndarray = field(repr=False)

    @property
    def representative(self):
        return self.column_states[0]

    def priority(self, row, col):
        return self.column_nll[col] + float(self.approx_word_nll[self.row_order[row]])

    def __len__(self):
        return len(self.columns)


@dataclass(frozen=True, order=True)
class HeapCell:
    priority: float
    cube: int
    row: int
    col: int


@dataclass
class PoppedCell:
    cell: HeapCell
    word: int
    nll: float
    state: np.ndarray = field(repr=False)
    backpointer: int


@dataclass
class PruneResult:
    items: list[PoppedCell]
    pops: list[HeapCell]
    pushes: list[HeapCell]
    rescored_columns: int = 0
    exhausted: bool = False


@dataclass
class DecodeTrace:
    n_w: int = 0                 # live hypotheses entering expansion, summed over steps
    n_c: int = 0                 # sub-cubes (one per live hypothesis for NBS)
    forward_calls: int = 0
    rescored_columns: int = 0    # NCP: distinct (cube, column) pairs rescored
    pops: int = 0
    steps: int = 0
    heap_exhausted: int = 0
    wall_seconds: float = 0.0
    timers: PhaseTimers | None = None
    snapshots: list | None = None

    def merge(self, other: "DecodeTrace"):
        for name in ("n_w", "n_c", "forward_calls", "rescored_columns", "pops", "steps",
                     "heap_exhausted", "wall_seconds"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        if other.timers is not None:
            if self.timers is None:
                self.timers = PhaseTimers()
            self.timers.merge(other.timers)
        return self

    @property
    def amr(self):
        from .metrics import amr_from_counts
        return amr_from_counts(self.n_w, self.n_c)


@dataclass
class DecodeResult:
    words: list[int]             # generation order, EOS included when produced
    score: float                 # final score (length-normalized if requested)
    nll: float
    kbest: list[tuple[list[int], float]]
    trace: DecodeTrace
    beams: list[list[Hypothesis]] = field(default_factory=list, repr=False)

    @property
    def translation(self):
        return [w for w in self.words if w != EOS]


StepFn = Callable[[int, np.ndarray], StepOutput]


def group_sub_cubes(live: Sequence[tuple[int, Hypothesis]], step_fn: StepFn, k: int) -> list[SubCube]:
    """Partition live ``(beam index, hypothesis)`` pairs by last word.

    Cubes are numbered by first appearance; each is scored once from its
    cheapest column.
    """
    if not live:
        raise SearchInvariantError("cannot group an empty beam")
    groups: dict[int, list[tuple[int, Hypothesis]]] = {}
    for idx, hyp in live:
        groups.setdefault(hyp.word, []).append((idx, hyp))
    cubes = []
    for word, members in groups.items():
        members.sort(key=lambda m: (m[1].nll, m[0]))
        out = step_fn(word, members[0][1].state)
        cubes.append(SubCube(
            shared_word=word,
            columns=[i for i, _ in members],
            column_nll=[h.nll for _, h in members],
            column_states=[h.state for _, h in members],
            approx_word_nll=out.word_nll,
            row_order=k_smallest(out.word_nll, k),
            next_state_repr=out.next_state,
        ))
    return cubes


def cube_prune_step(cubes: Sequence[SubCube], k: int, strategy: str,
                    rescore: Callable[[SubCube, int], StepOutput] | None = None) -> PruneResult:
    """Pop ``k`` cells from the union of sub-cube grids, cheapest approximate priority first.

    After a pop the right neighbour (next word, same column) and the lower
    neighbour (same word, next column) are pushed if not yet seen.  ``ncp``
    replaces each popped score by the exact one from ``rescore(cube, col)``,
    computed once per column; ``acp`` keeps the approximate score and the
    cube's representative next state.  Items come back ranked by their final
    score, ties in pop order.
    """
    if strategy not in (NCP, ACP):
        raise ValueError(f"cube pruning strategy must be ncp or acp, got {strategy!r}")
    if strategy == NCP and rescore is None:
        raise ValueError("ncp needs a rescore callback")
    heap: list[HeapCell] = []
    seen: set[tuple[int, int, int]] = set()
    pushes: list[HeapCell] = []

    def push(ci, row, col):
        cube = cubes[ci]
        if row >= len(cube.row_order) or col >= len(cube.columns) or (ci, row, col) in seen:
            return
        seen.add((ci, row, col))
        cell = HeapCell(cube.priority(row, col), ci, row, col)
        heapq.heappush(heap, cell)
        pushes.append(cell)

    for ci in range(len(cubes)):
        push(ci, 0, 0)

    exact_cache: dict[tuple[int, int], StepOutput] = {}
    pops: list[HeapCell] = []
    items: list[PoppedCell] = []
    while len(pops) < k and heap:
        cell = heapq.heappop(heap)
        pops.append(cell)
        cube = cubes[cell.cube]
        word = int(cube.row_order[cell.row])
        if strategy == NCP:
            key = (cell.cube, cell.col)
            out = exact_cache.get(key)
            if out is None:
                out = exact_cache[key] = rescore(cube, cell.col)
            nll = cube.column_nll[cell.col] + float(out.word_nll[word])
            state = out.next_state
        else:
            nll = cell.priority
            state = cube.next_state_repr
        items.append(PoppedCell(cell, word, nll, state, cube.columns[cell.col]))
        push(cell.cube, cell.row + 1, cell.col)
        push(cell.cube, cell.row, cell.col + 1)

    order = sorted(range(len(items)), key=lambda i: (items[i].nll, i))
    exhausted = len(pops) < k
    if exhausted:
        log.info("heap exhausted after %d of %d pops", len(pops), k)
    return PruneResult(
        items=[items[i] for i in order],
        pops=pops,
        pushes=pushes,
        rescored_columns=len(exact_cache),
        exhausted=exhausted,
    )


def _nbs_expand(live, k, step_fn):
    outs = [step_fn(h.word, h.state) for _, h in live]
    costs = np.stack([h.nll + out.word_nll.astype(np.float64) for (_, h), out in zip(live, outs)])
    V = costs.shape[1]
    flat = costs.ravel()
    chosen = []
    for f in k_smallest(flat, k):
        p, w = divmod(int(f), V)
        chosen.append(Hypothesis(float(flat[f]), outs[p].next_state, w, live[p][0]))
    return chosen


def _cp_expand(live, k, step_fn, strategy, trace):
    cubes = group_sub_cubes(live, step_fn, k)

    def rescore(cube, col):
        return step_fn(cube.shared_word, cube.column_states[col])

    res = cube_prune_step(cubes, k, strategy, rescore if strategy == NCP else None)
    trace.rescored_columns += res.rescored_columns
    trace.heap_exhausted += int(res.exhausted)
    if strategy == ACP and log.isEnabledFor(logging.DEBUG):
        inherited = sum(1 for it in res.items if it.cell.col > 0)
        log.debug("acp step: %d cubes, %d pops, %d items carry a representative state",
                  len(cubes), len(res.pops), inherited)
    new = [Hypothesis(it.nll, it.state, it.word, it.backpointer) for it in res.items]
    return new, len(cubes)


def backtrack(beams: Sequence[Sequence[Hypothesis]], final: Hypothesis) -> list[int]:
    """Words of ``final`` in generation order, following backpointers to the initial tuple."""
    words = []
    hyp = final
    for j in range(final.length, 0, -1):
        words.append(hyp.word)
        bp = hyp.backpointer
        if not 0 <= bp < len(beams[j - 1]):
            raise SearchInvariantError(f"backpointer {bp} outside beam {j - 1} of size {len(beams[j - 1])}")
        hyp = beams[j - 1][bp]
    if hyp.length != 0 or hyp.word != BOS:
        raise SearchInvariantError("backpointer chain does not end at the initial hypothesis")
    words.reverse()
    return words


def default_max_len(src_len: int) -> int:
    return 2 * src_len + 5


def beam_search(params: ModelParams, enc: SourceEncoding, beam_size: int, strategy: str = NBS,
                mode: str = NORMALIZED, length_norm: bool = False, max_len: int | None = None,
                timers: PhaseTimers | None = None, keep_snapshots: bool = False) -> DecodeResult:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if len(enc) == 0:
        raise InputError("empty source sentence")
    if max_len is None:
        max_len = default_max_len(len(enc))
    if max_len < 1:
        raise ValueError("max_len must be >= 1")

    trace = DecodeTrace(timers=timers, snapshots=[] if keep_snapshots else None)
    t_start = time.perf_counter()

    def step_fn(word, state):
        trace.forward_calls += 1
        return decode_step(params, enc, word, state, mode, timers)

    beams = [[Hypothesis(0.0, init_decoder_state(params, enc), BOS, 0)]]
    finished: list[Hypothesis] = []
    for step in range(1, max_len + 1):
        k = beam_size - len(finished)
        live = [(i, h) for i, h in enumerate(beams[-1]) if not h.finished]
        if k <= 0 or not live:
            break
        if strategy == NBS:
            new = _nbs_expand(live, k, step_fn)
            n_cubes = len(live)
        else:
            new, n_cubes = _cp_expand(live, k, step_fn, strategy, trace)
        trace.n_w += len(live)
        trace.n_c += n_cubes
        trace.pops += len(new)
        trace.steps += 1
        for h in new:
            h.length = step
            if h.word == EOS:
                h.finished = True
                finished.append(h)
        beams.append(new)
        if trace.snapshots is not None:
            trace.snapshots.append([(h.word, h.nll, h.backpointer) for h in new])

    # survivors at the length cap compete as they are
    pool = list(finished)
    if len(finished) < beam_size:
        pool += [h for h in beams[-1] if not h.finished]
    if not pool:
        raise SearchInvariantError("search produced no hypotheses")

    def final_score(h):
        return h.nll / h.length if length_norm else h.nll

    ranked = sorted(range(len(pool)), key=lambda i: (final_score(pool[i]), i))
    kbest = [(backtrack(beams, pool[i]), final_score(pool[i])) for i in ranked]
    best = pool[ranked[0]]
    trace.wall_seconds = time.perf_counter() - t_start
    return DecodeResult(words=kbest[0][0], score=kbest[0][1], nll=best.nll, kbest=kbest,
                        trace=trace, beams=beams)


def beam_search_nbs(params, enc, beam_size, mode=NORMALIZED, length_norm=False, max_len=None, **kw):
    return beam_search(params, enc, beam_size, NBS, mode, length_norm, max_len, **kw)


def beam_search_cp(params, enc, beam_size, mode=NORMALIZED, strategy=ACP, length_norm=False,
                   max_len=None, **kw):
    if strategy not in (NCP, ACP):
        raise ValueError(f"cube pruning strategy must be ncp or acp, got {strategy!r}")
    return beam_search(params, enc, beam_size, strategy, mode, length_norm, max_len, **kw)


def translate(params: ModelParams, src: Sequence[int], beam_size: int, strategy: str = NBS,
              mode: str = NORMALIZED, length_norm: bool = False, max_len_factor: float | None = None,
              timers: PhaseTimers | None = None) -> DecodeResult:
    """Encode ``src`` and run the chosen search; ``max_len_factor`` scales the length cap."""
    enc = encode(params, src)
    max_len = None
    if max_len_factor is not None:
        max_len = max(1, int(round(max_len_factor * len(src))) + 5)
    return beam_search(params, enc, beam_size, strategy, mode, length_norm, max_len, timers=timers)
