"""``cubenmt`` command line: train, decode, bench, eval-bleu.

Exit codes: 0 success, 2 usage error or missing file, 3 training divergence,
4 vocabulary/weights mismatch, 5 line-count mismatch between BLEU inputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .bench import BEAM_SWEEP, bench_sweep, decode_corpus
from .decoder import STRATEGIES
from .metrics import BenchRecord, PHASES, bleu4
from .training import COPY, REVERSE, SyntheticTask, TrainConfig, TrainingError, train

EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_MISMATCH = 4
EXIT_LINES = 5

TRAIN_LOG_COLUMNS = ("epoch", "train_loss", "heldout_ce", "mean_abs_log_z", "max_abs_log_z", "grad_norm",
                     "seconds")
TRACE_COLUMNS = ("sentence", "n_w", "n_c", "forward_calls", "rescored_columns", "steps", "pops", "wall_ms")

log = logging.getLogger("cubenmt")


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def _int_list(text):
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("beam sizes must be positive")
    return vals


def _strategy_list(text):
    vals = [x.strip() for x in text.split(",") if x.strip()]
    bad = [v for v in vals if v not in STRATEGIES]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"unknown strategy in {text!r}; choose from {','.join(STRATEGIES)}")
    return vals


def _positive(kind):
    def conv(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return v
    return conv


def _require(path):
    if not Path(path).is_file():
        raise CliError(f"no such file: {path}", EXIT_USAGE)
    return path


def _load_model(args):
    weights = _require(args.model)
    src_vocab = io.load_vocab(_require(args.src_vocab or f"{args.model}.src.vocab"))
    tgt_vocab = io.load_vocab(_require(args.tgt_vocab or f"{args.model}.tgt.vocab"))
    params = io.load_weights(weights)
    d = params.dims
    if len(src_vocab) != d.src_vocab or len(tgt_vocab) != d.tgt_vocab:
        raise CliError(
            f"vocabulary/weights mismatch: weights expect src={d.src_vocab} tgt={d.tgt_vocab}, "
            f"vocab files have src={len(src_vocab)} tgt={len(tgt_vocab)}", EXIT_MISMATCH)
    return params, src_vocab, tgt_vocab


def _read_lines(path):
    if path in (None, "-"):
        return [line.split() for line in sys.stdin.read().splitlines()]
    return io.read_corpus(_require(path))


# -- train -------------------------------------------------------------------

def cmd_train(args):
    config = TrainConfig(alpha=args.self_norm_alpha, batch_size=args.batch_size, rho=args.rho,
                         epsilon=args.epsilon, clip_norm=args.clip_norm, max_epochs=args.epochs, seed=args.seed,
                         d_emb=args.d_emb, d_hid=args.d_hid, d_att=args.d_att, d_out=args.d_out)
    task = SyntheticTask(kind=args.task, vocab_size=args.vocab, min_len=args.min_len, max_len=args.max_len,
                         count=args.count, seed=args.task_seed)
    rows = []

    def on_epoch(st):
        rows.append([st.epoch, f"{st.train_loss:.6f}", f"{st.heldout_ce:.6f}", f"{st.mean_abs_log_z:.6f}",
                     f"{st.max_abs_log_z:.6f}", f"{st.grad_norm:.6f}", f"{st.seconds:.3f}"])
        print(f"epoch {st.epoch:3d}  loss {st.train_loss:.4f}  heldout-ce {st.heldout_ce:.4f}  "
              f"|logZ| {st.mean_abs_log_z:.4f}", file=sys.stderr)

    log_path = args.log or f"{args.output}.log.csv"
    try:
        result = train(config, task, on_epoch)
    except TrainingError as e:
        io.write_csv(log_path, TRAIN_LOG_COLUMNS, rows)
        raise CliError(f"training diverged at epoch {e.epoch}, batch {e.batch}", EXIT_DIVERGED)
    io.save_weights(result.params, args.output)
    io.save_vocab(result.src_vocab, f"{args.output}.src.vocab")
    io.save_vocab(result.tgt_vocab, f"{args.output}.tgt.vocab")
    io.write_csv(log_path, TRAIN_LOG_COLUMNS, rows)
    if args.dump_heldout:
        _, held = task.split()
        io.write_corpus([result.src_vocab.decode(s) for s, _ in held], f"{args.dump_heldout}.src")
        io.write_corpus([result.tgt_vocab.decode(t) for _, t in held], f"{args.dump_heldout}.ref")
    return 0


# -- decode ------------------------------------------------------------------

def cmd_decode(args):
    params, src_vocab, tgt_vocab = _load_model(args)
    sources = [src_vocab.encode(s) for s in _read_lines(args.input)]
    out = decode_corpus(params, sources, args.beam_size, args.strategy, args.self_norm, args.length_norm,
                        args.max_len_factor, args.threads)
    text = "".join(" ".join(tgt_vocab.decode(t)) + "\n" for t in out.translations)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.trace:
        rows = [[i, t.n_w, t.n_c, t.forward_calls, t.rescored_columns, t.steps, t.pops,
                 f"{1000 * t.wall_seconds:.3f}"] for i, t in enumerate(out.traces)]
        tot = out.total_trace()
        rows.append(["total", tot.n_w, tot.n_c, tot.forward_calls, tot.rescored_columns, tot.steps, tot.pops,
                     f"{1000 * tot.wall_seconds:.3f}"])
        io.write_csv(args.trace, TRACE_COLUMNS, rows)
    return 0


# -- bench -------------------------------------------------------------------

def cmd_bench(args):
    params, src_vocab, tgt_vocab = _load_model(args)
    sources = [src_vocab.encode(s) for s in io.read_corpus(_require(args.src))]
    refs = io.read_corpus(_require(args.ref))
    if not sources:
        raise CliError(f"{args.src}: empty test corpus", EXIT_USAGE)
    if len(sources) != len(refs):
        raise CliError(f"{args.src} has {len(sources)} lines, {args.ref} has {len(refs)}", EXIT_LINES)
    sn = {"off": (False,), "on": (True,), "both": (False, True)}[args.self_norm]
    records, phases = bench_sweep(params, sources, refs, tgt_vocab, args.strategies, args.beams, sn,
                                  args.length_norm, args.max_len_factor, args.threads)
    rows = [r.csv_row() for r in records]
    if args.output:
        io.write_csv(args.output, BenchRecord.CSV_COLUMNS, rows)
    else:
        import csv
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(BenchRecord.CSV_COLUMNS)
        w.writerows(rows)
    if args.plot_dir:
        from .plotting import write_bench_figures
        for p in write_bench_figures(records, args.plot_dir, {k: phases.seconds[k] for k in PHASES}):
            print(f"wrote {p}", file=sys.stderr)
    return 0


# -- eval-bleu ---------------------------------------------------------------

def cmd_eval_bleu(args):
    cand = Path(_require(args.candidate)).read_text(encoding="utf-8").splitlines()
    ref = Path(_require(args.reference)).read_text(encoding="utf-8").splitlines()
    if len(cand) != len(ref):
        raise CliError(f"{args.candidate} has {len(cand)} lines, {args.reference} has {len(ref)}", EXIT_LINES)
    print(f"{100 * bleu4(cand, ref, case_insensitive=not args.case_sensitive):.2f}")
    return 0


def _add_model_args(p):
    p.add_argument("-m", "--model", required=True, help="weight container written by `train`")
    p.add_argument("--src-vocab", help="source vocabulary (default MODEL.src.vocab)")
    p.add_argument("--tgt-vocab", help="target vocabulary (default MODEL.tgt.vocab)")


def _add_search_args(p):
    p.add_argument("--self-norm", action="store_true", help="score with raw outputs, skipping softmax")
    p.add_argument("--length-norm", action="store_true", help="divide final costs by length")
    p.add_argument("--max-len-factor", type=_positive(float), default=None,
                   help="length cap = round(F * source length) + 5 (default 2)")
    p.add_argument("--threads", type=_positive(int), default=1, help="sentences decoded in parallel")
    p.add_argument("--seed", type=int, default=0, help="accepted for reproducible scripts; search is deterministic")


def build_parser():
    parser = argparse.ArgumentParser(prog="cubenmt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a toy model on a synthetic task")
    p.add_argument("--task", choices=(COPY, REVERSE), default=COPY)
    p.add_argument("--vocab", type=int, default=12, help="vocabulary size including the 3 reserved tokens")
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--count", type=int, default=3000, help="number of generated pairs (10%% held out)")
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--self-norm-alpha", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--rho", type=float, default=0.95)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--d-emb", type=int, default=32)
    p.add_argument("--d-hid", type=int, default=64)
    p.add_argument("--d-att", type=int, default=64)
    p.add_argument("--d-out", type=int, default=32)
    p.add_argument("-o", "--output", required=True, help="weight file to write")
    p.add_argument("--log", help="per-epoch CSV log (default OUTPUT.log.csv)")
    p.add_argument("--dump-heldout", metavar="PREFIX", help="write held-out PREFIX.src / PREFIX.ref")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="translate a corpus")
    _add_model_args(p)
    p.add_argument("-i", "--input", help="source corpus (default stdin)")
    p.add_argument("-o", "--output", help="write translations here (default stdout)")
    p.add_argument("--strategy", choices=STRATEGIES, default="nbs")
    p.add_argument("--beam-size", type=_positive(int), default=10)
    p.add_argument("--trace", help="per-sentence search counters as CSV")
    _add_search_args(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("bench", help="sweep strategies and beam sizes, write a CSV report")
    _add_model_args(p)
    p.add_argument("--src", required=True, help="test sources")
    p.add_argument("--ref", required=True, help="test references")
    p.add_argument("--strategies", type=_strategy_list, default=list(STRATEGIES))
    p.add_argument("--beams", type=_int_list, default=list(BEAM_SWEEP))
    p.add_argument("--self-norm", choices=("off", "on", "both"), default="both")
    p.add_argument("--length-norm", action="store_true")
    p.add_argument("--max-len-factor", type=_positive(float), default=None)
    p.add_argument("--threads", type=_positive(int), default=1)
    p.add_argument("-o", "--output", help="CSV path (default stdout)")
    p.add_argument("--plot-dir", help="also render figures into this directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval-bleu", help="corpus BLEU of a candidate file against a reference file")
    p.add_argument("candidate")
    p.add_argument("reference")
    p.add_argument("--case-sensitive", action="store_true")
    p.set_defaults(func=cmd_eval_bleu)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"cubenmt {args.command}: {e}", file=sys.stderr)
        return e.code
    except (io.FormatError, ValueError) as e:
        print(f"cubenmt {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
