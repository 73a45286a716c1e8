"""Benchmark figures written next to the CSV report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "nbs": dict(color="0.3", marker="o"),
    "ncp": dict(color="tab:blue", marker="s"),
    "acp": dict(color="tab:red", marker="^"),
}


def _label(strategy, sn):
    return f"{strategy.upper()}{'+' if sn else '-'}SN"


def _series(records):
    groups = {}
    for r in records:
        groups.setdefault((r.strategy, r.self_norm), []).append(r)
    for rs in groups.values():
        rs.sort(key=lambda r: r.beam_size)
    return groups


def plot_amr(records, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for (strategy, sn), rs in sorted(_series(records).items()):
        ax.plot([r.beam_size for r in rs], [r.amr for r in rs], label=_label(strategy, sn),
                linestyle="-" if sn else "--", **STYLE.get(strategy, {}))
    ax.set_xlabel("beam size")
    ax.set_ylabel("average merging rate")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bleu_vs_speed(records, path):
    groups = _series(records)
    sns = sorted({sn for _, sn in groups})
    fig, axes = plt.subplots(1, len(sns), figsize=(5 * len(sns), 3.5), squeeze=False)
    for ax, sn in zip(axes[0], sns):
        for (strategy, s), rs in sorted(groups.items()):
            if s != sn:
                continue
            ax.plot([r.ms_per_word for r in rs], [100 * r.bleu for r in rs], label=_label(strategy, sn),
                    **STYLE.get(strategy, {}))
            for r in rs:
                ax.annotate(str(r.beam_size), (r.ms_per_word, 100 * r.bleu), fontsize=6,
                            textcoords="offset points", xytext=(2, 2))
        ax.set_xlabel("ms per word")
        ax.set_ylabel("BLEU")
        ax.set_title("with self-normalization" if sn else "without self-normalization", fontsize=9)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_phases(phase_seconds: dict, path):
    """Bar chart of cumulative time per decoder calculation unit."""
    names = list(phase_seconds)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(names, [phase_seconds[n] for n in names], color="tab:gray")
    ax.set_ylabel("seconds")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_bench_figures(records, out_dir, phase_seconds=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "amr_vs_beam.png", out / "bleu_vs_speed.png"]
    plot_amr(records, paths[0])
    plot_bleu_vs_speed(records, paths[1])
    if phase_seconds:
        paths.append(out / "phase_times.png")
        plot_phases(phase_seconds, paths[2])
    return paths
