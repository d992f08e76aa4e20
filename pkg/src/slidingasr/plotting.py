"""Figures written straight to files (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_cost_model(header: Sequence[str], rows: Sequence[Sequence[float]],
                    path: str | Path, crossings: dict[str, float] | None = None) -> Path:
    """TTFT against audio length: one line per full-attention throughput, the
    sliding-window constant dashed, and the delay threshold dotted."""
    xs = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for j, name in enumerate(header[1:], start=1):
        ys = [r[j] for r in rows]
        if name == "threshold":
            ax.plot(xs, ys, ":", color="gray", label=f"threshold ({ys[0]:g} ms)")
        elif name.startswith("ttft_sliding"):
            ax.plot(xs, ys, "--", label=name.replace("ttft_", "").replace("_", " "))
        else:
            ax.plot(xs, ys, label="full " + name.replace("ttft_", ""))
    for label, n in (crossings or {}).items():
        ax.axvline(n, color="gray", lw=0.6, alpha=0.5)
        ax.annotate(f"{label}: {n:.2f} s", (n, ax.get_ylim()[1] * 0.9), fontsize=7, rotation=90,
                    ha="right", va="top")
    ax.set_xlabel("audio length (s)")
    ax.set_ylabel("TTFT (ms)")
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_ttft(rows, path: str | Path) -> Path:
    """Measured streaming vs full-pipeline TTFT per audio duration."""
    xs = [r.duration_s for r in rows]
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.plot(xs, [r.full_ttft_ms for r in rows], "o-", label="full attention (wait for utterance)")
    ax.plot(xs, [r.streaming_ttft_ms for r in rows], "s-", label="sliding window (streaming)")
    ax.set_xlabel("audio length (s)")
    ax.set_ylabel("TTFT (ms)")
    ax.set_ylim(bottom=0)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)
