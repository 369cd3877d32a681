"""Report rendering: every delimited table the CLI writes gets a matplotlib
figure saved next to it.

Figures are rendered with the Agg backend and saved without the Software
metadata entry, so identical inputs produce identical PNG bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = [
    "write_csv",
    "save_loss_curves",
    "save_profile_chart",
    "save_metric_chart",
]

_SAVE_OPTS = {"format": "png", "dpi": 100, "metadata": {"Software": None}}


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def write_csv(path, columns, rows) -> None:
    """Comma-delimited table with a header row; floats at 10 significant
    digits so re-runs diff cleanly."""
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_cell(row[c]) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_loss_curves(log_rows, png_path) -> None:
    """Training curves: total on the left axis, components on the right."""
    steps = [r["step"] for r in log_rows]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(steps, [r["loss_total"] for r in log_rows], label="total", lw=1.6)
    for key, label in (("loss_pixel", "pixel"), ("loss_edge", "edge"),
                       ("loss_lol", "eighth-scale")):
        ax.plot(steps, [r[key] for r in log_rows], label=label, lw=1.0, alpha=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, which="both", alpha=0.25)
    fig.tight_layout()
    fig.savefig(png_path, **_SAVE_OPTS)
    plt.close(fig)


def save_profile_chart(rows, png_path) -> None:
    """Parameters and multiply counts against width, log-log."""
    widths = [r["width"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(widths, [r["params"] / 1e6 for r in rows], marker="o")
    ax1.set_xlabel("width")
    ax1.set_ylabel("parameters (M)")
    ax1.set_xscale("log", base=2)
    ax1.set_yscale("log")
    ax1.grid(True, which="both", alpha=0.25)
    ax2.plot(widths, [r["macs_conv"] / 1e9 for r in rows], marker="o",
             label="conv only")
    ax2.plot(widths, [r["macs_with_fft"] / 1e9 for r in rows], marker="s",
             label="conv + fft")
    ax2.set_xlabel("width")
    ax2.set_ylabel("MACs (G)")
    ax2.set_xscale("log", base=2)
    ax2.set_yscale("log")
    ax2.legend(fontsize=8)
    ax2.grid(True, which="both", alpha=0.25)
    fig.tight_layout()
    fig.savefig(png_path, **_SAVE_OPTS)
    plt.close(fig)


def save_metric_chart(rows, png_path, label_key: str, value_key: str,
                      ylabel: str) -> None:
    """Horizontal bars, one per table row; used by eval and ablate."""
    labels = [str(r[label_key]) for r in rows]
    values = [float(r[value_key]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 0.5 * max(len(rows), 4) + 1.2))
    pos = range(len(rows))
    ax.barh(list(pos), values, color="#4878a8")
    ax.set_yticks(list(pos))
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel(ylabel)
    for p, v in zip(pos, values):
        ax.text(v, p, f" {v:.2f}", va="center", fontsize=8)
    ax.grid(True, axis="x", alpha=0.25)
    fig.tight_layout()
    fig.savefig(png_path, **_SAVE_OPTS)
    plt.close(fig)
