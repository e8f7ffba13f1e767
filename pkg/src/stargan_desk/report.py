"""Loss-curve reporting: parse a training log back into its loss
history, write the history as a delimited CSV table, and render critic
and generator loss-curve figures as PNG files next to it."""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first

from . import trainer

D_FIELDS = ("d_loss_real", "d_loss_fake", "d_loss_cls", "d_loss_gp")
G_FIELDS = ("g_loss_fake", "g_loss_rec", "g_loss_cls")
CSV_FIELDS = ("iteration",) + D_FIELDS + G_FIELDS


def collect_history(lines):
    """Pair critic/generator log lines into per-iteration rows.

    A critic line opens a row keyed by its iteration number; the next
    generator line completes it. Lines that are not loss lines (for
    example the abort diagnostic) are skipped.
    """
    rows = []
    open_row = None
    for line in lines:
        try:
            kind, iteration, _, report = trainer.parse_log_line(line)
        except ValueError:
            continue
        if kind == "d":
            open_row = {"iteration": iteration}
            open_row.update({k: getattr(report, k) for k in D_FIELDS})
            rows.append(open_row)
        elif open_row is not None:
            open_row.update({k: getattr(report, k) for k in G_FIELDS})
            open_row = None
    return [r for r in rows if len(r) == len(CSV_FIELDS)]


def read_history(log_path):
    text = Path(log_path).read_text(encoding="utf-8")
    return collect_history(text.splitlines())


def write_csv(history, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            out = {"iteration": row["iteration"]}
            out.update({k: f"{row[k]:.4f}" for k in D_FIELDS + G_FIELDS})
            writer.writerow(out)
    return Path(path)


def _render_figure(history, fields, title, path):
    iterations = [r["iteration"] for r in history]
    fig, ax = plt.subplots(figsize=(8.0, 4.5), dpi=100)
    for field in fields:
        ax.plot(iterations, [r[field] for r in history], label=field.split("_", 1)[1])
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="png")
    plt.close(fig)
    return Path(path)


def render_curves(history, out_dir):
    """Render the critic and generator loss curves; returns both paths."""
    out = Path(out_dir)
    return [
        _render_figure(history, D_FIELDS, "critic losses", out / "d_losses.png"),
        _render_figure(history, G_FIELDS, "generator losses", out / "g_losses.png"),
    ]


def generate_report(log_path, out_dir):
    """Full report: losses.csv plus loss-curve PNGs in ``out_dir``.

    Returns a dict with the csv path and the figure paths. Raises
    ValueError when the log holds no parseable loss lines.
    """
    history = read_history(log_path)
    if not history:
        raise ValueError(f"no loss lines found in {log_path}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = write_csv(history, out / "losses.csv")
    figures = render_curves(history, out)
    return {"csv": csv_path, "figures": figures, "rows": len(history)}
