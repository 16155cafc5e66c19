"""Figure rendering for the report path.

Reads only the delimited outputs a run already produced (history.csv,
metrics.json, histogram CSVs) and renders PNG figures next to them; nothing
here feeds back into training or evaluation.
"""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _read_history(path: Path):
    cols: dict = {}
    with open(path) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            for key, val in row.items():
                cols.setdefault(key, []).append(float(val) if val else np.nan)
    return {k: np.asarray(v) for k, v in cols.items()}


def render_history(history_csv: Path, out: Path) -> Path:
    hist = _read_history(history_csv)
    k = hist["k"]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    for name in ("score_loss", "critic_loss", "actor_loss"):
        vals = hist[name]
        offset = max(0.0, -np.nanmin(vals)) + 1e-12  # score loss can be negative
        ax1.semilogy(k, vals + offset, label=name)
    ax1.set_xlabel("iteration")
    ax1.set_title("training losses (log scale, shifted to positive)")
    ax1.legend()
    for name in ("lyap_actor", "lyap_critic", "w2_gap"):
        vals = hist[name]
        mask = np.isfinite(vals) & (vals > 0)
        if mask.any():
            ax2.semilogy(k[mask], vals[mask], marker=".", linestyle="-", label=name)
    ax2.set_xlabel("iteration")
    ax2.set_title("diagnostics")
    ax2.legend()
    fig.tight_layout()
    target = out / "history.png"
    fig.savefig(target, dpi=130)
    plt.close(fig)
    return target


def render_metrics(metrics_json: Path, out: Path) -> Path:
    with open(metrics_json) as fh:
        doc = json.load(fh)
    names = [n for n in ("rev", "rmse_x", "rmse_alpha", "rmse_m") if n in doc]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    if names:
        vals = [100.0 * doc[n] for n in names]
        ax.bar(names, vals, color="tab:blue")
        ax.set_ylabel("relative error (%)")
        for i, v in enumerate(vals):
            ax.text(i, v, f"{v:.2f}", ha="center", va="bottom", fontsize=9)
    else:
        ax.text(0.5, 0.5, f"j_check = {doc.get('j_check'):.6g}", ha="center", va="center")
        ax.set_axis_off()
    ax.set_title("evaluation metrics")
    fig.tight_layout()
    target = out / "metrics.png"
    fig.savefig(target, dpi=130)
    plt.close(fig)
    return target


def render_histograms(hist_csv: Path, out: Path, n_snapshots: int = 5) -> Path:
    rows = []
    with open(hist_csv) as fh:
        reader = csv.DictReader(fh)
        count_cols = [c for c in reader.fieldnames if c.startswith("count_")]
        for row in reader:
            rows.append(row)
    times = sorted({float(r["t"]) for r in rows})
    picks = [times[int(round(i * (len(times) - 1) / (n_snapshots - 1)))] for i in range(min(n_snapshots, len(times)))]
    fig, axes = plt.subplots(1, len(picks), figsize=(3.2 * len(picks), 3.2), sharey=True)
    axes = np.atleast_1d(axes)
    for ax, t in zip(axes, picks):
        sel = [r for r in rows if float(r["t"]) == t]
        centers = np.array([(float(r["bin_lo"]) + float(r["bin_hi"])) / 2 for r in sel])
        width = float(sel[0]["bin_hi"]) - float(sel[0]["bin_lo"]) if sel else 1.0
        for col in count_cols:
            ax.bar(centers, [int(r[col]) for r in sel], width=width, alpha=0.5,
                   label=col.removeprefix("count_"))
        ax.set_title(f"t = {t:.3g}")
    axes[0].legend()
    fig.tight_layout()
    target = out / (hist_csv.stem + ".png")
    fig.savefig(target, dpi=130)
    plt.close(fig)
    return target


def render_run(run_dir: Path, out: Path) -> list:
    """Render every figure the run directory has data for; returns paths written."""
    written = []
    if (run_dir / "history.csv").exists():
        written.append(render_history(run_dir / "history.csv", out))
    if (run_dir / "metrics.json").exists():
        written.append(render_metrics(run_dir / "metrics.json", out))
    for name in ("hist_states.csv", "hist_controls.csv"):
        if (run_dir / name).exists():
            written.append(render_histograms(run_dir / name, out))
    return written
