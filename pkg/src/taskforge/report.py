"""Run analysis: delimited summaries plus rendered figures.

`write_analysis` emits a CSV with one row per iteration and PNG charts for
the diversity trend, retained-bank accuracy, and mean reward components.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .orchestrator import analyze_diversity  # noqa: E402

CSV_FIELDS = (
    "iteration", "rollouts", "mean_r_format", "mean_r_valid", "mean_r_diff",
    "mean_r_div", "mean_r_total", "bank_generated", "bank_retained",
    "bank_mean_acc", "bank_mean_r_diff", "solver_mean_r_s", "queue_size",
    "mean_pairwise_bleu_distance",
)


def load_report(run_dir) -> dict:
    return json.loads((Path(run_dir) / "report.json").read_text("utf-8"))


def write_analysis(run_dir, out_dir=None) -> dict:
    """Returns {csv: path, figures: [paths], diversity: {iter: distance}}."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)

    report = load_report(run_dir)
    rows = report["iterations"]
    diversity = analyze_diversity(run_dir)

    csv_path = out_dir / "analysis.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)

    iters = [r["iteration"] for r in rows]
    figures = []

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(list(diversity.keys()),
            [v if v is not None else float("nan") for v in diversity.values()],
            marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean pairwise BLEU distance")
    ax.set_title("Program diversity")
    fig.tight_layout()
    path = out_dir / "diversity_trend.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    figures.append(path)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    accs = [r["bank_mean_acc"] if r["bank_mean_acc"] is not None else float("nan")
            for r in rows]
    ax.plot(iters, accs, marker="o", color="tab:green")
    ax.axhline(0.5, linestyle="--", color="gray", linewidth=1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean accuracy of retained bank")
    ax.set_title("Bank difficulty calibration")
    fig.tight_layout()
    path = out_dir / "bank_accuracy.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    figures.append(path)

    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    for key, label in (("mean_r_format", "format"), ("mean_r_valid", "valid"),
                       ("mean_r_diff", "difficulty"), ("mean_r_div", "diversity"),
                       ("mean_r_total", "total")):
        ax.plot(iters, [r[key] for r in rows], marker="o", label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean reward")
    ax.set_title("Challenger reward components")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "reward_components.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    figures.append(path)

    return {"csv": csv_path, "figures": figures, "diversity": diversity}
