"""File artifacts for benchmark and energy runs: figures plus CSV.

Separate from the CLI so matplotlib is only imported when a report
directory is actually requested.
"""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .bench import BenchReport, EnergyTable, count_weight_macs, estimate_energy
from .model import ModelConfig


def render_bench_report(report: BenchReport, out_dir) -> dict:
    """Write bench.json, steps.csv, and latency.png; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    json_path = out / "bench.json"
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")

    csv_path = out / "steps.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "latency_ms"])
        for i, ms in enumerate(report.samples_ms):
            writer.writerow([i, f"{ms:.6f}"])

    fig, (ax_line, ax_hist) = plt.subplots(1, 2, figsize=(10, 4))
    steps = range(len(report.samples_ms))
    ax_line.plot(steps, report.samples_ms, lw=1.0, color="tab:blue")
    ax_line.axhline(report.mean_ms, color="tab:orange", ls="--", lw=1.0,
                    label=f"mean {report.mean_ms:.3f} ms")
    ax_line.axhline(report.p95_ms, color="tab:red", ls=":", lw=1.0,
                    label=f"p95 {report.p95_ms:.3f} ms")
    ax_line.set_xlabel("decode step")
    ax_line.set_ylabel("latency (ms)")
    ax_line.set_title(f"per-token latency ({report.workers} workers)")
    ax_line.legend(fontsize=8)

    ax_hist.hist(report.samples_ms, bins=min(40, max(5, len(report.samples_ms) // 4)),
                 color="tab:blue", alpha=0.8)
    ax_hist.set_xlabel("latency (ms)")
    ax_hist.set_ylabel("steps")
    ax_hist.set_title("latency distribution")

    fig.tight_layout()
    png_path = out / "latency.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)

    return {"json": str(json_path), "csv": str(csv_path), "figure": str(png_path)}


def render_energy_report(config: ModelConfig, n_tokens: int, table: EnergyTable, out_dir) -> dict:
    """Write energy.csv and energy.png comparing the two cost modes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    macs = count_weight_macs(config, n_tokens)
    modes = ["fp16", "w158a8"]
    joules = {m: estimate_energy(config, n_tokens, table, m) for m in modes}

    csv_path = out / "energy.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "macs", "joules"])
        for m in modes:
            writer.writerow([m, macs, f"{joules[m]:.6e}"])

    fig, ax = plt.subplots(figsize=(5, 4))
    bars = ax.bar(modes, [joules[m] for m in modes], color=["tab:gray", "tab:green"])
    for bar, m in zip(bars, modes):
        ax.annotate(f"{joules[m]:.2e} J",
                    (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=9)
    ratio = joules["fp16"] / joules["w158a8"] if joules["w158a8"] else float("inf")
    ax.set_ylabel("estimated energy (J)")
    ax.set_title(f"matmul energy, {n_tokens} tokens ({ratio:.1f}x reduction)")
    fig.tight_layout()
    png_path = out / "energy.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)

    return {"csv": str(csv_path), "figure": str(png_path)}
