"""Figure rendering for the report paths: dataset dynamics, benchmark
clicks, and the per-slot base-bid trace. PNGs land next to the CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .logs import CampaignDataset, DatasetStatistics


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_daily_price_figure(stats: DatasetStatistics, path: str | Path,
                              n_train: int) -> Path:
    dates = list(stats.per_day_avg_price)
    values = [stats.per_day_avg_price[d] for d in dates]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(dates[:n_train], values[:n_train], "o-", label="train")
    ax.plot(dates[n_train:], values[n_train:], "s-", label="test")
    ax.set_xlabel("day")
    ax.set_ylabel("average market price")
    ax.set_title(f"{stats.campaign_id}: average market price per day")
    ax.tick_params(axis="x", rotation=45)
    ax.legend()
    return _finish(fig, path)


def render_daily_imps_figure(stats: DatasetStatistics, path: str | Path,
                             n_train: int) -> Path:
    dates = list(stats.per_day_imps)
    values = [stats.per_day_imps[d] for d in dates]
    fig, ax = plt.subplots(figsize=(8, 4))
    colors = ["tab:blue"] * n_train + ["tab:orange"] * (len(dates) - n_train)
    ax.bar(dates, values, color=colors)
    ax.set_xlabel("day")
    ax.set_ylabel("impressions")
    ax.set_title(f"{stats.campaign_id}: impressions per day")
    ax.tick_params(axis="x", rotation=45)
    return _finish(fig, path)


def render_slot_price_figure(stats: DatasetStatistics, path: str | Path,
                             dates: list[str]) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    for date in dates:
        ax.plot(stats.per_slot_avg_price[date], label=date)
    ax.set_xlabel("time slot")
    ax.set_ylabel("average market price")
    ax.set_title(f"{stats.campaign_id}: average market price per time slot")
    ax.legend()
    return _finish(fig, path)


def render_bench_figure(report, path: str | Path) -> Path:
    rows = [dict(r) for r in report.medians]
    strategies = []
    fractions = []
    for row in rows:
        if row["strategy"] not in strategies:
            strategies.append(row["strategy"])
        if row["fraction"] not in fractions:
            fractions.append(row["fraction"])
    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.8 / max(len(strategies), 1)
    x = np.arange(len(fractions))
    for i, strategy in enumerate(strategies):
        clicks = [next((r["clicks_median"] for r in rows
                        if r["strategy"] == strategy and r["fraction"] == f), 0)
                  for f in fractions]
        ax.bar(x + i * width, clicks, width, label=strategy)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(fractions)
    ax.set_xlabel("budget fraction")
    ax.set_ylabel("test clicks (median over seeds)")
    ax.set_title("benchmark clicks by strategy and budget")
    ax.legend()
    return _finish(fig, path)


def render_trace_figure(rows: list[dict], path: str | Path) -> Path:
    slots = [r["slot"] for r in rows]
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(slots, [r["gt"] for r in rows], label="ground truth", color="black", lw=1.2)
    ax.plot(slots, [r["drlb"] for r in rows], label="drlb", ls="--")
    ax.plot(slots, [r["fab"] for r in rows], label="fab", ls="-.")
    ax.set_xlabel("time slot")
    ax.set_ylabel("base bid")
    ax.set_title("per-slot base bid vs ground truth")
    ax.legend()
    return _finish(fig, path)


def render_dataset_figures(dataset: CampaignDataset, stats: DatasetStatistics,
                           out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    n_train = len(dataset.train_episodes)
    picks = [dataset.train_episodes[0].date]
    if dataset.test_episodes:
        picks.append(dataset.test_episodes[0].date)
    return [
        render_daily_price_figure(stats, out_dir / "daily_price.png", n_train),
        render_daily_imps_figure(stats, out_dir / "daily_imps.png", n_train),
        render_slot_price_figure(stats, out_dir / "slot_price.png", picks),
    ]
