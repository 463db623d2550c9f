"""Experiment grid: train/evaluate every strategy over budget fractions and
seeds, the three MDP-component ablations, and the per-slot base-bid trace.

Cells are cached under a content hash of (cell spec, resolved config,
dataset fingerprint), so reruns are byte-identical and cheap. Reports are
CSV plus a JSON summary; figures render next to the delimited output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import multiprocessing
import statistics
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .auction import run_episode
from .config import RunConfig, parse_fraction
from .ctr import TrainConfig, apply_model, fm_train_dataset
from .drlb import DrlbAgent, DrlbConfig
from .errors import DataError
from .fab import FabAgent, FabConfig
from .logs import CampaignDataset
from .mdp import closed_form_lambda, fab_base_bid
from .rlb import RlbStrategy, RlbTable, rlb_lite_build
from .static import (LinParams, LinStrategy, OrtbParams, OrtbStrategy, TuneResult,
                     per_slot_optimal_base_bid, tune_base_bid)


@dataclass(frozen=True)
class CellSpec:
    strategy: str
    fraction: str           # "1/2" etc., kept as text for stable hashing
    seed: int
    slot_count: int
    scheme: str = ""
    reward: str = ""

    def label(self) -> str:
        frac = self.fraction.replace("/", "-")
        return f"{self.strategy}-f{frac}-s{self.seed}-t{self.slot_count}" + (
            f"-{self.scheme}" if self.scheme else "") + (
            f"-{self.reward}" if self.reward else "")


@dataclass
class CellResult:
    spec: CellSpec
    clicks: int
    pctr_sum: float
    cost: int
    imps_won: int
    cpm: float
    cpc: float | None
    early_stop_slot: int | None        # earliest over the test episodes
    per_episode: list[dict]

    def row(self) -> dict:
        return {
            "strategy": self.spec.strategy, "fraction": self.spec.fraction,
            "seed": self.spec.seed, "slots": self.spec.slot_count,
            "scheme": self.spec.scheme, "reward": self.spec.reward,
            "clicks": self.clicks, "pctr_sum": round(self.pctr_sum, 6),
            "cost": self.cost, "wins": self.imps_won,
            "cpm": round(self.cpm, 6),
            "cpc": round(self.cpc, 6) if self.cpc is not None else "undefined",
            "early_stop_slot": self.early_stop_slot if self.early_stop_slot is not None else "",
        }


class Artifacts:
    """Fraction-independent artifacts built once per dataset: the CTR model,
    per-fraction proportional-bid tuning, and the value table."""

    def __init__(self, dataset: CampaignDataset, config: RunConfig):
        self.dataset = dataset
        self.config = config
        self._tune: dict[Fraction, TuneResult] = {}
        self._rlb_tables: dict[int, RlbTable] = {}
        self.ensure_pctr()

    def ensure_pctr(self) -> None:
        if any(ep.pctrs is None for ep in self.dataset.episodes):
            cfg = self.config
            model = fm_train_dataset(self.dataset, TrainConfig(
                k=cfg.ctr_k, learning_rate=cfg.ctr_lr, l2_bias=cfg.ctr_l2,
                l2_linear=cfg.ctr_l2, l2_latent=cfg.ctr_l2, epochs=cfg.ctr_epochs,
                seed=cfg.ctr_seed, neg_downsample=cfg.ctr_neg_downsample))
            apply_model(model, self.dataset)
        self.avg_pctr = self.dataset.avg_pctr_train

    def lin_tune(self, fraction: Fraction) -> TuneResult:
        if fraction not in self._tune:
            self._tune[fraction] = tune_base_bid(
                self.dataset.train_episodes, fraction, self.avg_pctr)
        return self._tune[fraction]

    def lin_params(self, fraction: Fraction) -> LinParams:
        return LinParams(base_bid=self.lin_tune(fraction).base_bid, avg_pctr=self.avg_pctr)

    def rlb_table(self, slot_count: int) -> RlbTable:
        if slot_count not in self._rlb_tables:
            self._rlb_tables[slot_count] = rlb_lite_build(
                self.dataset.train_episodes, slot_count=slot_count,
                budget_units=self.config.rlb_budget_units,
                pctr_buckets=self.config.rlb_pctr_buckets)
        return self._rlb_tables[slot_count]


def _drlb_config(config: RunConfig, spec: CellSpec) -> DrlbConfig:
    return DrlbConfig(
        slot_count=spec.slot_count, scheme=spec.scheme or config.drlb_scheme,
        reward=spec.reward or config.drlb_reward,
        cumulative_rates=config.drlb_cumulative, epochs=config.drlb_epochs,
        gamma=config.rl_gamma, learning_rate=config.rl_lr,
        batch_size=config.rl_batch, buffer_capacity=config.rl_buffer,
        target_refresh=config.target_refresh, eps_start=config.eps_start,
        eps_end=config.eps_end, selection_margin=config.rl_selection_margin,
        seed=spec.seed)


def _fab_config(config: RunConfig, spec: CellSpec) -> FabConfig:
    return FabConfig(
        slot_count=spec.slot_count, reward=spec.reward or config.fab_reward,
        epochs=config.fab_epochs, gamma=config.rl_gamma,
        learning_rate=config.rl_lr, batch_size=config.rl_batch,
        buffer_capacity=config.rl_buffer, tau=config.tau,
        policy_delay=config.policy_delay, target_noise=config.target_noise,
        noise_clip=config.noise_clip, explore_noise=config.explore_noise,
        selection_margin=config.rl_selection_margin, seed=spec.seed)


def run_cell(dataset: CampaignDataset, config: RunConfig, artifacts: Artifacts,
             spec: CellSpec, out_dir: Path | None = None) -> CellResult:
    """Train (if needed) and evaluate one grid cell on the test episodes."""
    fraction = parse_fraction(spec.fraction)
    lin = artifacts.lin_params(fraction)
    if spec.strategy == "lin":
        strategy = LinStrategy(lin)
    elif spec.strategy == "ortb":
        strategy = OrtbStrategy(OrtbParams(c=config.ortb_c, lam=config.ortb_lambda))
    elif spec.strategy == "rlb":
        strategy = RlbStrategy(artifacts.rlb_table(spec.slot_count))
    elif spec.strategy == "drlb":
        agent = DrlbAgent(_drlb_config(config, spec), lin)
        agent.train(dataset, fraction)
        _save_agent(agent, spec, out_dir)
        strategy = agent.strategy()
    elif spec.strategy == "fab":
        agent = FabAgent(_fab_config(config, spec), lin)
        agent.train(dataset, fraction)
        _save_agent(agent, spec, out_dir)
        strategy = agent.strategy()
    else:
        raise DataError(f"unknown strategy {spec.strategy!r}")

    clicks = 0
    pctr = 0.0
    cost = 0
    wins = 0
    early: int | None = None
    per_episode = []
    for ep in dataset.test_episodes:
        result = run_episode(strategy, ep, budget=ep.budget_for(fraction),
                             slot_count=spec.slot_count)
        clicks += result.clicks
        pctr += result.pctr_sum
        cost += result.cost
        wins += result.imps_won
        if result.early_stop_slot is not None:
            early = result.early_stop_slot if early is None else min(early, result.early_stop_slot)
        per_episode.append(result.to_dict())
    return CellResult(
        spec=spec, clicks=clicks, pctr_sum=pctr, cost=cost, imps_won=wins,
        cpm=cost / wins * 1000.0 if wins else 0.0,
        cpc=cost / clicks if clicks else None,
        early_stop_slot=early, per_episode=per_episode)


def _save_agent(agent, spec: CellSpec, out_dir: Path | None) -> None:
    if out_dir is None:
        return
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    agent.save(ckpt_dir / f"{spec.label()}.ckpt")
    curve_dir = out_dir / "curves"
    curve_dir.mkdir(parents=True, exist_ok=True)
    with (curve_dir / f"{spec.label()}.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        rows = [asdict(h) for h in agent.history]
        if rows:
            writer.writerow(list(rows[0]))
            for row in rows:
                writer.writerow(list(row.values()))


# ---------------------------------------------------------------------------
# Caching


def dataset_fingerprint(dataset: CampaignDataset) -> str:
    h = hashlib.sha256()
    h.update(dataset.campaign_id.encode())
    for ep in dataset.episodes:
        h.update(ep.date.encode())
        for arr in (ep.seconds, ep.prices, ep.clicks):
            h.update(np.ascontiguousarray(arr).tobytes())
        if ep.pctrs is not None:
            h.update(np.ascontiguousarray(ep.pctrs).tobytes())
    return h.hexdigest()


_CELL_CONFIG_KEYS = (
    "ctr_k", "ctr_lr", "ctr_l2", "ctr_epochs", "ctr_seed", "ctr_neg_downsample",
    "ortb_c", "ortb_lambda", "drlb_epochs", "drlb_cumulative", "fab_epochs",
    "rlb_budget_units", "rlb_pctr_buckets", "rl_lr", "rl_batch", "rl_buffer",
    "rl_gamma", "target_refresh", "tau", "policy_delay", "target_noise",
    "noise_clip", "explore_noise", "eps_start", "eps_end",
)


def cell_cache_key(spec: CellSpec, config: RunConfig, fingerprint: str) -> str:
    payload = {
        "spec": asdict(spec),
        "config": {k: getattr(config, k) for k in _CELL_CONFIG_KEYS},
        "data": fingerprint,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _cell_from_cache(path: Path, spec: CellSpec) -> CellResult:
    data = json.loads(path.read_text())
    return CellResult(
        spec=spec, clicks=data["clicks"], pctr_sum=data["pctr_sum"],
        cost=data["cost"], imps_won=data["imps_won"], cpm=data["cpm"],
        cpc=data["cpc"], early_stop_slot=data["early_stop_slot"],
        per_episode=data["per_episode"])


def _cell_to_cache(path: Path, cell: CellResult) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "clicks": cell.clicks, "pctr_sum": cell.pctr_sum, "cost": cell.cost,
        "imps_won": cell.imps_won, "cpm": cell.cpm, "cpc": cell.cpc,
        "early_stop_slot": cell.early_stop_slot, "per_episode": cell.per_episode,
    }
    path.write_text(json.dumps(payload, sort_keys=True))


# Worker globals for fork-based parallel cells.
_POOL_STATE: dict = {}


def _pool_worker(spec: CellSpec) -> CellResult:
    return run_cell(_POOL_STATE["dataset"], _POOL_STATE["config"],
                    _POOL_STATE["artifacts"], spec, _POOL_STATE["out_dir"])


def run_cells(dataset: CampaignDataset, config: RunConfig, artifacts: Artifacts,
              specs: Sequence[CellSpec], out_dir: Path) -> list[CellResult]:
    """Run cells (cached, optionally in parallel) preserving spec order."""
    fingerprint = dataset_fingerprint(dataset)
    cache_dir = out_dir / "cache"
    results: dict[CellSpec, CellResult] = {}
    pending: list[CellSpec] = []
    for spec in specs:
        cache_path = cache_dir / f"{cell_cache_key(spec, config, fingerprint)}.json"
        if config.use_cache and cache_path.exists():
            results[spec] = _cell_from_cache(cache_path, spec)
        else:
            pending.append(spec)
    jobs = min(config.effective_jobs(), len(pending)) if pending else 0
    if jobs > 1 and multiprocessing.get_start_method(allow_none=False) == "fork":
        _POOL_STATE.update(dataset=dataset, config=config, artifacts=artifacts,
                           out_dir=out_dir)
        try:
            with multiprocessing.get_context("fork").Pool(jobs) as pool:
                done = pool.map(_pool_worker, pending)
        finally:
            _POOL_STATE.clear()
        for spec, cell in zip(pending, done):
            results[spec] = cell
    else:
        for spec in pending:
            results[spec] = run_cell(dataset, config, artifacts, spec, out_dir)
    for spec in pending:
        cache_path = cache_dir / f"{cell_cache_key(spec, config, fingerprint)}.json"
        _cell_to_cache(cache_path, results[spec])
    return [results[s] for s in specs]


# ---------------------------------------------------------------------------
# Grid and ablations


def strategy_slots(config: RunConfig, strategy: str) -> int:
    return {"lin": config.slots, "ortb": config.slots, "rlb": config.rlb_slots,
            "drlb": config.drlb_slots, "fab": config.fab_slots}[strategy]


@dataclass
class BenchmarkReport:
    cells: list[CellResult]
    medians: list[dict]

    def rows(self) -> list[dict]:
        return [c.row() for c in self.cells]


def _median_rows(cells: list[CellResult], group_keys: tuple[str, ...]) -> list[dict]:
    groups: dict[tuple, list[CellResult]] = {}
    order: list[tuple] = []
    for cell in cells:
        key = tuple(getattr(cell.spec, k) for k in group_keys)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(cell)
    rows = []
    for key in order:
        group = groups[key]
        row = dict(zip(group_keys, key))
        row["clicks_median"] = statistics.median(c.clicks for c in group)
        row["pctr_median"] = round(statistics.median(c.pctr_sum for c in group), 6)
        row["cost_median"] = statistics.median(c.cost for c in group)
        row["seeds"] = len(group)
        rows.append(row)
    return rows


def grid_specs(config: RunConfig) -> list[CellSpec]:
    specs = []
    for strategy in config.strategy_list():
        for fraction in config.fractions.split(","):
            fraction = fraction.strip()
            parse_fraction(fraction)
            for seed in config.seed_list():
                specs.append(CellSpec(
                    strategy=strategy, fraction=fraction, seed=seed,
                    slot_count=strategy_slots(config, strategy)))
    return specs


def run_grid(dataset: CampaignDataset, config: RunConfig, out_dir: str | Path,
             artifacts: Artifacts | None = None) -> BenchmarkReport:
    """The main benchmark: every strategy x fraction x seed on the test set."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = artifacts or Artifacts(dataset, config)
    cells = run_cells(dataset, config, artifacts, grid_specs(config), out_dir)
    medians = _median_rows(cells, ("strategy", "fraction"))
    report = BenchmarkReport(cells=cells, medians=medians)
    _write_csv(out_dir / "bench_cells.csv", report.rows())
    _write_csv(out_dir / "bench_medians.csv", medians)
    summary = {
        "config": config.to_dict(),
        "campaign": dataset.campaign_id,
        "dataset_fingerprint": dataset_fingerprint(dataset),
        "lin_tuning": {str(f): asdict(artifacts.lin_tune(f))
                       for f in config.fraction_list()},
        "cells": report.rows(),
        "medians": medians,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    if config.figures:
        from .plots import render_bench_figure
        render_bench_figure(report, out_dir / "figures" / "bench_clicks.png")
    return report


def ablation_state_designs(dataset: CampaignDataset, config: RunConfig,
                           out_dir: str | Path,
                           artifacts: Artifacts | None = None) -> BenchmarkReport:
    """Value-based bidder across the six state schemes (table order)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = artifacts or Artifacts(dataset, config)
    fraction = config.ablation_fraction
    parse_fraction(fraction)
    specs = [CellSpec(strategy="drlb", fraction=fraction, seed=seed,
                      slot_count=config.drlb_slots, scheme=scheme)
             for scheme in ("state_6", "state_5", "state_4", "state_3", "state_2", "state_1")
             for seed in config.seed_list()]
    cells = run_cells(dataset, config, artifacts, specs, out_dir)
    medians = _median_rows(cells, ("scheme", "fraction"))
    for row in medians:
        row["rates"] = "cumulative" if config.drlb_cumulative else "per-slot"
    rows = [dict(c.row(), rates="cumulative" if config.drlb_cumulative else "per-slot")
            for c in cells]
    _write_csv(out_dir / "ablation_states.csv", rows)
    _write_csv(out_dir / "ablation_states_medians.csv", medians)
    return BenchmarkReport(cells=cells, medians=medians)


def ablation_slot_counts(dataset: CampaignDataset, config: RunConfig,
                         out_dir: str | Path,
                         artifacts: Artifacts | None = None) -> BenchmarkReport:
    """DRLB and FAB at 24/48/96 slots under the ablation fraction."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = artifacts or Artifacts(dataset, config)
    fraction = config.ablation_fraction
    parse_fraction(fraction)
    specs = [CellSpec(strategy=strategy, fraction=fraction, seed=seed, slot_count=slots)
             for strategy in ("drlb", "fab")
             for slots in (24, 48, 96)
             for seed in config.seed_list()]
    cells = run_cells(dataset, config, artifacts, specs, out_dir)
    medians = _median_rows(cells, ("strategy", "slot_count", "fraction"))
    _write_csv(out_dir / "ablation_slots.csv", [c.row() for c in cells])
    _write_csv(out_dir / "ablation_slots_medians.csv", medians)
    return BenchmarkReport(cells=cells, medians=medians)


def ablation_rewards(dataset: CampaignDataset, config: RunConfig,
                     out_dir: str | Path, artifacts: Artifacts | None = None,
                     fractions: tuple[str, str] = ("1/2", "1/16")) -> BenchmarkReport:
    """FAB under the four reward variants at a loose and a tight budget."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = artifacts or Artifacts(dataset, config)
    specs = [CellSpec(strategy="fab", fraction=fraction, seed=seed,
                      slot_count=config.fab_slots, reward=reward)
             for reward in ("clk", "pctr", "dnn", "op")
             for fraction in fractions
             for seed in config.seed_list()]
    cells = run_cells(dataset, config, artifacts, specs, out_dir)
    medians = _median_rows(cells, ("reward", "fraction"))
    _write_csv(out_dir / "ablation_rewards.csv", [c.row() for c in cells])
    _write_csv(out_dir / "ablation_rewards_medians.csv", medians)
    return BenchmarkReport(cells=cells, medians=medians)


# ---------------------------------------------------------------------------
# Per-slot base-bid trace


def base_bid_trace(dataset: CampaignDataset, config: RunConfig, out_dir: str | Path,
                   artifacts: Artifacts | None = None, slot_count: int = 96,
                   fraction: str = "1/2", test_day: int | None = None,
                   seed: int | None = None) -> list[dict]:
    """Per-slot base bids: ground truth vs the two slot bidders on one test
    day (both trained at the trace slot count)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = artifacts or Artifacts(dataset, config)
    frac = parse_fraction(fraction)
    seed = seed if seed is not None else config.seed_list()[0]
    day_index = test_day if test_day is not None else config.trace_test_day
    if not 0 <= day_index < len(dataset.test_episodes):
        raise DataError(f"test day index {day_index} out of range")
    episode = dataset.test_episodes[day_index]
    lin = artifacts.lin_params(frac)

    specs = [CellSpec(strategy="drlb", fraction=fraction, seed=seed, slot_count=slot_count),
             CellSpec(strategy="fab", fraction=fraction, seed=seed, slot_count=slot_count)]
    ckpt_dir = out_dir / "checkpoints"
    agents = {}
    for spec in specs:
        path = ckpt_dir / f"{spec.label()}.ckpt"
        if not path.exists():
            # A cached cell can exist without its checkpoint; force the run.
            import dataclasses as _dc
            run_cells(dataset, _dc.replace(config, use_cache=False), artifacts,
                      [spec], out_dir)
            if not path.exists():
                raise DataError(f"checkpoint missing after training: {path}")
        agents[spec.strategy] = (DrlbAgent.load(path) if spec.strategy == "drlb"
                                 else FabAgent.load(path))

    gt = per_slot_optimal_base_bid(episode, slot_count=slot_count,
                                   budget_fraction=frac, avg_pctr=artifacts.avg_pctr)
    budget = episode.budget_for(frac)
    drlb_policy = agents["drlb"].strategy()
    run_episode(drlb_policy, episode, budget=budget, slot_count=slot_count)
    lambda0 = agents["drlb"].lambda0
    drlb_base = []
    for t in range(slot_count):
        history = tuple(drlb_policy.action_history[:t])
        lam = closed_form_lambda(lambda0, history)
        drlb_base.append(lin.avg_pctr / lam)
    fab_policy = agents["fab"].strategy()
    run_episode(fab_policy, episode, budget=budget, slot_count=slot_count)
    fab_base = [fab_base_bid(lin.base_bid, a) for a in fab_policy.action_history]

    rows = [{"slot": t, "gt": int(gt[t]), "drlb": round(drlb_base[t], 4),
             "fab": round(fab_base[t], 4)} for t in range(slot_count)]
    _write_csv(out_dir / "base_bid_trace.csv", rows)
    if config.figures:
        from .plots import render_trace_figure
        render_trace_figure(rows, out_dir / "figures" / "base_bid_trace.png")
    return rows


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if not rows:
            fh.write("")
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
