"""Command-line entry point wiring ingestion, CTR training, tuning, replay,
benchmarks, and traces.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import bench as bench_mod
from .auction import ConstantStrategy, run_episode, write_trace_csv
from .config import ENV_DATA_DIR, RunConfig, load_config, parse_fraction
from .ctr import TrainConfig, apply_model, auc, fm_train_dataset, load_model, save_model, score_episode
from .drlb import DrlbAgent
from .errors import DataError, NumericalError
from .fab import FabAgent
from .logs import (IPINYOU_SCHEMA, CANONICAL_FRACTIONS, LogSchema, SyntheticConfig,
                   dataset_statistics, gen_synthetic_log, load_dataset, load_records,
                   save_dataset, split_campaign, synthetic_dataset, synthetic_schema,
                   write_tsv, Vocab, build_episodes)
from .rlb import RlbStrategy, load_table, rlb_lite_build, save_table
from .static import LinParams, LinStrategy, OrtbParams, OrtbStrategy, tune_base_bid


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# Flags shared by every subcommand; they mirror config keys 1:1.
_COMMON_FLAGS = [
    ("--config", {"help": "INI config file"}),
    ("--data-dir", {"dest": "data_dir", "help": f"data directory (default ${ENV_DATA_DIR})"}),
    ("--campaign", {"dest": "campaign", "help": "campaign id (default synthetic)"}),
    ("--out-dir", {"dest": "out_dir", "help": "output directory"}),
    ("--slots", {"dest": "slots", "help": "time slots per day (24/48/96)"}),
    ("--budget-frac", {"dest": "budget_frac", "help": "budget fraction, e.g. 1/2"}),
    ("--jobs", {"dest": "jobs", "help": "parallel workers (0 = cores)"}),
    ("--seed", {"dest": "_seed", "help": "seed for train/replay commands"}),
    ("--no-figures", {"dest": "figures", "action": "store_const", "const": "false",
                      "help": "skip figure rendering"}),
    ("--no-cache", {"dest": "use_cache", "action": "store_const", "const": "false",
                    "help": "ignore and overwrite cached cells"}),
]

_CONFIG_FLAG_KEYS = [
    "synth_seed", "synth_days", "synth_imps", "synth_fields", "synth_vocab",
    "synth_base_ctr", "synth_click_signal", "synth_price_base", "synth_price_sigma",
    "synth_intraday", "synth_price_trend", "train_days", "test_days",
    "ctr_k", "ctr_lr", "ctr_l2", "ctr_epochs", "ctr_seed", "ctr_neg_downsample",
    "ortb_c", "ortb_lambda", "drlb_slots", "drlb_epochs", "drlb_scheme",
    "drlb_reward", "drlb_cumulative", "fab_slots", "fab_epochs", "fab_reward",
    "rlb_slots", "rlb_budget_units", "rlb_pctr_buckets", "rl_lr", "rl_batch",
    "rl_buffer", "rl_gamma", "target_refresh", "tau", "policy_delay",
    "target_noise", "noise_clip", "explore_noise", "eps_start", "eps_end",
    "rl_selection_margin",
    "strategies", "fractions", "seeds", "ablation_fraction", "trace_test_day",
]


def _add_common(parser: argparse.ArgumentParser) -> None:
    for flag, kwargs in _COMMON_FLAGS:
        parser.add_argument(flag, **kwargs)
    for key in _CONFIG_FLAG_KEYS:
        parser.add_argument("--" + key.replace("_", "-"), dest=key, help=argparse.SUPPRESS)


def build_parser() -> _Parser:
    parser = _Parser(prog="rtb-arena",
                     description="Auction replay, bidding strategies, benchmarks")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", help="parse TSV logs into an episode cache")
    _add_common(p)
    p.add_argument("--schema", help="schema JSON (default: processed-iPinYou layout)")

    p = sub.add_parser("synth", help="generate a synthetic campaign")
    _add_common(p)
    p.add_argument("--synthetic", help="compact overrides, e.g. seed=7,n=50000")
    p.add_argument("--tsv", action="store_true", help="also write the TSV log")

    p = sub.add_parser("ctr", help="CTR model commands")
    ctr_sub = p.add_subparsers(dest="ctr_command", metavar="train|score")
    for name, help_text in (("train", "fit the CTR model"),
                            ("score", "fill pctr into the episode cache")):
        q = ctr_sub.add_parser(name, help=help_text)
        _add_common(q)
        q.add_argument("--model", help="model file path")

    p = sub.add_parser("tune-lin", help="exhaustive base-bid search")
    _add_common(p)

    p = sub.add_parser("train", help="train an RL bidding strategy")
    _add_common(p)
    p.add_argument("--strategy", required=True, choices=("drlb", "fab", "rlb"))
    p.add_argument("--reward", choices=("clk", "pctr", "dnn", "op"))
    p.add_argument("--state-scheme", dest="state_scheme",
                   choices=("full", "state_1", "state_2", "state_3", "state_4",
                            "state_5", "state_6"))

    p = sub.add_parser("replay", help="replay test episodes with a strategy")
    _add_common(p)
    p.add_argument("--strategy", required=True,
                   choices=("lin", "ortb", "rlb", "drlb", "fab", "const"))
    p.add_argument("--checkpoint", help="agent checkpoint / value table")
    p.add_argument("--price", type=int, default=300, help="price for const strategy")
    p.add_argument("--trace", action="store_true", help="dump per-slot CSV per episode")

    p = sub.add_parser("bench", help="run the benchmark grid")
    _add_common(p)
    p.add_argument("--ablations", action="store_true",
                   help="also run state/slot/reward ablations")

    p = sub.add_parser("trace", help="per-slot base-bid trace vs ground truth")
    _add_common(p)

    return parser


def _gather_overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    for key in ["data_dir", "campaign", "out_dir", "slots", "budget_frac", "jobs",
                "figures", "use_cache"] + _CONFIG_FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return overrides


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = _gather_overrides(args)
    if getattr(args, "synthetic", None):
        for part in args.synthetic.split(","):
            key, _, value = part.partition("=")
            key = key.strip()
            alias = {"seed": "synth_seed", "n": "synth_imps", "days": "synth_days",
                     "fields": "synth_fields", "signal": "synth_click_signal"}.get(key)
            if alias is None:
                raise UsageError(f"unknown --synthetic key {key!r}")
            overrides[alias] = value.strip()
    if getattr(args, "reward", None):
        overrides[f"{args.strategy}_reward"] = args.reward
    if getattr(args, "state_scheme", None):
        overrides["drlb_scheme"] = args.state_scheme
    seed = getattr(args, "_seed", None)
    if seed is not None:
        overrides["seeds"] = str(int(seed))
    return load_config(getattr(args, "config", None), overrides)


def _synth_config(config: RunConfig) -> SyntheticConfig:
    return SyntheticConfig(
        seed=config.synth_seed, n_days=config.synth_days,
        imps_per_day=config.synth_imps, n_fields=config.synth_fields,
        vocab_per_field=config.synth_vocab, base_ctr=config.synth_base_ctr,
        click_signal=config.synth_click_signal,
        hour_click_amplitude=config.synth_hour_amplitude,
        price_base=config.synth_price_base, price_sigma=config.synth_price_sigma,
        intraday_amplitude=config.synth_intraday,
        day_price_trend=config.synth_price_trend)


def _cache_path(config: RunConfig) -> Path:
    return Path(config.out_dir) / f"{config.campaign}.episodes"


def _load_or_build_dataset(config: RunConfig, allow_synth: bool = True):
    cache = _cache_path(config)
    if cache.exists():
        return load_dataset(cache)
    if config.campaign.startswith("synthetic") and allow_synth:
        dataset = synthetic_dataset(
            _synth_config(config), slot_count=config.slots,
            budget_fraction=parse_fraction(config.budget_frac),
            train_days=config.train_days, test_days=config.test_days)
        cache.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(dataset, cache)
        return dataset
    raise DataError(
        f"no episode cache at {cache}; run `rtb-arena ingest` or `rtb-arena synth` first")


def _write_stats(dataset, config: RunConfig, out_dir: Path) -> None:
    if any(ep.pctrs is None for ep in dataset.episodes):
        return
    stats = dataset_statistics(dataset, slot_count=config.slots)
    rows = stats.rows()
    bench_mod._write_csv(out_dir / "stats.csv", rows)
    per_day = [{"date": d, "imps": stats.per_day_imps[d],
                "avg_price": round(stats.per_day_avg_price[d], 4)}
               for d in stats.per_day_imps]
    bench_mod._write_csv(out_dir / "stats_per_day.csv", per_day)
    slot_rows = []
    for date, means in stats.per_slot_avg_price.items():
        for t, value in enumerate(means):
            slot_rows.append({"date": date, "slot": t, "avg_price": round(float(value), 4)})
    bench_mod._write_csv(out_dir / "stats_per_slot_price.csv", slot_rows)
    if config.figures:
        from .plots import render_dataset_figures
        render_dataset_figures(dataset, stats, out_dir / "figures")


def _provenance(config: RunConfig, out_dir: Path, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "config": config.to_dict()}
    (out_dir / f"{command.replace(' ', '_')}_config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2))


# ---------------------------------------------------------------------------
# Subcommand implementations


def cmd_ingest(args) -> int:
    config = _config_from_args(args)
    data_dir = config.resolve_data_dir()
    if not data_dir:
        raise UsageError("ingest requires --data-dir (or $" + ENV_DATA_DIR + ")")
    schema = LogSchema.from_json(args.schema) if args.schema else IPINYOU_SCHEMA
    campaign_dir = Path(data_dir) / config.campaign
    train_file = campaign_dir / "train.log.txt"
    test_file = campaign_dir / "test.log.txt"
    if not train_file.exists() or not test_file.exists():
        raise DataError(f"expected {train_file} and {test_file}")
    records = load_records(train_file, schema) + load_records(test_file, schema)
    records.sort(key=lambda r: (r.date, r.seconds))
    vocab = Vocab()
    episodes = build_episodes(records, config.slots, parse_fraction(config.budget_frac), vocab)
    dataset = split_campaign(config.campaign, episodes, vocab,
                             train_days=config.train_days, test_days=config.test_days)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, _cache_path(config))
    _provenance(config, out_dir, "ingest")
    _write_stats(dataset, config, out_dir)
    print(f"ingested {sum(len(ep) for ep in dataset.episodes)} impressions "
          f"over {len(dataset.episodes)} days -> {_cache_path(config)}")
    return 0


def cmd_synth(args) -> int:
    config = _config_from_args(args)
    synth = _synth_config(config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = synthetic_dataset(synth, slot_count=config.slots,
                                budget_fraction=parse_fraction(config.budget_frac),
                                train_days=config.train_days, test_days=config.test_days)
    save_dataset(dataset, _cache_path(config))
    if args.tsv:
        write_tsv(gen_synthetic_log(synth), out_dir / f"{config.campaign}.tsv",
                  synthetic_schema(synth.n_fields))
    _provenance(config, out_dir, "synth")
    _write_stats(dataset, config, out_dir)
    print(f"synthetic campaign {dataset.campaign_id}: "
          f"{sum(len(ep) for ep in dataset.episodes)} impressions -> {_cache_path(config)}")
    return 0


def _ctr_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(k=config.ctr_k, learning_rate=config.ctr_lr,
                       l2_bias=config.ctr_l2, l2_linear=config.ctr_l2,
                       l2_latent=config.ctr_l2, epochs=config.ctr_epochs,
                       seed=config.ctr_seed, neg_downsample=config.ctr_neg_downsample)


def cmd_ctr(args) -> int:
    if not getattr(args, "ctr_command", None):
        raise UsageError("ctr requires a subcommand: train | score")
    config = _config_from_args(args)
    out_dir = Path(config.out_dir)
    dataset = _load_or_build_dataset(config)
    model_path = Path(args.model) if args.model else out_dir / f"{config.campaign}.fm"
    if args.ctr_command == "train":
        model = fm_train_dataset(dataset, _ctr_config(config))
        model_path.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, model_path, extra_meta={"config": config.to_dict()})
        _provenance(config, out_dir, "ctr train")
        print(f"model -> {model_path}")
        return 0
    # score
    if not model_path.exists():
        raise DataError(f"model file not found: {model_path}; run `ctr train` first")
    model = load_model(model_path)
    apply_model(model, dataset)
    save_dataset(dataset, _cache_path(config))
    scores = {}
    for split, episodes in (("train", dataset.train_episodes),
                            ("test", dataset.test_episodes)):
        preds = [p for ep in episodes for p in ep.pctrs]
        labels = [int(c) for ep in episodes for c in ep.clicks]
        scores[split] = auc(preds, labels)
    (out_dir / "ctr_auc.json").write_text(json.dumps(scores, sort_keys=True, indent=2))
    _provenance(config, out_dir, "ctr score")
    _write_stats(dataset, config, out_dir)
    print(f"AUC train={scores['train']:.4f} test={scores['test']:.4f}; cache updated")
    return 0


def cmd_tune_lin(args) -> int:
    config = _config_from_args(args)
    dataset = _load_or_build_dataset(config)
    artifacts = bench_mod.Artifacts(dataset, config)
    out = {}
    for fraction in config.fraction_list():
        result = artifacts.lin_tune(fraction)
        out[str(fraction)] = {"base_bid": result.base_bid, "clicks": result.clicks,
                              "pctr_sum": result.pctr_sum}
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "lin_tuning.json").write_text(json.dumps(
        {"config": config.to_dict(), "results": out}, sort_keys=True, indent=2))
    _provenance(config, out_dir, "tune-lin")
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    dataset = _load_or_build_dataset(config)
    artifacts = bench_mod.Artifacts(dataset, config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config.seed_list()[0]
    fraction = parse_fraction(config.budget_frac)
    if args.strategy == "rlb":
        table = rlb_lite_build(dataset.train_episodes, slot_count=config.rlb_slots,
                               budget_units=config.rlb_budget_units,
                               pctr_buckets=config.rlb_pctr_buckets)
        path = out_dir / "checkpoints" / f"rlb-t{config.rlb_slots}.ckpt"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_table(table, path, extra_meta={"config": config.to_dict()})
        print(f"value table -> {path}")
        return 0
    slots = {"drlb": config.drlb_slots, "fab": config.fab_slots}[args.strategy]
    spec = bench_mod.CellSpec(strategy=args.strategy, fraction=config.budget_frac,
                              seed=seed, slot_count=slots)
    cell = bench_mod.run_cell(dataset, config, artifacts, spec, out_dir)
    _provenance(config, out_dir, "train")
    print(json.dumps(cell.row(), sort_keys=True))
    return 0


def cmd_replay(args) -> int:
    config = _config_from_args(args)
    dataset = _load_or_build_dataset(config)
    artifacts = bench_mod.Artifacts(dataset, config)
    fraction = parse_fraction(config.budget_frac)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    slot_count = config.slots
    if args.strategy == "lin":
        strategy = LinStrategy(artifacts.lin_params(fraction))
    elif args.strategy == "ortb":
        strategy = OrtbStrategy(OrtbParams(c=config.ortb_c, lam=config.ortb_lambda))
    elif args.strategy == "const":
        strategy = ConstantStrategy(args.price)
    elif args.strategy == "rlb":
        table = (load_table(args.checkpoint) if args.checkpoint
                 else artifacts.rlb_table(config.rlb_slots))
        slot_count = table.slot_count
        strategy = RlbStrategy(table)
    elif args.strategy in ("drlb", "fab"):
        if not args.checkpoint:
            raise UsageError(f"replay --strategy {args.strategy} requires --checkpoint")
        agent = (DrlbAgent.load(args.checkpoint) if args.strategy == "drlb"
                 else FabAgent.load(args.checkpoint))
        slot_count = agent.config.slot_count
        strategy = agent.strategy()
    else:
        raise UsageError(f"unknown strategy {args.strategy}")

    rows = []
    for i, ep in enumerate(dataset.test_episodes):
        result = run_episode(strategy, ep, budget=ep.budget_for(fraction),
                             slot_count=slot_count)
        rows.append(result.to_dict())
        if args.trace:
            write_trace_csv(result, out_dir / f"replay_trace_{ep.date}.csv")
    with (out_dir / "replay_results.jsonl").open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _provenance(config, out_dir, "replay")
    total_clicks = sum(r["clicks"] for r in rows)
    total_pctr = sum(r["pctr_sum"] for r in rows)
    print(f"{args.strategy}: clicks={total_clicks} pctr={total_pctr:.4f} "
          f"over {len(rows)} test episodes")
    return 0


def cmd_bench(args) -> int:
    config = _config_from_args(args)
    for fraction in config.fraction_list():
        if fraction not in CANONICAL_FRACTIONS:
            raise DataError(f"bench fractions must be canonical {CANONICAL_FRACTIONS}")
    dataset = _load_or_build_dataset(config)
    artifacts = bench_mod.Artifacts(dataset, config)
    out_dir = Path(config.out_dir)
    report = bench_mod.run_grid(dataset, config, out_dir, artifacts)
    _write_stats(dataset, config, out_dir)
    if args.ablations:
        bench_mod.ablation_state_designs(dataset, config, out_dir, artifacts)
        bench_mod.ablation_slot_counts(dataset, config, out_dir, artifacts)
        bench_mod.ablation_rewards(dataset, config, out_dir, artifacts)
    print(f"benchmark rows: {len(report.cells)}; medians: {len(report.medians)}; "
          f"output -> {out_dir}")
    return 0


def cmd_trace(args) -> int:
    config = _config_from_args(args)
    dataset = _load_or_build_dataset(config)
    artifacts = bench_mod.Artifacts(dataset, config)
    out_dir = Path(config.out_dir)
    rows = bench_mod.base_bid_trace(dataset, config, out_dir, artifacts)
    _provenance(config, out_dir, "trace")
    print(f"trace rows: {len(rows)} -> {out_dir / 'base_bid_trace.csv'}")
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "ctr": cmd_ctr,
    "tune-lin": cmd_tune_lin,
    "train": cmd_train,
    "replay": cmd_replay,
    "bench": cmd_bench,
    "trace": cmd_trace,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
