"""Run configuration: defaults <- INI config file <- command-line flags.

Every knob named in the module design decisions lives here; the resolved
mapping is embedded into every output artifact for provenance. Flags mirror
keys 1:1 (key `drlb_epochs` <-> flag `--drlb-epochs`).
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path

from .errors import DataError

ENV_DATA_DIR = "RTB_ARENA_DATA"

SECTION_OF = {}   # key -> section, filled below


@dataclass
class RunConfig:
    # [data]
    data_dir: str = ""
    campaign: str = "synthetic"
    slots: int = 96
    budget_frac: str = "1/2"
    train_days: int = 7
    test_days: int = 3
    synth_seed: int = 7
    synth_days: int = 10
    synth_imps: int = 50_000
    synth_fields: int = 6
    synth_vocab: int = 8
    synth_base_ctr: float = 0.0015
    synth_click_signal: float = 1.0
    synth_hour_amplitude: float = 0.8
    synth_price_base: float = 60.0
    synth_price_sigma: float = 0.55
    synth_intraday: float = 0.35
    synth_price_trend: float = 0.12
    # [ctr]
    ctr_k: int = 10
    ctr_lr: float = 1e-2
    ctr_l2: float = 1e-5
    ctr_epochs: int = 5
    ctr_seed: int = 0
    ctr_neg_downsample: float = 1.0
    # [strategies]
    ortb_c: float = 34.0
    ortb_lambda: float = 5.2e-7
    drlb_slots: int = 96
    drlb_epochs: int = 40
    drlb_scheme: str = "full"
    drlb_reward: str = "pctr"
    drlb_cumulative: bool = False
    fab_slots: int = 24
    fab_epochs: int = 40
    fab_reward: str = "op"
    rlb_slots: int = 96
    rlb_budget_units: int = 1000
    rlb_pctr_buckets: int = 100
    rl_lr: float = 1e-3
    rl_batch: int = 32
    rl_buffer: int = 100_000
    rl_gamma: float = 1.0
    target_refresh: int = 100
    tau: float = 0.005
    policy_delay: int = 2
    target_noise: float = 0.2
    noise_clip: float = 0.5
    explore_noise: float = 0.1
    eps_start: float = 1.0
    eps_end: float = 0.05
    rl_selection_margin: float = 0.01
    # [bench]
    strategies: str = "lin,ortb,rlb,drlb,fab"
    fractions: str = "1/2,1/4,1/8,1/16"
    seeds: str = "0,1,2"
    ablation_fraction: str = "1/2"
    out_dir: str = "out"
    jobs: int = 0          # 0 -> number of available cores
    figures: bool = True
    use_cache: bool = True
    trace_test_day: int = 2

    # -- derived views --------------------------------------------------------

    def fraction_list(self) -> list[Fraction]:
        return [parse_fraction(f) for f in self.fractions.split(",") if f.strip()]

    def seed_list(self) -> list[int]:
        return [int(s) for s in self.seeds.split(",") if s.strip()]

    def strategy_list(self) -> list[str]:
        out = [s.strip() for s in self.strategies.split(",") if s.strip()]
        known = {"lin", "ortb", "rlb", "drlb", "fab"}
        bad = [s for s in out if s not in known]
        if bad:
            raise DataError(f"unknown strategies: {bad}")
        return out

    def resolve_data_dir(self) -> str:
        return self.data_dir or os.environ.get(ENV_DATA_DIR, "")

    def effective_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "data": ("data_dir", "campaign", "slots", "budget_frac", "train_days", "test_days",
             "synth_seed", "synth_days", "synth_imps", "synth_fields", "synth_vocab",
             "synth_base_ctr", "synth_click_signal", "synth_hour_amplitude",
             "synth_price_base", "synth_price_sigma", "synth_intraday",
             "synth_price_trend"),
    "ctr": ("ctr_k", "ctr_lr", "ctr_l2", "ctr_epochs", "ctr_seed", "ctr_neg_downsample"),
    "strategies": ("ortb_c", "ortb_lambda", "drlb_slots", "drlb_epochs", "drlb_scheme",
                   "drlb_reward", "drlb_cumulative", "fab_slots", "fab_epochs",
                   "fab_reward", "rlb_slots", "rlb_budget_units", "rlb_pctr_buckets",
                   "rl_lr", "rl_batch", "rl_buffer", "rl_gamma", "target_refresh",
                   "tau", "policy_delay", "target_noise", "noise_clip", "explore_noise",
                   "eps_start", "eps_end", "rl_selection_margin"),
    "bench": ("strategies", "fractions", "seeds", "ablation_fraction", "out_dir",
              "jobs", "figures", "use_cache", "trace_test_day"),
}
for _section, _keys in _SECTIONS.items():
    for _k in _keys:
        SECTION_OF[_k] = _section

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_fraction(text: str | Fraction) -> Fraction:
    if isinstance(text, Fraction):
        return text
    try:
        frac = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise DataError(f"bad fraction {text!r}") from None
    if not 0 < frac <= 1:
        raise DataError(f"budget fraction must be in (0, 1], got {frac}")
    return frac


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        if kind in ("bool", bool):
            if isinstance(raw, bool):
                return raw
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return str(raw)
    except ValueError:
        raise DataError(f"config value for {name!r} is invalid: {raw!r}") from None


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the INI file, then explicit overrides (CLI flags)."""
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise DataError(f"config file not found: {path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                if key not in _FIELD_TYPES:
                    raise DataError(f"unknown config key {key!r} in [{section}]")
                values[key] = _coerce(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in _FIELD_TYPES:
            raise DataError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    return RunConfig(**values)


def write_config_ini(config: RunConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        parser.add_section(section)
        for key in keys:
            parser.set(section, key, str(getattr(config, key)))
    with Path(path).open("w") as fh:
        parser.write(fh)
