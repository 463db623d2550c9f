"""Impression-log ingestion: TSV parsing, synthetic log generation, episode
building, budget computation, and dataset statistics.

Logs follow the tab-separated processed-iPinYou layout. Prices and budgets
are integers in the dataset's native unit with a hard 300 cap; budgets
round down. The log records only winning impressions, so replay treats it
as the universe of auctions.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .binio import load_bundle, save_bundle
from .errors import DataError, ParseError

PRICE_CAP = 300
SECONDS_PER_DAY = 86400
VALID_SLOT_COUNTS = (24, 48, 96)
CANONICAL_FRACTIONS = (Fraction(1, 2), Fraction(1, 4), Fraction(1, 8), Fraction(1, 16))

CACHE_VERSION = 1


# ---------------------------------------------------------------------------
# Schema and record parsing


@dataclass(frozen=True)
class LogSchema:
    """Column layout of a TSV impression log.

    `feature_cols` become `field=value` tokens; columns listed in
    `multi_value_cols` hold comma-separated value lists and emit one token
    per value.
    """

    columns: tuple[str, ...]
    click_col: str = "click"
    price_col: str = "payprice"
    timestamp_col: str = "timestamp"
    feature_cols: tuple[str, ...] = ()
    multi_value_cols: frozenset[str] = frozenset()

    def __post_init__(self):
        missing = [c for c in (self.click_col, self.price_col, self.timestamp_col) if c not in self.columns]
        if missing:
            raise DataError(f"schema missing required columns: {missing}")
        unknown = [c for c in self.feature_cols if c not in self.columns]
        if unknown:
            raise DataError(f"schema feature columns not in layout: {unknown}")

    @staticmethod
    def from_json(path: str | Path) -> "LogSchema":
        spec = json.loads(Path(path).read_text())
        return LogSchema(
            columns=tuple(spec["columns"]),
            click_col=spec.get("click_col", "click"),
            price_col=spec.get("price_col", "payprice"),
            timestamp_col=spec.get("timestamp_col", "timestamp"),
            feature_cols=tuple(spec.get("feature_cols", ())),
            multi_value_cols=frozenset(spec.get("multi_value_cols", ())),
        )


def synthetic_schema(n_fields: int) -> LogSchema:
    """Layout emitted by the synthetic generator."""
    fields = tuple(f"f{i}" for i in range(n_fields))
    return LogSchema(
        columns=("click", "weekday", "hour", "timestamp", "payprice") + fields,
        feature_cols=("weekday", "hour") + fields,
    )


# The de facto community layout for the processed iPinYou logs.
IPINYOU_COLUMNS = (
    "click", "weekday", "hour", "bidid", "timestamp", "logtype", "ipinyouid",
    "useragent", "IP", "region", "city", "adexchange", "domain", "url", "urlid",
    "slotid", "slotwidth", "slotheight", "slotvisibility", "slotformat",
    "slotprice", "creative", "bidprice", "payprice", "keypage", "advertiser",
    "usertag",
)

IPINYOU_SCHEMA = LogSchema(
    columns=IPINYOU_COLUMNS,
    feature_cols=(
        "weekday", "hour", "useragent", "region", "city", "adexchange",
        "domain", "slotid", "slotwidth", "slotheight", "slotvisibility",
        "slotformat", "slotprice", "creative", "usertag",
    ),
    multi_value_cols=frozenset({"usertag"}),
)


@dataclass(slots=True)
class ImpressionRecord:
    """One logged auction: the winning impression's market price and label."""

    date: str                     # yyyymmdd
    seconds: int                  # second of day, [0, 86400)
    features: tuple[str, ...]     # field=value tokens
    market_price: int             # clipped to [0, PRICE_CAP]
    click: int                    # {0, 1}
    pctr: float | None = None    # filled by the CTR model


def _parse_timestamp(raw: str, line_no: int | None) -> tuple[str, int]:
    # iPinYou format: yyyyMMddHHmmss plus optional milliseconds.
    if len(raw) < 14 or not raw[:14].isdigit():
        raise ParseError(f"bad timestamp {raw!r}", line_no)
    date = raw[:8]
    h, m, s = int(raw[8:10]), int(raw[10:12]), int(raw[12:14])
    if h > 23 or m > 59 or s > 59:
        raise ParseError(f"bad time of day in {raw!r}", line_no)
    return date, h * 3600 + m * 60 + s


def parse_log_record(line: str, schema: LogSchema, line_no: int | None = None) -> ImpressionRecord:
    """Parse one TSV line into an ImpressionRecord.

    Market prices outside [0, 300] are clipped to the platform cap; a click
    value outside {0, 1} is a parse error.
    """
    parts = line.rstrip("\n").split("\t")
    if len(parts) != len(schema.columns):
        raise ParseError(f"expected {len(schema.columns)} columns, got {len(parts)}", line_no)
    row = dict(zip(schema.columns, parts))
    try:
        click = int(row[schema.click_col])
        price = int(row[schema.price_col])
    except ValueError as exc:
        raise ParseError(f"non-integer click/price field: {exc}", line_no) from None
    if click not in (0, 1):
        raise ParseError(f"click must be 0 or 1, got {click}", line_no)
    date, seconds = _parse_timestamp(row[schema.timestamp_col], line_no)
    price = min(max(price, 0), PRICE_CAP)
    tokens = []
    for col in schema.feature_cols:
        value = row[col]
        if col in schema.multi_value_cols:
            for part in value.split(","):
                part = part.strip()
                if part:
                    tokens.append(f"{col}={part}")
        else:
            tokens.append(f"{col}={value}")
    return ImpressionRecord(date=date, seconds=seconds, features=tuple(tokens),
                            market_price=price, click=click)


def serialize_record(record: ImpressionRecord, schema: LogSchema) -> str:
    """Inverse of parse_log_record for the schema's semantic fields."""
    row = {c: "0" for c in schema.columns}
    row[schema.click_col] = str(record.click)
    row[schema.price_col] = str(record.market_price)
    h, rem = divmod(record.seconds, 3600)
    m, s = divmod(rem, 60)
    row[schema.timestamp_col] = f"{record.date}{h:02d}{m:02d}{s:02d}000"
    multi: dict[str, list[str]] = {}
    for token in record.features:
        name, _, value = token.partition("=")
        if name in schema.multi_value_cols:
            multi.setdefault(name, []).append(value)
        elif name in row:
            row[name] = value
    for name, values in multi.items():
        row[name] = ",".join(values)
    return "\t".join(row[c] for c in schema.columns)


def parse_log_lines(lines: Iterable[str], schema: LogSchema,
                    skip_header: bool = False) -> Iterator[ImpressionRecord]:
    for i, line in enumerate(lines, start=1):
        if i == 1 and skip_header:
            continue
        if not line.strip():
            continue
        yield parse_log_record(line, schema, line_no=i)


def load_records(path: str | Path, schema: LogSchema) -> list[ImpressionRecord]:
    """Parse a TSV log file and sort records by (date, time of day)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"log file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        has_header = first.split("\t")[0].strip() == schema.click_col
        records = [] if has_header else [parse_log_record(first, schema, line_no=1)]
        for i, line in enumerate(fh, start=2):
            if line.strip():
                records.append(parse_log_record(line, schema, line_no=i))
    records.sort(key=lambda r: (r.date, r.seconds))
    return records


def write_tsv(records: Iterable[ImpressionRecord], path: str | Path, schema: LogSchema,
              header: bool = True) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        if header:
            fh.write("\t".join(schema.columns) + "\n")
        for record in records:
            fh.write(serialize_record(record, schema) + "\n")


# ---------------------------------------------------------------------------
# Time slots, episodes, budgets


def assign_time_slot(seconds: int, slot_count: int) -> int:
    """Map a second-of-day to its slot index: floor(t / (86400 / slots))."""
    if slot_count not in VALID_SLOT_COUNTS:
        raise DataError(f"slot_count must be one of {VALID_SLOT_COUNTS}, got {slot_count}")
    if not 0 <= seconds < SECONDS_PER_DAY:
        raise DataError(f"timestamp out of range: {seconds}")
    return int(seconds * slot_count // SECONDS_PER_DAY)


def budget_from_cost(total_cost: int, fraction: Fraction) -> int:
    """Episode budget: total daily cost scaled by the fraction, rounded down."""
    frac = Fraction(fraction)
    if not 0 < frac <= 1:
        raise DataError(f"budget fraction must be in (0, 1], got {frac}")
    return total_cost * frac.numerator // frac.denominator


class Vocab:
    """Append-only token <-> integer id map shared by a campaign's episodes."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.tokens: list[str] = list(tokens)
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    def id_for(self, token: str) -> int:
        idx = self._ids.get(token)
        if idx is None:
            idx = len(self.tokens)
            self._ids[token] = idx
            self.tokens.append(token)
        return idx

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class Episode:
    """One ad-delivery day in columnar form.

    Feature tokens are stored CSR-style (`feat_indices`/`feat_offsets`) as
    ids into the campaign vocabulary.
    """

    date: str
    slot_count: int
    budget: int
    total_cost: int
    seconds: np.ndarray      # int32, non-decreasing
    prices: np.ndarray       # int32 in [0, PRICE_CAP]
    clicks: np.ndarray       # int8
    feat_indices: np.ndarray  # int32, flat
    feat_offsets: np.ndarray  # int64, len n+1
    pctrs: np.ndarray | None = None
    _span_cache: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.prices)

    def budget_for(self, fraction: Fraction) -> int:
        return budget_from_cost(self.total_cost, fraction)

    def slot_of(self, slot_count: int | None = None) -> np.ndarray:
        slot_count = slot_count or self.slot_count
        return (self.seconds.astype(np.int64) * slot_count // SECONDS_PER_DAY).astype(np.int32)

    def slot_spans(self, slot_count: int | None = None) -> np.ndarray:
        """Start offsets per slot (length slot_count + 1); records are sorted."""
        slot_count = slot_count or self.slot_count
        spans = self._span_cache.get(slot_count)
        if spans is None:
            slots = self.slot_of(slot_count)
            spans = np.searchsorted(slots, np.arange(slot_count + 1)).astype(np.int64)
            self._span_cache[slot_count] = spans
        return spans

    def record_tokens(self, i: int, vocab: Vocab) -> tuple[str, ...]:
        lo, hi = self.feat_offsets[i], self.feat_offsets[i + 1]
        return tuple(vocab.tokens[j] for j in self.feat_indices[lo:hi])


def build_episodes(records: Sequence[ImpressionRecord], slot_count: int,
                   budget_fraction: Fraction, vocab: Vocab) -> list[Episode]:
    """Group records (sorted by date, time) into one Episode per day.

    Empty days are excluded with a warning. The budget is the day's total
    cost scaled by `budget_fraction`, rounded down.
    """
    if slot_count not in VALID_SLOT_COUNTS:
        raise DataError(f"slot_count must be one of {VALID_SLOT_COUNTS}, got {slot_count}")
    episodes: list[Episode] = []
    by_date: dict[str, list[ImpressionRecord]] = {}
    for rec in records:
        by_date.setdefault(rec.date, []).append(rec)
    for date in sorted(by_date):
        day = by_date[date]
        if not day:
            warnings.warn(f"day {date} has no records; episode excluded")
            continue
        seconds = np.array([r.seconds for r in day], dtype=np.int32)
        if np.any(np.diff(seconds) < 0):
            raise DataError(f"records for {date} are not sorted by timestamp")
        prices = np.array([r.market_price for r in day], dtype=np.int32)
        clicks = np.array([r.click for r in day], dtype=np.int8)
        offsets = np.zeros(len(day) + 1, dtype=np.int64)
        flat: list[int] = []
        for i, rec in enumerate(day):
            flat.extend(vocab.id_for(t) for t in rec.features)
            offsets[i + 1] = len(flat)
        total_cost = int(prices.sum())
        pctrs = None
        if all(r.pctr is not None for r in day):
            pctrs = np.array([r.pctr for r in day], dtype=np.float64)
        episodes.append(Episode(
            date=date, slot_count=slot_count,
            budget=budget_from_cost(total_cost, budget_fraction),
            total_cost=total_cost, seconds=seconds, prices=prices, clicks=clicks,
            feat_indices=np.array(flat, dtype=np.int32), feat_offsets=offsets,
            pctrs=pctrs,
        ))
    return episodes


@dataclass
class CampaignDataset:
    """A campaign's episodes split chronologically into train and test."""

    campaign_id: str
    vocab: Vocab
    train_episodes: list[Episode]
    test_episodes: list[Episode]

    @property
    def episodes(self) -> list[Episode]:
        return self.train_episodes + self.test_episodes

    @property
    def avg_pctr_train(self) -> float:
        total = 0.0
        count = 0
        for ep in self.train_episodes:
            if ep.pctrs is None:
                raise DataError("pctr not filled; run the CTR model first")
            total += float(ep.pctrs.sum())
            count += len(ep)
        if count == 0 or total <= 0:
            raise DataError("training pctr sum must be positive")
        return total / count


def split_campaign(campaign_id: str, episodes: list[Episode], vocab: Vocab,
                   train_days: int = 7, test_days: int = 3) -> CampaignDataset:
    if len(episodes) < train_days + test_days:
        raise DataError(
            f"campaign {campaign_id}: need {train_days + test_days} days, got {len(episodes)}")
    return CampaignDataset(
        campaign_id=campaign_id, vocab=vocab,
        train_episodes=episodes[:train_days],
        test_episodes=episodes[train_days:train_days + test_days],
    )


# ---------------------------------------------------------------------------
# Episode cache persistence


def save_dataset(dataset: CampaignDataset, path: str | Path) -> None:
    meta = {
        "kind": "episode-cache",
        "cache_version": CACHE_VERSION,
        "campaign_id": dataset.campaign_id,
        "train_dates": [ep.date for ep in dataset.train_episodes],
        "test_dates": [ep.date for ep in dataset.test_episodes],
        "slot_count": dataset.episodes[0].slot_count,
        "budgets": [ep.budget for ep in dataset.episodes],
        "total_costs": [ep.total_cost for ep in dataset.episodes],
        "has_pctr": all(ep.pctrs is not None for ep in dataset.episodes),
    }
    arrays: dict[str, np.ndarray] = {
        "vocab": np.array(dataset.vocab.tokens, dtype=np.str_),
    }
    for i, ep in enumerate(dataset.episodes):
        arrays[f"ep{i}_seconds"] = ep.seconds
        arrays[f"ep{i}_prices"] = ep.prices
        arrays[f"ep{i}_clicks"] = ep.clicks
        arrays[f"ep{i}_fidx"] = ep.feat_indices
        arrays[f"ep{i}_foff"] = ep.feat_offsets
        if ep.pctrs is not None:
            arrays[f"ep{i}_pctr"] = ep.pctrs
    save_bundle(path, meta, arrays)


def load_dataset(path: str | Path) -> CampaignDataset:
    meta, arrays = load_bundle(path)
    if meta.get("kind") != "episode-cache":
        raise DataError(f"{path}: not an episode cache")
    vocab = Vocab([str(t) for t in arrays["vocab"]])
    dates = list(meta["train_dates"]) + list(meta["test_dates"])
    episodes = []
    for i, date in enumerate(dates):
        episodes.append(Episode(
            date=date, slot_count=int(meta["slot_count"]),
            budget=int(meta["budgets"][i]), total_cost=int(meta["total_costs"][i]),
            seconds=arrays[f"ep{i}_seconds"], prices=arrays[f"ep{i}_prices"],
            clicks=arrays[f"ep{i}_clicks"], feat_indices=arrays[f"ep{i}_fidx"],
            feat_offsets=arrays[f"ep{i}_foff"],
            pctrs=arrays.get(f"ep{i}_pctr"),
        ))
    n_train = len(meta["train_dates"])
    return CampaignDataset(
        campaign_id=meta["campaign_id"], vocab=vocab,
        train_episodes=episodes[:n_train], test_episodes=episodes[n_train:],
    )


# ---------------------------------------------------------------------------
# Synthetic log generation


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the planted-model synthetic campaign."""

    seed: int = 7
    n_days: int = 10
    imps_per_day: int = 50_000
    n_fields: int = 6
    vocab_per_field: int = 8
    base_ctr: float = 0.0015
    click_signal: float = 1.0       # scales every planted click effect (logit scale)
    hour_click_amplitude: float = 0.8
    price_base: float = 60.0        # median market price level
    price_sigma: float = 0.55       # lognormal shape
    intraday_amplitude: float = 0.35  # log-scale swing of the slot price level
    intraday_jitter: float = 0.5    # day-to-day reshaping of the slot curve
    day_price_trend: float = 0.25   # cumulative log-scale drift from day 0 to last
    day_price_noise: float = 0.04
    start_date: str = "20130606"


def _smooth_day_curve(rng: np.random.Generator, points: int = 96) -> np.ndarray:
    """Zero-mean periodic curve with max |value| = 1 over `points` slots."""
    x = np.linspace(0.0, 2.0 * np.pi, points, endpoint=False)
    curve = np.zeros(points)
    for harmonic in (1, 2, 3):
        curve += rng.normal(0.0, 1.0 / harmonic) * np.sin(harmonic * x + rng.uniform(0, 2 * np.pi))
    curve -= curve.mean()
    peak = np.abs(curve).max()
    return curve / peak if peak > 0 else curve


def _next_date(date: str) -> str:
    import datetime as _dt

    day = _dt.date(int(date[:4]), int(date[4:6]), int(date[6:8]))
    return (day + _dt.timedelta(days=1)).strftime("%Y%m%d")


def gen_synthetic_log(config: SyntheticConfig) -> list[ImpressionRecord]:
    """Generate a deterministic synthetic impression stream.

    Clicks come from a planted logistic model over the categorical tokens
    (including an intraday hour curve); market prices from a bounded
    lognormal whose level shifts across slots and drifts across days.
    `click_signal` scales every planted click effect, so 0 yields a flat
    base-rate stream.
    """
    if config.imps_per_day <= 0 or config.n_days <= 0:
        raise DataError("synthetic config needs positive n_days and imps_per_day")
    if config.click_signal < 0:
        raise DataError("click_signal must be >= 0")
    root = np.random.SeedSequence(config.seed)
    plant_rng = np.random.Generator(np.random.PCG64(root.spawn(1)[0]))

    # Planted structure, fixed for the whole campaign.
    field_probs = []
    token_weights = []
    for _ in range(config.n_fields):
        raw = plant_rng.dirichlet(np.full(config.vocab_per_field, 1.2))
        field_probs.append(raw)
        token_weights.append(plant_rng.normal(0.0, 1.0, size=config.vocab_per_field))
    hour_curve = _smooth_day_curve(plant_rng, points=24) * config.hour_click_amplitude
    price_curve = _smooth_day_curve(plant_rng, points=96)
    weekday_weight = plant_rng.normal(0.0, 0.15, size=7)

    base_logit = float(np.log(config.base_ctr / (1.0 - config.base_ctr)))
    # Shared token strings keep the record stream compact.
    field_tokens = [[f"f{f}=v{v}" for v in range(config.vocab_per_field)]
                    for f in range(config.n_fields)]
    hour_tokens = [f"hour={h}" for h in range(24)]
    weekday_tokens = [f"weekday={w}" for w in range(7)]
    records: list[ImpressionRecord] = []
    date = config.start_date
    for day in range(config.n_days):
        day_rng = np.random.Generator(np.random.PCG64(root.spawn(1)[0]))
        n = config.imps_per_day
        seconds = np.sort(day_rng.integers(0, SECONDS_PER_DAY, size=n)).astype(np.int64)
        hours = (seconds // 3600).astype(np.int64)
        weekday = day % 7

        values = np.empty((config.n_fields, n), dtype=np.int64)
        logit = np.full(n, base_logit)
        signal = np.zeros(n)
        for f in range(config.n_fields):
            values[f] = day_rng.choice(config.vocab_per_field, size=n, p=field_probs[f])
            signal += token_weights[f][values[f]]
        signal += hour_curve[hours] + weekday_weight[weekday]
        logit += config.click_signal * signal
        p_click = 1.0 / (1.0 + np.exp(-logit))
        clicks = (day_rng.random(n) < p_click).astype(np.int8)

        slot96 = seconds * 96 // SECONDS_PER_DAY
        trend = config.day_price_trend * day / max(config.n_days - 1, 1)
        day_offset = trend + day_rng.normal(0.0, config.day_price_noise)
        # The slot-level price profile drifts from day to day.
        day_curve = price_curve + config.intraday_jitter * _smooth_day_curve(day_rng, points=96)
        level = np.log(config.price_base) + config.intraday_amplitude * day_curve[slot96] + day_offset
        prices = np.exp(day_rng.normal(level, config.price_sigma))
        prices = np.clip(np.floor(prices + 0.5), 0, PRICE_CAP).astype(np.int64)

        wd_token = weekday_tokens[weekday]
        for i in range(n):
            tokens = (wd_token, hour_tokens[hours[i]]) + tuple(
                field_tokens[f][values[f, i]] for f in range(config.n_fields))
            records.append(ImpressionRecord(
                date=date, seconds=int(seconds[i]), features=tokens,
                market_price=int(prices[i]), click=int(clicks[i]),
            ))
        date = _next_date(date)
    return records


def synthetic_dataset(config: SyntheticConfig, slot_count: int = 96,
                      budget_fraction: Fraction = Fraction(1, 2),
                      train_days: int = 7, test_days: int = 3) -> CampaignDataset:
    """Generate, episode-build, and split a synthetic campaign."""
    if config.n_days != train_days + test_days:
        config = replace(config, n_days=train_days + test_days)
    records = gen_synthetic_log(config)
    vocab = Vocab()
    episodes = build_episodes(records, slot_count, budget_fraction, vocab)
    return split_campaign(f"synthetic-{config.seed}", episodes, vocab,
                          train_days=train_days, test_days=test_days)


# ---------------------------------------------------------------------------
# Dataset statistics (per-split summary plus per-day / per-slot series)


@dataclass(frozen=True)
class SplitStats:
    imps: int
    clicks: int
    cost: int
    avg_cost_per_day: float
    ctr: float
    avg_pctr: float
    cpm: float
    cpc: float | None   # None marks "undefined" when there are no clicks


def _split_stats(episodes: Sequence[Episode]) -> SplitStats:
    imps = sum(len(ep) for ep in episodes)
    clicks = int(sum(int(ep.clicks.sum()) for ep in episodes))
    cost = int(sum(ep.total_cost for ep in episodes))
    pctr_total = 0.0
    for ep in episodes:
        if ep.pctrs is None:
            raise DataError("pctr not filled; run the CTR model before statistics")
        pctr_total += float(ep.pctrs.sum())
    return SplitStats(
        imps=imps, clicks=clicks, cost=cost,
        avg_cost_per_day=cost / len(episodes) if episodes else 0.0,
        ctr=clicks / imps if imps else 0.0,
        avg_pctr=pctr_total / imps if imps else 0.0,
        cpm=cost / imps * 1000.0 if imps else 0.0,
        cpc=(cost / clicks) if clicks else None,
    )


@dataclass(frozen=True)
class DatasetStatistics:
    campaign_id: str
    train: SplitStats
    test: SplitStats
    per_day_imps: dict[str, int]
    per_day_avg_price: dict[str, float]
    per_slot_avg_price: dict[str, np.ndarray]   # date -> mean market price per slot

    def rows(self) -> list[dict[str, object]]:
        out = []
        for split, stats in (("train", self.train), ("test", self.test)):
            out.append({
                "split": split, "imps": stats.imps, "clicks": stats.clicks,
                "cost": stats.cost, "avg_cost_per_day": stats.avg_cost_per_day,
                "ctr": stats.ctr, "avg_pctr": stats.avg_pctr, "cpm": stats.cpm,
                "cpc": stats.cpc if stats.cpc is not None else "undefined",
            })
        return out


def dataset_statistics(dataset: CampaignDataset, slot_count: int | None = None) -> DatasetStatistics:
    """Summary statistics per split plus the per-day / per-slot series."""
    slot_count = slot_count or dataset.episodes[0].slot_count
    per_day_imps: dict[str, int] = {}
    per_day_price: dict[str, float] = {}
    per_slot: dict[str, np.ndarray] = {}
    for ep in dataset.episodes:
        per_day_imps[ep.date] = len(ep)
        per_day_price[ep.date] = float(ep.prices.mean()) if len(ep) else 0.0
        spans = ep.slot_spans(slot_count)
        means = np.zeros(slot_count)
        for t in range(slot_count):
            lo, hi = spans[t], spans[t + 1]
            if hi > lo:
                means[t] = float(ep.prices[lo:hi].mean())
        per_slot[ep.date] = means
    return DatasetStatistics(
        campaign_id=dataset.campaign_id,
        train=_split_stats(dataset.train_episodes),
        test=_split_stats(dataset.test_episodes),
        per_day_imps=per_day_imps,
        per_day_avg_price=per_day_price,
        per_slot_avg_price=per_slot,
    )
