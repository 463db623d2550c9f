import numpy as np
import pytest
from fractions import Fraction

from rtb_arena.ctr import TrainConfig, apply_model, fm_train_dataset
from rtb_arena.logs import (Episode, SyntheticConfig, Vocab, build_episodes,
                            synthetic_dataset)


def make_episode(prices, clicks, pctrs=None, seconds=None, date="20130606",
                 slot_count=24, budget=None):
    """Hand-built columnar episode for auction/strategy tests."""
    n = len(prices)
    prices = np.asarray(prices, dtype=np.int32)
    clicks = np.asarray(clicks, dtype=np.int8)
    if seconds is None:
        seconds = np.linspace(0, 86399, n).astype(np.int32)
    else:
        seconds = np.asarray(seconds, dtype=np.int32)
    total = int(prices.sum())
    return Episode(
        date=date, slot_count=slot_count,
        budget=int(budget) if budget is not None else total,
        total_cost=total, seconds=seconds, prices=prices, clicks=clicks,
        feat_indices=np.zeros(n, dtype=np.int32),
        feat_offsets=np.arange(n + 1, dtype=np.int64),
        pctrs=None if pctrs is None else np.asarray(pctrs, dtype=np.float64),
    )


@pytest.fixture(scope="session")
def small_dataset():
    """Tiny scored campaign shared by strategy and bench tests."""
    ds = synthetic_dataset(SyntheticConfig(seed=11, imps_per_day=1500), slot_count=96)
    model = fm_train_dataset(ds, TrainConfig(epochs=2, seed=1))
    apply_model(model, ds)
    return ds


@pytest.fixture(scope="session")
def mid_dataset():
    """Mid-size scored campaign for RL smoke tests."""
    ds = synthetic_dataset(SyntheticConfig(seed=5, imps_per_day=4000), slot_count=96)
    model = fm_train_dataset(ds, TrainConfig(epochs=2, seed=1))
    apply_model(model, ds)
    return ds
