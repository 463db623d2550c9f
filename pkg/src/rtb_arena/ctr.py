"""Factorization-machine CTR estimator: training, prediction, AUC.

The model scores a set of active binary features as

    score = bias + sum_i w[i] + 0.5 * sum_f [(sum_i v[i,f])^2 - sum_i v[i,f]^2]
    pctr  = sigmoid(score)

using the O(k * |active|) pairwise-interaction identity. Training is
per-record SGD on log-loss with AdaGrad per-parameter scaling; runs are
deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .binio import load_bundle, save_bundle
from .errors import DataError
from .logs import CampaignDataset, Episode

UNSEEN_INDEX = 0          # reserved slot for tokens absent from training
LOSS_CLAMP = 1e-6         # probability clamp inside the log-loss
PRED_CLAMP = 1e-12        # keeps predictions in the open interval (0, 1)


@dataclass(frozen=True)
class TrainConfig:
    k: int = 10
    learning_rate: float = 1e-2
    l2_bias: float = 1e-5
    l2_linear: float = 1e-5
    l2_latent: float = 1e-5
    epochs: int = 5
    seed: int = 0
    neg_downsample: float = 1.0   # keep-probability for negative records
    init_scale: float = 0.01

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if self.k < 1:
            raise DataError("latent dimension k must be >= 1")
        if not 0 < self.neg_downsample <= 1:
            raise DataError("neg_downsample must be in (0, 1]")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


class FmModel:
    """FM weights plus the token -> model-index map (index 0 = unseen)."""

    def __init__(self, bias: float, w: np.ndarray, v: np.ndarray,
                 feature_index_map: dict[str, int]):
        if v.ndim != 2 or v.shape[0] != w.shape[0]:
            raise DataError("linear/latent shapes disagree")
        self.bias = float(bias)
        self.w = np.asarray(w, dtype=np.float64)
        self.v = np.asarray(v, dtype=np.float64)
        self.feature_index_map = feature_index_map

    @property
    def k(self) -> int:
        return self.v.shape[1]

    @property
    def n_features(self) -> int:
        return self.w.shape[0]

    def indices_for(self, tokens: Iterable[str]) -> np.ndarray:
        """Map tokens to model indices; unknown tokens go to the unseen slot."""
        idx = {self.feature_index_map.get(t, UNSEEN_INDEX) for t in tokens}
        return np.fromiter(sorted(idx), dtype=np.int64, count=len(idx))

    def score(self, indices: np.ndarray) -> float:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_features):
            raise DataError("feature index out of range for model")
        s = self.bias + float(self.w[idx].sum())
        vv = self.v[idx]
        sums = vv.sum(axis=0)
        s += 0.5 * float(sums @ sums - (vv * vv).sum())
        return s

    def predict_indices(self, indices: np.ndarray) -> float:
        p = float(_sigmoid(self.score(indices)))
        return float(np.clip(p, PRED_CLAMP, 1.0 - PRED_CLAMP))

    def predict_tokens(self, tokens: Iterable[str]) -> float:
        return self.predict_indices(self.indices_for(tokens))


def fm_predict(model: FmModel, features: Iterable[str] | np.ndarray) -> float:
    """Probability for a set of active features (tokens or model indices)."""
    arr = np.asarray(list(features) if not isinstance(features, np.ndarray) else features)
    if arr.dtype.kind in ("U", "S", "O"):
        return model.predict_tokens([str(t) for t in arr])
    return model.predict_indices(arr.astype(np.int64))


# ---------------------------------------------------------------------------
# Training


def _dedupe_csr(feat_indices: np.ndarray, feat_offsets: np.ndarray,
                n_features: int) -> tuple[np.ndarray, np.ndarray]:
    """Sort and deduplicate indices within each CSR record."""
    n = len(feat_offsets) - 1
    rid = np.repeat(np.arange(n, dtype=np.int64), np.diff(feat_offsets))
    key = np.unique(rid * n_features + feat_indices.astype(np.int64))
    rid = key // n_features
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rid, minlength=n), out=offsets[1:])
    return (key % n_features), offsets


def _loss_and_gradients(model: FmModel, indices: np.ndarray, label: int,
                        config: TrainConfig):
    """Log-loss and analytic gradients at one record.

    The probability is clamped to [1e-6, 1-1e-6] inside the loss; in the
    clamped (saturated) region the returned gradients are those of the
    clamped constant-loss surface, i.e. the label-error term is computed
    from the clamped probability.
    """
    idx = np.asarray(indices, dtype=np.int64)
    s = model.score(idx)
    p = float(np.clip(_sigmoid(s), LOSS_CLAMP, 1.0 - LOSS_CLAMP))
    loss = -(label * np.log(p) + (1 - label) * np.log(1.0 - p))
    g = p - label
    vv = model.v[idx]
    sums = vv.sum(axis=0)
    grad_bias = g + config.l2_bias * model.bias
    grad_w = g + config.l2_linear * model.w[idx]
    grad_v = g * (sums[None, :] - vv) + config.l2_latent * vv
    return float(loss), grad_bias, grad_w, grad_v, p


def fm_train_arrays(feat_indices: np.ndarray, feat_offsets: np.ndarray,
                    labels: np.ndarray, n_features: int, config: TrainConfig,
                    feature_index_map: dict[str, int] | None = None) -> FmModel:
    """Train on CSR-encoded records whose indices are already model indices."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() == labels.max():
        raise DataError("training labels are single-class; cannot fit a CTR model")
    feat_indices, feat_offsets = _dedupe_csr(feat_indices, feat_offsets, n_features)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    model = FmModel(
        bias=0.0,
        w=np.zeros(n_features),
        v=rng.normal(0.0, config.init_scale, size=(n_features, config.k)),
        feature_index_map=feature_index_map or {},
    )
    # The unseen slot stays at its zero init: nothing maps to it in training.
    model.v[UNSEEN_INDEX] = 0.0

    g2_bias = 0.0
    g2_w = np.zeros(n_features)
    g2_v = np.zeros((n_features, config.k))
    eps = 1e-8
    lr = config.learning_rate

    n = len(labels)
    order = np.arange(n)
    for _ in range(config.epochs):
        rng.shuffle(order)
        if config.neg_downsample < 1.0:
            keep = (labels[order] == 1) | (rng.random(n) < config.neg_downsample)
            epoch_order = order[keep]
        else:
            epoch_order = order
        for i in epoch_order:
            idx = feat_indices[feat_offsets[i]:feat_offsets[i + 1]]
            _, gb, gw, gv, _ = _loss_and_gradients(model, idx, int(labels[i]), config)
            g2_bias += gb * gb
            model.bias -= lr * gb / (np.sqrt(g2_bias) + eps)
            g2_w[idx] += gw * gw
            model.w[idx] -= lr * gw / (np.sqrt(g2_w[idx]) + eps)
            g2_v[idx] += gv * gv
            model.v[idx] -= lr * gv / (np.sqrt(g2_v[idx]) + eps)
    if not (np.isfinite(model.bias) and np.isfinite(model.w).all() and np.isfinite(model.v).all()):
        raise DataError("FM training diverged to non-finite weights")
    return model


def fm_train(samples: Sequence[tuple[Sequence[str], int]], config: TrainConfig) -> FmModel:
    """Train from (tokens, label) pairs, building the token map on the fly."""
    token_map: dict[str, int] = {}
    flat: list[int] = []
    offsets = np.zeros(len(samples) + 1, dtype=np.int64)
    labels = np.zeros(len(samples), dtype=np.int64)
    for i, (tokens, label) in enumerate(samples):
        for t in tokens:
            if t not in token_map:
                token_map[t] = len(token_map) + 1   # 0 is reserved
            flat.append(token_map[t])
        offsets[i + 1] = len(flat)
        labels[i] = label
    return fm_train_arrays(
        np.array(flat, dtype=np.int64), offsets, labels,
        n_features=len(token_map) + 1, config=config, feature_index_map=token_map)


def fm_train_dataset(dataset: CampaignDataset, config: TrainConfig) -> FmModel:
    """Train on a campaign's training episodes (dataset vocab -> model ids)."""
    token_map: dict[str, int] = {}
    vocab_to_model = np.zeros(len(dataset.vocab), dtype=np.int64)
    seen = np.zeros(len(dataset.vocab), dtype=bool)
    parts_idx, parts_off, parts_y = [], [], []
    base = 0
    for ep in dataset.train_episodes:
        ids = ep.feat_indices
        for vid in np.unique(ids):
            if not seen[vid]:
                token = dataset.vocab.tokens[vid]
                token_map[token] = len(token_map) + 1
                vocab_to_model[vid] = token_map[token]
                seen[vid] = True
        parts_idx.append(vocab_to_model[ids])
        parts_off.append(ep.feat_offsets[1:] + base)
        parts_y.append(ep.clicks.astype(np.int64))
        base += ep.feat_offsets[-1]
    offsets = np.concatenate([np.zeros(1, dtype=np.int64)] + parts_off)
    return fm_train_arrays(
        np.concatenate(parts_idx), offsets, np.concatenate(parts_y),
        n_features=len(token_map) + 1, config=config, feature_index_map=token_map)


def score_csr(model: FmModel, feat_indices: np.ndarray, feat_offsets: np.ndarray) -> np.ndarray:
    """Vectorized pCTR for CSR records holding model indices.

    Duplicate indices within a record (e.g. several unseen tokens collapsing
    to the reserved slot) are deduplicated, matching predict_indices.
    """
    n = len(feat_offsets) - 1
    rid = np.repeat(np.arange(n, dtype=np.int64), np.diff(feat_offsets))
    key = rid * model.n_features + feat_indices.astype(np.int64)
    key = np.unique(key)
    rid = key // model.n_features
    idx = key % model.n_features
    score = np.full(n, model.bias)
    score += np.bincount(rid, weights=model.w[idx], minlength=n)
    pair = np.zeros(n)
    vv = model.v[idx]
    for f in range(model.k):
        sums = np.bincount(rid, weights=vv[:, f], minlength=n)
        pair += sums * sums
    pair -= np.bincount(rid, weights=(vv * vv).sum(axis=1), minlength=n)
    score += 0.5 * pair
    return np.clip(_sigmoid(score), PRED_CLAMP, 1.0 - PRED_CLAMP)


def score_episode(model: FmModel, episode: Episode, dataset: CampaignDataset) -> np.ndarray:
    """pCTR per record of one episode (vocab ids remapped, unseen -> 0)."""
    remap = np.zeros(len(dataset.vocab), dtype=np.int64)
    for token, midx in model.feature_index_map.items():
        vid = dataset.vocab._ids.get(token)
        if vid is not None:
            remap[vid] = midx
    return score_csr(model, remap[episode.feat_indices], episode.feat_offsets)


def apply_model(model: FmModel, dataset: CampaignDataset) -> None:
    """Fill every episode's pctr column in place."""
    for ep in dataset.episodes:
        ep.pctrs = score_episode(model, ep, dataset)


# ---------------------------------------------------------------------------
# AUC and gradient checking


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(score+ > score-) + 0.5 * P(tie)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape:
        raise DataError("scores and labels must have the same length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative label")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0   # average rank, 1-based
        i = j + 1
    rank_sum_pos = float(ranks[y == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def gradient_check(model: FmModel, tokens: Sequence[str], label: int,
                   epsilon: float = 1e-5, config: TrainConfig | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter touched by the record (bias, active linear and
    latent weights). Near loss-clamp saturation the analytic gradient
    follows the clamped surface, so callers should probe unsaturated points.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise DataError("epsilon must be in [1e-7, 1e-3]")
    config = config or TrainConfig(k=model.k, l2_bias=0.0, l2_linear=0.0, l2_latent=0.0)
    idx = model.indices_for(tokens)
    _, gb, gw, gv, _ = _loss_and_gradients(model, idx, label, config)

    def loss_at() -> float:
        value, *_ = _loss_and_gradients(model, idx, label, config)
        return value

    def l2_at() -> float:
        return 0.5 * (config.l2_bias * model.bias ** 2
                      + config.l2_linear * float(model.w[idx] @ model.w[idx])
                      + config.l2_latent * float((model.v[idx] ** 2).sum()))

    def rel_err(analytic: float, numeric: float) -> float:
        # 1e-6 floor keeps central-difference cancellation noise from
        # masquerading as relative error on near-zero components.
        denom = max(abs(analytic), abs(numeric), 1e-6)
        return abs(analytic - numeric) / denom

    worst = 0.0
    # The analytic gradients include the l2 term, so the numeric objective is
    # loss + l2 penalty.
    model.bias += epsilon
    up = loss_at() + l2_at()
    model.bias -= 2 * epsilon
    down = loss_at() + l2_at()
    model.bias += epsilon
    worst = max(worst, rel_err(gb, (up - down) / (2 * epsilon)))
    for slot, i in enumerate(idx):
        model.w[i] += epsilon
        up = loss_at() + l2_at()
        model.w[i] -= 2 * epsilon
        down = loss_at() + l2_at()
        model.w[i] += epsilon
        worst = max(worst, rel_err(float(gw[slot]), (up - down) / (2 * epsilon)))
        for f in range(model.k):
            model.v[i, f] += epsilon
            up = loss_at() + l2_at()
            model.v[i, f] -= 2 * epsilon
            down = loss_at() + l2_at()
            model.v[i, f] += epsilon
            worst = max(worst, rel_err(float(gv[slot, f]), (up - down) / (2 * epsilon)))
    return worst


# ---------------------------------------------------------------------------
# Persistence

MODEL_VERSION = 1


def save_model(model: FmModel, path: str | Path, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": "fm-model",
        "model_version": MODEL_VERSION,
        "bias": model.bias,
        "tokens": sorted(model.feature_index_map, key=model.feature_index_map.get),
    }
    if extra_meta:
        meta.update(extra_meta)
    save_bundle(path, meta, {"w": model.w, "v": model.v})


def load_model(path: str | Path) -> FmModel:
    meta, arrays = load_bundle(path)
    if meta.get("kind") != "fm-model":
        raise DataError(f"{path}: not an FM model file")
    token_map = {t: i + 1 for i, t in enumerate(meta["tokens"])}
    return FmModel(bias=meta["bias"], w=arrays["w"], v=arrays["v"],
                   feature_index_map=token_map)
