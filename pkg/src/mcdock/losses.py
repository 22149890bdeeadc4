"""Training losses on per-algorithm score vectors, with analytic gradients.

Every loss takes raw decoder outputs ``pred`` and composite-score labels in
[0, 1]. Single-vector functions return a :class:`LossValue`; the ``*_batch``
variants take ``(B, m)`` arrays and return per-row values and gradients,
which is what the training loop consumes.

Ranking terms are summed over the pairs of one instance; the dataset-level
mean is taken by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError

LN2 = math.log(2.0)


@dataclass(frozen=True)
class LossConfig:
    sigma: float = 1.0
    weight_bce: float = 1.0
    weight_pl: float = 0.0
    weight_ndcg: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        weights = (self.weight_bce, self.weight_pl, self.weight_ndcg)
        if any(not math.isfinite(w) or w < 0 for w in weights):
            raise ConfigError(f"loss weights must be finite and >= 0, got {weights}")
        if not any(w > 0 for w in weights):
            raise ConfigError("at least one loss weight must be positive")

    @classmethod
    def preset(cls, name: str, sigma: float = 1.0) -> "LossConfig":
        """Named combinations: ``bce``, ``ndcg`` (+NDCG), ``pl`` (+PL), ``both``."""
        table = {"bce": (1, 0, 0), "ndcg": (1, 0, 1), "pl": (1, 1, 0), "both": (1, 1, 1)}
        try:
            b, p, n = table[name.lower().lstrip("+")]
        except KeyError:
            raise ConfigError(f"unknown loss preset {name!r}; expected one of {sorted(table)}") from None
        return cls(sigma=sigma, weight_bce=b, weight_pl=p, weight_ndcg=n)

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "weight_bce": self.weight_bce,
                "weight_pl": self.weight_pl, "weight_ndcg": self.weight_ndcg}

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**d)


@dataclass
class LossValue:
    value: float
    grad: np.ndarray


def _softplus(x):
    # log(1 + e^x) without overflow
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _as_pair(pred, labels, min_len=1):
    pred = np.asarray(pred, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if pred.shape != labels.shape:
        raise ShapeError(f"pred shape {pred.shape} != labels shape {labels.shape}")
    if pred.ndim not in (1, 2):
        raise ShapeError(f"expected a vector or (B, m) matrix, got shape {pred.shape}")
    if pred.shape[-1] < min_len:
        raise ShapeError(f"need at least {min_len} items per list, got {pred.shape[-1]}")
    return pred, labels


def bt_probability(s_i, s_j, sigma: float = 1.0):
    """Bradley-Terry probability that item i outranks item j."""
    return _sigmoid(sigma * (np.asarray(s_i, dtype=float) - np.asarray(s_j, dtype=float)))[()]


def bce_loss_batch(pred, labels):
    pred, labels = _as_pair(np.atleast_2d(pred), np.atleast_2d(labels))
    if np.any(labels < 0) or np.any(labels > 1) or np.any(np.isnan(labels)):
        raise ValidationError("BCE labels must lie in [0, 1]")
    # -[y log p + (1-y) log(1-p)] with p = sigmoid(s) equals softplus(s) - y s
    values = (_softplus(pred) - labels * pred).sum(axis=1)
    return values, _sigmoid(pred) - labels


def bce_loss(pred, labels) -> LossValue:
    pred, labels = _as_pair(pred, labels)
    v, g = bce_loss_batch(pred[None], labels[None])
    return LossValue(float(v[0]), g[0])


def _pair_margins(pred, labels, sigma):
    # diff[b, i, j] = s_i - s_j; active where y_i > y_j
    diff = pred[:, :, None] - pred[:, None, :]
    active = labels[:, :, None] > labels[:, None, :]
    return sigma * diff, active


def _weighted_pair_loss(pred, labels, weights, sigma):
    """Sum over active pairs of weights[b,i,j] * softplus(-sigma (s_i - s_j))."""
    z, active = _pair_margins(pred, labels, sigma)
    w = np.where(active, weights, 0.0)
    values = (w * _softplus(-z)).sum(axis=(1, 2))
    # d/ds_i softplus(-sigma(s_i - s_j)) = -sigma * sigmoid(-z)
    lam = w * sigma * _sigmoid(-z)
    grad = -lam.sum(axis=2) + lam.sum(axis=1)
    return values, grad


def pl_loss_batch(pred, labels, cfg: LossConfig):
    pred, labels = _as_pair(np.atleast_2d(pred), np.atleast_2d(labels), min_len=2)
    ones = np.ones(pred.shape + (pred.shape[1],))
    return _weighted_pair_loss(pred, labels, ones, cfg.sigma)


def pl_loss(pred, labels, cfg: LossConfig = LossConfig()) -> LossValue:
    pred, labels = _as_pair(pred, labels, min_len=2)
    v, g = pl_loss_batch(pred[None], labels[None], cfg)
    return LossValue(float(v[0]), g[0])


def discounts(n: int) -> np.ndarray:
    """Position discounts log2(1 + r) for ranks r = 1..n."""
    return np.log2(1.0 + np.arange(1, n + 1, dtype=float))


def gains(labels) -> np.ndarray:
    return np.exp2(np.asarray(labels, dtype=float)) - 1.0


def dcg(ranked_labels) -> float:
    """DCG of labels listed in ranked order (first element at rank 1)."""
    y = np.asarray(ranked_labels, dtype=float)
    return float(np.sum(gains(y) / discounts(len(y))))


def max_dcg(labels) -> float:
    y = np.sort(np.asarray(labels, dtype=float))[::-1]
    return dcg(y)


def ranks_by_score(pred) -> np.ndarray:
    """1-based rank of each item when sorting ``pred`` descending.

    Ties go to the lower index. Works row-wise on ``(B, m)`` input.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    order = np.argsort(-pred, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(pred.shape[0])[:, None]
    ranks[rows, order] = np.arange(1, pred.shape[1] + 1)[None, :]
    return ranks


def ndcg_lambda_weights(pred, labels) -> np.ndarray:
    """Pair weights |G_i - G_j| * |1/D(rank_i) - 1/D(rank_j)| under the hard ranking of ``pred``.

    Gains are normalised by the ideal DCG of the row; rows whose labels are
    all zero get all-zero weights. Returns shape ``(B, m, m)``.
    """
    pred, labels = _as_pair(np.atleast_2d(pred), np.atleast_2d(labels), min_len=2)
    m = pred.shape[1]
    ideal = np.sort(labels, axis=1)[:, ::-1]
    norm = (gains(ideal) / discounts(m)[None, :]).sum(axis=1)
    safe = np.where(norm > 0, norm, 1.0)
    g = np.where(norm[:, None] > 0, gains(labels) / safe[:, None], 0.0)
    inv_d = 1.0 / discounts(m)[ranks_by_score(pred) - 1]
    return np.abs(g[:, :, None] - g[:, None, :]) * np.abs(inv_d[:, :, None] - inv_d[:, None, :])


def ndcg_loss2_weighted(pred, labels, weights, sigma: float):
    """NDCG-Loss2 with externally fixed pair weights (the lambda-weight convention).

    The gradient treats ``weights`` as constants, so it is the exact gradient
    of this function for fixed weights.
    """
    pred, labels = _as_pair(np.atleast_2d(pred), np.atleast_2d(labels), min_len=2)
    values, grad = _weighted_pair_loss(pred, labels, np.asarray(weights, dtype=float), sigma)
    # -log2 P = softplus(-z) / ln 2
    return values / LN2, grad / LN2


def ndcg_loss2_batch(pred, labels, cfg: LossConfig):
    w = ndcg_lambda_weights(pred, labels)
    return ndcg_loss2_weighted(pred, labels, w, cfg.sigma)


def ndcg_loss2(pred, labels, cfg: LossConfig = LossConfig()) -> LossValue:
    pred, labels = _as_pair(pred, labels, min_len=2)
    v, g = ndcg_loss2_batch(pred[None], labels[None], cfg)
    return LossValue(float(v[0]), g[0])


def composite_loss_batch(pred, labels, cfg: LossConfig):
    """Weighted sum of the enabled terms; returns per-row values and (B, m) gradients."""
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    if pred.shape != labels.shape:
        raise ShapeError(f"pred shape {pred.shape} != labels shape {labels.shape}")
    values = np.zeros(pred.shape[0])
    grad = np.zeros_like(pred)
    if cfg.weight_bce > 0:
        v, g = bce_loss_batch(pred, labels)
        values += cfg.weight_bce * v
        grad += cfg.weight_bce * g
    if cfg.weight_pl > 0:
        v, g = pl_loss_batch(pred, labels, cfg)
        values += cfg.weight_pl * v
        grad += cfg.weight_pl * g
    if cfg.weight_ndcg > 0:
        v, g = ndcg_loss2_batch(pred, labels, cfg)
        values += cfg.weight_ndcg * v
        grad += cfg.weight_ndcg * g
    return values, grad


def composite_loss(pred, labels, cfg: LossConfig) -> LossValue:
    pred, labels = _as_pair(pred, labels)
    v, g = composite_loss_batch(pred[None], labels[None], cfg)
    return LossValue(float(v[0]), g[0])
