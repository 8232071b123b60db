"""Pair weighting: auto-focus self weights, the probabilistic-margin coupled
weight, batch powers and the pseudo loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import DomainError, UninitializedStats

SELF_WEIGHT_MODES = ("af", "theta", "s", "l2")
BLUR_FLOOR = np.pi / 6


@dataclass(frozen=True)
class ModulationConfig:
    m: float = 0.6
    alpha: float = 0.9
    tau: float = 0.6
    self_weight: str = "af"
    power_adjust: bool = True

    def __post_init__(self):
        if not 0.0 <= self.m < 1.0:
            raise ValueError(f"m must lie in [0, 1), got {self.m}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.self_weight not in SELF_WEIGHT_MODES:
            raise ValueError(f"self_weight must be one of {SELF_WEIGHT_MODES}, got {self.self_weight!r}")


@dataclass
class WeightBatch:
    w_self_pos: np.ndarray
    w_self_neg: np.ndarray
    w_coupled: np.ndarray
    w_pos: np.ndarray
    w_neg: np.ndarray
    p_pos: float
    p_neg: float


def std_normal_cdf(z):
    return 0.5 * erfc(-np.asarray(z, dtype=np.float64) / math.sqrt(2.0))


def std_normal_icdf(p: float, tol: float = 1e-12) -> float:
    """Inverse standard normal CDF by safeguarded Newton iteration."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    if p > 0.5:
        return -std_normal_icdf(1.0 - p, tol)
    if p == 0.5:
        return 0.0
    lo, hi = -40.0, 0.0
    z = -math.sqrt(-2.0 * math.log(p))
    for _ in range(200):
        f = float(std_normal_cdf(z)) - p
        if f > 0:
            hi = z
        else:
            lo = z
        pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        step = f / pdf if pdf > 0 else math.inf
        z_new = z - step
        if not lo < z_new < hi:
            z_new = 0.5 * (lo + hi)
        if abs(z_new - z) <= tol * max(1.0, abs(z)):
            return z_new
        z = z_new
    return z


def _gaussian_focus(theta, e, std):
    radius = BLUR_FLOOR + std
    return np.exp(-((theta - e) ** 2) / (2.0 * radius * radius))


def self_weight_pos(theta, e: float, std: float):
    """Auto-focus weight of a matching pair, peaked at the running mean."""
    if std < 0:
        raise ValueError("std must be non-negative")
    return _gaussian_focus(theta, e, std)


def self_weight_neg(theta, e: float, std: float):
    if std < 0:
        raise ValueError("std must be non-negative")
    return _gaussian_focus(theta, e, std)


def coupled_weight(theta_rel, e: float, std: float, m: float):
    """Normal-CDF weight of a triplet's relative angle; the easiest fraction
    ``m`` of triplets (under the normal approximation) gets exactly zero."""
    if std <= 0:
        raise ValueError("std must be positive")
    z = (np.asarray(theta_rel, dtype=np.float64) - e) / std
    cut = std_normal_icdf(m) if m > 0 else -np.inf
    return np.where(z > cut, std_normal_cdf(z), 0.0)


def _metric_self_weight(mode: str, theta):
    # gradient magnitudes of the angle, cosine and chord metrics per unit |x|
    if mode == "theta":
        return np.ones_like(theta)
    if mode == "s":
        return np.sin(theta)
    if mode == "l2":
        return np.cos(theta / 2.0)
    raise ValueError(mode)


def compute_weights(batch, stats, cfg: ModulationConfig, warming: bool = False) -> WeightBatch:
    if not stats.initialized:
        raise UninitializedStats("angle statistics have not been seeded yet")
    mask = batch.valid_mask
    n = len(batch)
    if warming:
        ws_pos = np.where(mask, 1.0, 0.0)
        ws_neg = ws_pos.copy()
        wc = ws_pos.copy()
    else:
        tp = np.where(mask, batch.theta_pos, 0.0)
        tn = np.where(mask, batch.theta_neg, 0.0)
        tr = np.where(mask, batch.theta_rel, 0.0)
        if cfg.self_weight == "af":
            ws_pos = self_weight_pos(tp, stats.e_theta_pos, stats.std_theta_pos)
            ws_neg = self_weight_neg(tn, stats.e_theta_neg, stats.std_theta_neg)
        else:
            ws_pos = _metric_self_weight(cfg.self_weight, tp)
            ws_neg = _metric_self_weight(cfg.self_weight, tn)
        wc = coupled_weight(tr, stats.e_theta_rel, stats.std_theta_rel, cfg.m)
        ws_pos = np.where(mask, ws_pos, 0.0)
        ws_neg = np.where(mask, ws_neg, 0.0)
        wc = np.where(mask, wc, 0.0)
    w_pos = ws_pos * wc
    w_neg = ws_neg * wc
    assert w_pos.shape == (n,)
    return WeightBatch(
        w_self_pos=ws_pos,
        w_self_neg=ws_neg,
        w_coupled=wc,
        w_pos=w_pos,
        w_neg=w_neg,
        p_pos=float(np.sum(w_pos)),
        p_neg=float(np.sum(w_neg)),
    )


def loss_coefficients(weights: WeightBatch, stats, alpha: float, power_adjust: bool = True):
    """Per-triplet constants (c_pos, c_neg) so that the pseudo loss reads
    sum(c_pos * theta_pos) - sum(c_neg * theta_neg).

    Without power adjustment the weights are only averaged over the batch.
    """
    if power_adjust:
        if stats.e_power_pos <= 0 or stats.e_power_neg <= 0:
            raise ValueError("power expectations must be positive")
        return alpha / stats.e_power_pos * weights.w_pos, weights.w_neg / stats.e_power_neg
    n = len(weights.w_pos)
    return weights.w_pos / n, weights.w_neg / n


def pseudo_loss(batch, weights: WeightBatch, stats, alpha: float, power_adjust: bool = True) -> float:
    c_pos, c_neg = loss_coefficients(weights, stats, alpha, power_adjust)
    mask = batch.valid_mask
    tp = np.where(mask, batch.theta_pos, 0.0)
    tn = np.where(mask, batch.theta_neg, 0.0)
    return float(np.sum(c_pos * tp) - np.sum(c_neg * tn))
