"""Running estimates of the batch statistics that drive the modulation."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import InsufficientData

EMA_KEEP = 0.999
EMA_RATE = 0.001
POWER_INIT = 10000.0

STAT_FIELDS = (
    "e_theta_pos",
    "std_theta_pos",
    "e_theta_neg",
    "std_theta_neg",
    "e_theta_rel",
    "std_theta_rel",
    "e_power_pos",
    "e_power_neg",
)


@dataclass(frozen=True)
class StatState:
    e_theta_pos: float = 0.0
    std_theta_pos: float = 0.0
    e_theta_neg: float = 0.0
    std_theta_neg: float = 0.0
    e_theta_rel: float = 0.0
    std_theta_rel: float = 0.0
    e_power_pos: float = POWER_INIT
    e_power_neg: float = POWER_INIT
    initialized: bool = False

    @classmethod
    def fresh(cls, power_init: float = POWER_INIT) -> "StatState":
        return cls(e_power_pos=power_init, e_power_neg=power_init)

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in STAT_FIELDS}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StatState":
        names = {f.name for f in fields(cls)}
        return cls(**{k: (bool(v) if k == "initialized" else float(v)) for k, v in d.items() if k in names})


def batch_moments(values, mask=None) -> tuple[float, float]:
    """Mean and population standard deviation over the unmasked entries."""
    v = np.asarray(values, dtype=np.float64)
    if mask is not None:
        v = v[np.asarray(mask, dtype=bool)]
    if v.size < 2:
        raise InsufficientData(f"need at least 2 valid values, got {v.size}")
    mean = float(v.mean())
    return mean, float(np.sqrt(np.mean((v - mean) ** 2)))


def ema_update(beta_prev: float, mu_t: float) -> float:
    return EMA_KEEP * beta_prev + EMA_RATE * mu_t


def update_angle_stats(state: StatState, batch) -> StatState:
    """Fold the batch moments of the positive, negative and relative angles
    into ``state``. The first call seeds the estimates with the moments."""
    mask = batch.valid_mask
    moments = {
        "theta_pos": batch_moments(batch.theta_pos, mask),
        "theta_neg": batch_moments(batch.theta_neg, mask),
        "theta_rel": batch_moments(batch.theta_rel, mask),
    }
    new = {}
    for name, (mean, std) in moments.items():
        if state.initialized:
            new[f"e_{name}"] = ema_update(getattr(state, f"e_{name}"), mean)
            new[f"std_{name}"] = ema_update(getattr(state, f"std_{name}"), std)
        else:
            new[f"e_{name}"] = mean
            new[f"std_{name}"] = std
    return replace(state, initialized=True, **new)


def update_power_stats(state: StatState, p_pos: float, p_neg: float) -> StatState:
    if p_pos < 0 or p_neg < 0:
        raise ValueError("powers must be non-negative")
    return replace(
        state,
        e_power_pos=ema_update(state.e_power_pos, p_pos),
        e_power_neg=ema_update(state.e_power_neg, p_neg),
    )


def write_stats_csv(path, rows) -> None:
    """One row per logged iteration; ``rows`` are mappings holding
    ``iteration`` and every statistic field."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("iteration",) + STAT_FIELDS)
        for row in rows:
            w.writerow([row["iteration"]] + [repr(float(row[k])) for k in STAT_FIELDS])
