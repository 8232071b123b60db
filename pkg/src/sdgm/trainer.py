"""Training loop: mining, running statistics, weighting, pseudo loss and SGD."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .autodiff import Tensor, backward, recording
from .data import NO_AUGMENT, AugmentConfig, PatchDataset, sample_batch
from .encoder import STREAM_DATA, EncoderConfig, encode, init_params
from .errors import ConfigError, InsufficientData, OutOfRange, ShapeMismatch
from .mining import TripletBatch, mine_triplets
from .modulation import ModulationConfig, WeightBatch, compute_weights, loss_coefficients, pseudo_loss
from .stats import POWER_INIT, STAT_FIELDS, StatState, update_angle_stats, update_power_stats

log = logging.getLogger(__name__)

LOG_FIELDS = ("iteration", "lr", "loss", "n_valid", "warming", "skipped") + STAT_FIELDS


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    total_iterations: int = 2000
    lr_init: float = 1.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_fraction: float = 0.1
    power_init: float = POWER_INIT
    modulation: ModulationConfig = field(default_factory=ModulationConfig)
    augment: AugmentConfig = NO_AUGMENT
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.total_iterations < 1:
            raise ConfigError("total_iterations must be positive")
        if self.lr_init <= 0:
            raise ConfigError("lr_init must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1]")
        if self.power_init <= 0:
            raise ConfigError("power_init must be positive")


@dataclass
class OptimState:
    momentum: dict
    iteration: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimState":
        return cls({k: np.zeros_like(v) for k, v in params.items()})


@dataclass
class TrainState:
    params: dict
    optim: OptimState
    stats: StatState

    @property
    def iteration(self) -> int:
        return self.optim.iteration

    @classmethod
    def fresh(cls, enc_cfg: EncoderConfig, cfg: TrainConfig) -> "TrainState":
        params = init_params(enc_cfg)
        return cls(params, OptimState.zeros_like(params), StatState.fresh(cfg.power_init))


@dataclass
class StepResult:
    iteration: int
    lr: float
    loss: float
    n_valid: int
    warming: bool
    skipped: bool
    batch: TripletBatch | None = None
    weights: WeightBatch | None = None
    stats: StatState | None = None

    def log_row(self) -> dict:
        row = {"iteration": self.iteration, "lr": self.lr, "loss": self.loss, "n_valid": self.n_valid,
               "warming": int(self.warming), "skipped": int(self.skipped)}
        row.update(self.stats.as_row())
        return row


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Initial rate halved after every completed tenth of the run."""
    if not 0 <= iteration < cfg.total_iterations:
        raise OutOfRange(f"iteration {iteration} outside [0, {cfg.total_iterations})")
    return cfg.lr_init / 2 ** ((10 * iteration) // cfg.total_iterations)


def is_warming(iteration: int, cfg: TrainConfig) -> bool:
    return iteration < cfg.warmup_fraction * cfg.total_iterations


def sgd_step(params: dict, grads: dict, state: OptimState, lr: float, momentum: float,
             weight_decay: float) -> tuple[dict, OptimState]:
    """Momentum SGD with L2 weight decay added to the gradient."""
    new_params, new_mom = {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        v = momentum * state.momentum[k] + g + weight_decay * p
        new_mom[k] = v
        new_params[k] = p - lr * v
    return new_params, OptimState(new_mom, state.iteration + 1)


def triplet_angles(desc: Tensor, batch: TripletBatch) -> tuple[Tensor, Tensor]:
    """Differentiable positive and negative angles of the valid triplets.

    ``desc`` stacks raw anchor descriptors over raw positive descriptors.
    """
    units = desc / (desc * desc).sum(axis=1, keepdims=True).sqrt()
    a, p, left, right = batch.pair_indices()
    lo, hi = -1.0 + geometry.COS_CLAMP, 1.0 - geometry.COS_CLAMP

    def angles(i, j):
        cos = (units.take_rows(i) * units.take_rows(j)).sum(axis=1)
        return cos.clip(lo, hi).arccos()

    return angles(a, p), angles(left, right)


def pseudo_loss_tensor(desc: Tensor, batch: TripletBatch, c_pos, c_neg) -> Tensor:
    """Pseudo loss as a function of raw descriptors; the coefficients are
    constants, so its gradient is the weighted sum of angle gradients."""
    theta_pos, theta_neg = triplet_angles(desc, batch)
    idx = np.flatnonzero(batch.valid_mask)
    return (theta_pos * c_pos[idx]).sum() - (theta_neg * c_neg[idx]).sum()


def mine_from_descriptors(raw: np.ndarray, tau: float) -> TripletBatch:
    n = raw.shape[0] // 2
    units, _ = geometry.normalize_rows(raw)
    return mine_triplets(geometry.angle_matrix(units[:n], units[n:]), tau)


def batch_for_iteration(dataset: PatchDataset, cfg: TrainConfig, iteration: int):
    rng = np.random.default_rng([cfg.seed, STREAM_DATA, iteration])
    return sample_batch(dataset, cfg.batch_size, rng, cfg.augment)


def train_step(state: TrainState, anchors, positives, enc_cfg: EncoderConfig,
               cfg: TrainConfig) -> tuple[StepResult, TrainState]:
    """One iteration: encode, mine, update statistics, weight, build the
    pseudo loss, backpropagate and take an SGD step."""
    it = state.iteration
    lr = lr_at(it, cfg)
    warming = is_warming(it, cfg)
    n = len(anchors)
    x = np.concatenate([np.reshape(anchors, (n, -1)), np.reshape(positives, (n, -1))])
    leaves = {k: Tensor(v, requires_grad=True) for k, v in state.params.items()}
    with recording() as tape:
        desc = encode(x, leaves, enc_cfg, training=True, iteration=it)
        batch = mine_from_descriptors(desc.data, cfg.modulation.tau)
        try:
            stats = update_angle_stats(state.stats, batch)
        except InsufficientData:
            log.warning("iteration %d: only %d valid triplets, step skipped", it, batch.n_valid)
            skipped = StepResult(it, lr, math.nan, batch.n_valid, warming, True, batch, None, state.stats)
            return skipped, TrainState(state.params, OptimState(state.optim.momentum, it + 1), state.stats)
        mod = cfg.modulation
        weights = compute_weights(batch, stats, mod, warming)
        stats = update_power_stats(stats, weights.p_pos, weights.p_neg)
        c_pos, c_neg = loss_coefficients(weights, stats, mod.alpha, mod.power_adjust)
        loss = pseudo_loss_tensor(desc, batch, c_pos, c_neg)
    grads = backward(loss, tape, wrt=leaves)
    params, optim = sgd_step(state.params, grads, state.optim, lr, cfg.momentum, cfg.weight_decay)
    value = pseudo_loss(batch, weights, stats, mod.alpha, mod.power_adjust)
    result = StepResult(it, lr, value, batch.n_valid, warming, False, batch, weights, stats)
    return result, TrainState(params, optim, stats)


def run(cfg: TrainConfig, dataset: PatchDataset, enc_cfg: EncoderConfig,
        state: TrainState | None = None, until: int | None = None, log_interval: int = 1,
        callback=None) -> tuple[TrainState, list[dict]]:
    """Iterate :func:`train_step` from ``state`` (fresh by default) up to
    ``until`` (default: the end of the run).

    Returns the final state and the metric rows logged every
    ``log_interval`` iterations. ``callback(result, state)`` runs after each
    step.
    """
    if len(dataset.trainable_classes()) < cfg.batch_size:
        raise ConfigError(f"dataset has {len(dataset.trainable_classes())} classes with >= 2 patches, "
                          f"batch_size is {cfg.batch_size}")
    if dataset.patch_size ** 2 != enc_cfg.input_dim:
        raise ConfigError(f"patch size {dataset.patch_size} does not match encoder input_dim {enc_cfg.input_dim}")
    state = TrainState.fresh(enc_cfg, cfg) if state is None else state
    stop = cfg.total_iterations if until is None else min(until, cfg.total_iterations)
    rows = []
    while state.iteration < stop:
        anchors, positives, _ = batch_for_iteration(dataset, cfg, state.iteration)
        result, state = train_step(state, anchors, positives, enc_cfg, cfg)
        if result.iteration % log_interval == 0 or state.iteration == stop:
            rows.append(result.log_row())
        if callback is not None:
            callback(result, state)
    return state, rows


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def with_modulation(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, modulation=replace(cfg.modulation, **changes))
