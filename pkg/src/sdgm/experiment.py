"""Dataset construction, train-and-evaluate runs and the ablation matrix."""
from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .data import (PatchDataset, VerificationPairs, generate_synthetic, load_dataset, load_ubc,
                   load_verification_pairs, make_verification_pairs)
from .encoder import STREAM_EVAL
from .errors import ConfigError
from .evaluation import evaluate_verification
from .trainer import TrainState, run

ABLATION_SELF_WEIGHTS = ("af", "theta", "s", "l2")


def training_data(cfg: RunConfig) -> PatchDataset:
    if not cfg.dataset:
        return generate_synthetic(cfg.synth())
    if os.path.isdir(cfg.dataset):
        return load_ubc(cfg.dataset, cfg.patch_size)
    if not os.path.exists(cfg.dataset):
        raise ConfigError(f"dataset path {cfg.dataset!r} does not exist")
    return load_dataset(cfg.dataset)[0]


def evaluation_data(cfg: RunConfig, pairs_file: str | None = None) -> tuple[PatchDataset, VerificationPairs]:
    """Held-out patches and verification pairs: a pairs file over the
    configured dataset, or a synthetic test set with freshly drawn pairs."""
    pairs_file = pairs_file or cfg.pairs_file
    if pairs_file:
        if not os.path.exists(pairs_file):
            raise ConfigError(f"pairs file {pairs_file!r} does not exist")
        return training_data(cfg), load_verification_pairs(pairs_file)
    test = generate_synthetic(cfg.synth(test=True))
    rng = np.random.default_rng([cfg.seed, STREAM_EVAL])
    return test, make_verification_pairs(test, cfg.eval_pairs, rng)


@dataclass
class RunOutcome:
    state: TrainState
    rows: list
    fpr_initial: float
    fpr_final: float


def train_and_evaluate(cfg: RunConfig, train_set: PatchDataset | None = None, eval_set=None,
                       callback=None) -> RunOutcome:
    train_set = training_data(cfg) if train_set is None else train_set
    test, pairs = evaluation_data(cfg) if eval_set is None else eval_set
    enc, tcfg = cfg.encoder(), cfg.train()
    state = TrainState.fresh(enc, tcfg)
    fpr0 = evaluate_verification(state.params, enc, test, pairs)
    state, rows = run(tcfg, train_set, enc, state=state, log_interval=cfg.log_interval, callback=callback)
    return RunOutcome(state, rows, fpr0, evaluate_verification(state.params, enc, test, pairs))


def parse_cells(text: str | None) -> list[tuple[str, bool]]:
    """``"af+pa,theta-pa"`` -> [("af", True), ("theta", False)]; None gives
    the full 4x2 matrix."""
    if not text:
        return [(sw, pa) for sw in ABLATION_SELF_WEIGHTS for pa in (True, False)]
    cells = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if tok.endswith("+pa"):
            sw, pa = tok[:-3], True
        elif tok.endswith("-pa"):
            sw, pa = tok[:-3], False
        else:
            raise ConfigError(f"ablation cell {tok!r} must end in +pa or -pa")
        if sw not in ABLATION_SELF_WEIGHTS:
            raise ConfigError(f"unknown self weight {sw!r} in cell {tok!r}")
        cells.append((sw, pa))
    return cells


def ablate(cfg: RunConfig, cells) -> list[dict]:
    """Train every (self weight, power adjustment) cell on the same data and
    seed; returns one result row per cell."""
    train_set = training_data(cfg)
    eval_set = evaluation_data(cfg)
    rows = []
    for sw, pa in cells:
        cell_cfg = replace(cfg, self_weight=sw, power_adjust=pa)
        out = train_and_evaluate(cell_cfg, train_set, eval_set)
        rows.append({"cell": f"{sw}{'+' if pa else '-'}pa", "self_weight": sw, "power_adjust": int(pa),
                     "seed": cfg.seed, "fpr95_initial": out.fpr_initial, "fpr95": out.fpr_final})
    return rows
