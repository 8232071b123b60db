"""Versioned checkpoint container (numpy ``.npz`` plus JSON metadata)."""
from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .data import AugmentConfig
from .encoder import EncoderConfig
from .errors import FormatError
from .modulation import ModulationConfig
from .stats import StatState
from .trainer import OptimState, TrainConfig, TrainState

FORMAT = "sdgm-checkpoint"
VERSION = 1


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["modulation"] = ModulationConfig(**d["modulation"])
    d["augment"] = AugmentConfig(**d["augment"])
    return TrainConfig(**d)


def save_checkpoint(path, state: TrainState, enc_cfg: EncoderConfig, cfg: TrainConfig | None = None) -> None:
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "encoder": asdict(enc_cfg),
        "train": train_config_to_dict(cfg) if cfg is not None else None,
        "stats": state.stats.to_dict(),
        "iteration": state.iteration,
        "params": list(state.params),
    }
    arrays = {f"param/{k}": np.asarray(v, dtype=np.float64) for k, v in state.params.items()}
    arrays.update({f"momentum/{k}": np.asarray(v, dtype=np.float64) for k, v in state.optim.momentum.items()})
    with open(path, "wb") as fh:
        np.savez(fh, meta=json.dumps(meta), **arrays)


def load_checkpoint(path) -> tuple[TrainState, EncoderConfig, TrainConfig | None]:
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    with z:
        if "meta" not in z.files:
            raise FormatError(f"{path} has no metadata record")
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != FORMAT:
            raise FormatError(f"{path} is not a checkpoint")
        if meta.get("version") != VERSION:
            raise FormatError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k: z[f"param/{k}"].copy() for k in meta["params"]}
        momentum = {k: z[f"momentum/{k}"].copy() for k in meta["params"]}
    enc = dict(meta["encoder"])
    enc["widths"] = tuple(enc["widths"])
    enc_cfg = EncoderConfig(**enc)
    cfg = train_config_from_dict(meta["train"]) if meta.get("train") else None
    state = TrainState(params, OptimState(momentum, int(meta["iteration"])), StatState.from_dict(meta["stats"]))
    return state, enc_cfg, cfg
