"""Patch verification (FPR at a recall level), nearest-neighbour matching and
statistics tables."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import geometry
from .data import PatchDataset, VerificationPairs
from .encoder import EncoderConfig, encode
from .errors import DegenerateLabels, FormatError, ShapeMismatch
from .stats import STAT_FIELDS


@dataclass
class ScoredPairs:
    distances: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.distances.shape != self.labels.shape:
            raise ShapeMismatch("distances and labels differ in length")
        if self.labels.all() or not self.labels.any():
            raise DegenerateLabels("need at least one matching and one non-matching pair")


def fpr_at_recall(scored: ScoredPairs, recall: float = 0.95) -> float:
    """False positive rate at the smallest distance threshold that recalls at
    least ``recall`` of the matching pairs (ties on the threshold count as
    predicted matches)."""
    if not 0.0 < recall <= 1.0:
        raise ValueError(f"recall must lie in (0, 1], got {recall}")
    pos = np.sort(scored.distances[scored.labels])
    neg = scored.distances[~scored.labels]
    counts = np.arange(1, pos.size + 1)
    k = int(np.argmax(counts >= recall * pos.size))
    threshold = pos[k]
    return float(np.count_nonzero(neg <= threshold)) / neg.size


def embed(params: dict, enc_cfg: EncoderConfig, patches, chunk: int = 1024) -> np.ndarray:
    """Unit descriptors of ``patches`` in inference mode."""
    flat = np.reshape(np.asarray(patches, dtype=np.float64), (len(patches), -1))
    if flat.shape[1] != enc_cfg.input_dim:
        raise ShapeMismatch(f"patches have {flat.shape[1]} values, encoder expects {enc_cfg.input_dim}")
    out = [encode(flat[i:i + chunk], params, enc_cfg).data for i in range(0, len(flat), chunk)]
    units, _ = geometry.normalize_rows(np.concatenate(out))
    return units


def pair_angles(units: np.ndarray, pairs: VerificationPairs) -> np.ndarray:
    cos = np.einsum("id,id->i", units[pairs.left], units[pairs.right])
    return np.arccos(geometry.clamp_cos(cos))


def evaluate_verification(params: dict, enc_cfg: EncoderConfig, dataset: PatchDataset,
                          pairs: VerificationPairs, recall: float = 0.95) -> float:
    pairs.validate(len(dataset))
    units = embed(params, enc_cfg, dataset.patches)
    return fpr_at_recall(ScoredPairs(pair_angles(units, pairs), pairs.is_match), recall)


def nn_accuracy_from_units(ref_units, ref_labels, query_units, query_labels) -> float:
    cos = query_units @ np.asarray(ref_units).T
    nearest = np.argmax(cos, axis=1)
    return float(np.mean(np.asarray(ref_labels)[nearest] == np.asarray(query_labels)))


def nn_matching_accuracy(params: dict, enc_cfg: EncoderConfig, reference: PatchDataset,
                         query: PatchDataset) -> float:
    """Fraction of queries whose nearest reference descriptor (by angle, no
    ratio test) carries the same label."""
    return nn_accuracy_from_units(embed(params, enc_cfg, reference.patches), reference.labels,
                                  embed(params, enc_cfg, query.patches), query.labels)


# statistics tables -----------------------------------------------------------

# (label, column, power of ten the value is shown in)
REPORT_ROWS = (
    ("E[theta_rel]", "e_theta_rel", -1),
    ("Std[theta_rel]", "std_theta_rel", -1),
    ("E[theta_pos]", "e_theta_pos", -1),
    ("Std[theta_pos]", "std_theta_pos", -1),
    ("E[theta_neg]", "e_theta_neg", 0),
    ("Std[theta_neg]", "std_theta_neg", -2),
    ("E[P_pos]", "e_power_pos", 0),
    ("E[P_neg]", "e_power_neg", 0),
)


def format_scaled(value: float, exponent: int) -> str:
    if exponent == 0 and value >= 100:
        return f"{value:.0f}"
    return f"{value / 10.0 ** exponent:.2f}"


def parse_scaled(text: str, exponent: int) -> float:
    return float(text) * 10.0 ** exponent


def stats_report(log_path, epochs=None, iterations_per_epoch: float | None = None) -> list[list[str]]:
    """Table of the logged running statistics at the chosen epochs.

    The first row is the header; each further row is one statistic with its
    display scale in the label, e.g. ``E[theta_rel](1e-1)``. Epochs default to
    five evenly spaced ones; an epoch is 1/200 of the logged run unless
    ``iterations_per_epoch`` says otherwise.
    """
    with open(log_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in ("iteration",) + STAT_FIELDS if c not in header]
        if missing:
            raise FormatError(f"log is missing column(s): {', '.join(missing)}")
        rows = [r for r in reader if r.get("skipped", "0") in ("0", "", None)]
    if not rows:
        raise FormatError("log has no rows")
    its = np.array([int(r["iteration"]) for r in rows])
    if iterations_per_epoch is None:
        iterations_per_epoch = max((its.max() + 1) / 200.0, 1.0)
    if epochs is None:
        last = int(its.max() // iterations_per_epoch)
        epochs = sorted({int(round(e)) for e in np.linspace(last / 5, last, 5)})
    table = [["Epoch"] + [str(e) for e in epochs]]
    picks = []
    for e in epochs:
        target = e * iterations_per_epoch
        picks.append(rows[int(np.argmin(np.abs(its - target)))])
    for label, col, exp in REPORT_ROWS:
        name = label if exp == 0 else f"{label}(1e{exp})"
        table.append([name] + [format_scaled(float(r[col]), exp) for r in picks])
    return table


def render_table(table) -> str:
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    return "\n".join(" | ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in table)
