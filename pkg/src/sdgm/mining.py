"""In-batch hardest-negative mining with an anti-noise threshold."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

ANCHOR_SIDE = 0  # negative is positives[j] for anchor i: matrix[i, j]
POSITIVE_SIDE = 1  # negative is anchors[j] for positive i: matrix[j, i]

DEFAULT_TAU = 0.6


@dataclass
class TripletBatch:
    theta_pos: np.ndarray
    theta_neg: np.ndarray
    theta_rel: np.ndarray
    neg_side: np.ndarray
    neg_index: np.ndarray
    valid_mask: np.ndarray

    def __len__(self):
        return len(self.theta_pos)

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def pair_indices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Row indices of the valid triplets in the stacked [anchors; positives]
        descriptor array.

        Returns (anchor, positive, neg_left, neg_right) where the negative
        angle is measured between rows ``neg_left`` and ``neg_right``.
        """
        n = len(self)
        idx = np.flatnonzero(self.valid_mask)
        side = self.neg_side[idx]
        j = self.neg_index[idx]
        left = np.where(side == ANCHOR_SIDE, idx, j)
        right = n + np.where(side == ANCHOR_SIDE, j, idx)
        return idx, n + idx, left, right


def mine_triplets(matrix, tau: float = DEFAULT_TAU) -> TripletBatch:
    """Pick, for every matching pair i, the closest negative whose angle is at
    least ``tau``.

    Candidates are ``matrix[i, j]`` (anchor i against other positives) and
    ``matrix[j, i]`` (other anchors against positive i), j != i. Ties go to
    the anchor side first, then to the lowest j. Pairs without any surviving
    candidate are masked out.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"angle matrix must be square, got {m.shape}")
    if not 0.0 < tau < np.pi:
        raise ValueError(f"tau must lie in (0, pi), got {tau}")
    n = m.shape[0]
    theta_pos = np.diag(m).copy()

    cand = np.where(m >= tau, m, np.inf)
    np.fill_diagonal(cand, np.inf)
    row_j = np.argmin(cand, axis=1)
    col_j = np.argmin(cand, axis=0)
    ar = np.arange(n)
    row_min = cand[ar, row_j]
    col_min = cand[col_j, ar]

    use_col = col_min < row_min
    theta_neg = np.where(use_col, col_min, row_min)
    valid = np.isfinite(theta_neg)
    side = np.where(use_col, POSITIVE_SIDE, ANCHOR_SIDE)
    index = np.where(use_col, col_j, row_j)

    theta_neg = np.where(valid, theta_neg, np.nan)
    side = np.where(valid, side, -1)
    index = np.where(valid, index, -1)
    return TripletBatch(
        theta_pos=theta_pos,
        theta_neg=theta_neg,
        theta_rel=theta_pos - theta_neg,
        neg_side=side,
        neg_index=index,
        valid_mask=valid,
    )
