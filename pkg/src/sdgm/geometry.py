"""Descriptor normalization, distance metrics on the unit hypersphere and
their backward magnitudes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAngle, InvalidDistance, ShapeMismatch, ZeroVector

COS_CLAMP = 1e-7
ZERO_NORM = 1e-12
THETA_MIN = 1e-3

METRICS = ("angle", "similarity", "l2")


@dataclass(frozen=True)
class UnitDescriptor:
    unit: np.ndarray
    magnitude: float

    def __post_init__(self):
        if self.magnitude <= 0:
            raise ZeroVector("magnitude must be positive")


def normalize(v) -> UnitDescriptor:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ShapeMismatch(f"expected a vector of dimension >= 2, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("descriptor has non-finite entries")
    n = float(np.linalg.norm(v))
    if n < ZERO_NORM:
        raise ZeroVector(f"cannot normalize vector with norm {n:.3g}")
    return UnitDescriptor(v / n, n)


def normalize_rows(x) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise version of :func:`normalize`; returns (units, magnitudes)."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms < ZERO_NORM):
        raise ZeroVector("at least one row has (near) zero norm")
    return x / norms[:, None], norms


def clamp_cos(s):
    return np.clip(s, -1.0 + COS_CLAMP, 1.0 - COS_CLAMP)


def _unit(x) -> np.ndarray:
    return x.unit if isinstance(x, UnitDescriptor) else np.asarray(x, dtype=np.float64)


def angle(x, y) -> float:
    """Included angle between two unit descriptors, in radians."""
    u, v = _unit(x), _unit(y)
    if u.shape != v.shape:
        raise ShapeMismatch(f"{u.shape} vs {v.shape}")
    return float(np.arccos(clamp_cos(np.einsum("d,d->", u, v))))


def similarity_and_l2(x, y) -> tuple[float, float]:
    u, v = _unit(x), _unit(y)
    if u.shape != v.shape:
        raise ShapeMismatch(f"{u.shape} vs {v.shape}")
    s = float(np.clip(u @ v, -1.0, 1.0))
    return s, float(np.sqrt(max(2.0 - 2.0 * s, 0.0)))


def angle_grad(x: UnitDescriptor, y) -> np.ndarray:
    """Derivative of the angle with respect to the raw (unnormalized) ``x``.

    The result is tangent to the sphere at ``x`` and has norm ``1/|x|``.
    """
    u, v = x.unit, _unit(y)
    s = float(u @ v)
    theta = float(np.arccos(clamp_cos(s)))
    if not THETA_MIN <= theta <= np.pi - THETA_MIN:
        raise DegenerateAngle(f"angle {theta:.3g} too close to 0 or pi")
    return -(v - s * u) / (x.magnitude * np.sin(theta))


def grad_magnitude(metric: str, magnitude: float, d: float) -> float:
    """Closed-form norm of the distance gradient w.r.t. the raw descriptor.

    ``d`` is the distance under ``metric``: an angle, a cosine similarity or
    an L2 chord length.
    """
    if magnitude <= 0:
        raise ZeroVector("magnitude must be positive")
    if metric == "angle":
        if not 0.0 <= d <= np.pi:
            raise InvalidDistance(f"angle {d} outside [0, pi]")
        return 1.0 / magnitude
    if metric == "similarity":
        if not -1.0 <= d <= 1.0:
            raise InvalidDistance(f"similarity {d} outside [-1, 1]")
        return np.sqrt(1.0 - d * d) / magnitude
    if metric == "l2":
        if not 0.0 <= d <= 2.0:
            raise InvalidDistance(f"l2 distance {d} outside [0, 2]")
        # sqrt(4l^2 - l^4) / (2l) with the l=0 singularity removed
        return np.sqrt(4.0 - d * d) / (2.0 * magnitude)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def angle_matrix(anchors, positives) -> np.ndarray:
    """Pairwise angles; entry (i, j) is angle(anchors[i], positives[j]).

    The Gram product goes through einsum rather than BLAS so each entry is
    bitwise identical to the scalar :func:`angle` of the same pair.
    """
    a = _stack(anchors)
    p = _stack(positives)
    if a.shape != p.shape:
        raise ShapeMismatch(f"anchors {a.shape} vs positives {p.shape}")
    return np.arccos(clamp_cos(np.einsum("id,jd->ij", a, p)))


def _stack(xs) -> np.ndarray:
    if isinstance(xs, np.ndarray):
        if xs.ndim != 2:
            raise ShapeMismatch(f"expected a 2-D array, got shape {xs.shape}")
        return xs.astype(np.float64, copy=False)
    rows = [_unit(x) for x in xs]
    if len({r.shape for r in rows}) > 1:
        raise ShapeMismatch("descriptors have differing dimensions")
    return np.stack(rows)
