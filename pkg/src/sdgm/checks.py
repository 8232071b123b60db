"""Finite-difference checks of the metric gradient laws, the pseudo-loss
gradient and the full encoder pipeline. Used by the ``gradcheck`` command."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .autodiff import Tensor, backward, finite_diff_check, recording
from .encoder import EncoderConfig, encode, init_params
from .mining import mine_triplets
from .trainer import mine_from_descriptors, pseudo_loss_tensor


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    def __post_init__(self):
        self.max_rel_error = float(self.max_rel_error)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tolerance)


def central_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def _raw_angle(x, y):
    return float(np.arccos(x @ y / (np.linalg.norm(x) * np.linalg.norm(y))))


def _raw_similarity(x, y):
    return float(x @ y / (np.linalg.norm(x) * np.linalg.norm(y)))


def _raw_l2(x, y):
    return float(np.linalg.norm(x / np.linalg.norm(x) - y / np.linalg.norm(y)))


def random_pair(rng, dim: int, theta_margin: float = 0.05):
    """Raw descriptor pair whose angle lies in [margin, pi - margin]."""
    while True:
        x = rng.normal(size=dim) * rng.uniform(0.2, 5.0)
        y = rng.normal(size=dim) * rng.uniform(0.2, 5.0)
        if theta_margin <= _raw_angle(x, y) <= np.pi - theta_margin:
            return x, y


def magnitude_laws(pairs: int = 300, dims=(2, 8, 32), seed: int = 0, h: float = 1e-5) -> list[CheckResult]:
    """Numerical gradient norms of the angle, cosine and chord metrics
    against their closed forms."""
    rng = np.random.default_rng(seed)
    worst = {"angle": 0.0, "similarity": 0.0, "l2": 0.0}
    funcs = {"angle": _raw_angle, "similarity": _raw_similarity, "l2": _raw_l2}
    for k in range(pairs):
        dim = dims[k % len(dims)]
        x, y = random_pair(rng, dim)
        mag = float(np.linalg.norm(x))
        s = _raw_similarity(x, y)
        dist = {"angle": _raw_angle(x, y), "similarity": s, "l2": float(np.sqrt(2 - 2 * s))}
        for name, f in funcs.items():
            numeric = np.linalg.norm(central_gradient(lambda v: f(v, y), x, h))
            closed = geometry.grad_magnitude(name, mag, dist[name])
            worst[name] = max(worst[name], abs(numeric - closed) / closed)
    return [CheckResult(f"magnitude_law[{name}]", err, 1e-6) for name, err in worst.items()]


def explicit_weighted_gradient(raw: np.ndarray, batch, c_pos, c_neg) -> np.ndarray:
    """Sum over triplets of c_pos * d(theta_pos) - c_neg * d(theta_neg), built
    from per-pair closed-form angle gradients."""
    units = [geometry.normalize(r) for r in raw]
    grad = np.zeros_like(raw)
    a, p, left, right = batch.pair_indices()
    for k, i in enumerate(np.flatnonzero(batch.valid_mask)):
        for (u, v), coef in (((a[k], p[k]), c_pos[i]), ((left[k], right[k]), -c_neg[i])):
            grad[u] += coef * geometry.angle_grad(units[u], units[v])
            grad[v] += coef * geometry.angle_grad(units[v], units[u])
    return grad


def random_pseudo_loss_problem(rng, n: int = 32, dim: int = 8, tau: float = 0.6):
    raw = rng.normal(size=(2 * n, dim)) * rng.uniform(0.5, 3.0, size=(2 * n, 1))
    raw[n:] = raw[:n] + 0.6 * raw[n:]
    batch = mine_from_descriptors(raw, tau)
    c_pos = rng.uniform(0, 1, n) * rng.uniform(0.5, 1.0) / rng.uniform(10, 1000)
    c_neg = rng.uniform(0, 1, n) / rng.uniform(10, 1000)
    return raw, batch, c_pos, c_neg


def pseudo_loss_equivalence(batches: int = 20, n: int = 32, dim: int = 8, seed: int = 0,
                            h: float = 1e-5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_fd = worst_tape = 0.0
    for _ in range(batches):
        raw, batch, c_pos, c_neg = random_pseudo_loss_problem(rng, n, dim)
        explicit = explicit_weighted_gradient(raw, batch, c_pos, c_neg)
        numeric = central_gradient(lambda r: pseudo_loss_tensor(Tensor(r), batch, c_pos, c_neg).item(), raw, h)
        leaf = Tensor(raw, requires_grad=True)
        with recording() as tape:
            loss = pseudo_loss_tensor(leaf, batch, c_pos, c_neg)
        taped = backward(loss, tape)[id(leaf)]
        scale = np.linalg.norm(explicit)
        worst_fd = max(worst_fd, np.linalg.norm(numeric - explicit) / scale)
        worst_tape = max(worst_tape, np.linalg.norm(taped - numeric) / scale)
    return [CheckResult("pseudo_loss[finite_diff_vs_weighted_sum]", worst_fd, 1e-6),
            CheckResult("pseudo_loss[tape_vs_finite_diff]", worst_tape, 1e-6)]


def end_to_end(widths=(32, 32), output_dim: int = 16, n: int = 8, patch_size: int = 16,
               seed: int = 3, h: float = 1e-5) -> CheckResult:
    """Encoder -> normalization -> fixed triplets -> pseudo loss; tape
    gradients of all encoder parameters against central differences."""
    enc = EncoderConfig(input_dim=patch_size ** 2, widths=tuple(widths), output_dim=output_dim, seed=seed)
    rng = np.random.default_rng(seed)
    params = init_params(enc)
    for k in params:
        if k.endswith((".b", ".beta")):
            params[k] = rng.normal(0.0, 0.1, params[k].shape)
        if k.endswith(".gamma"):
            params[k] = rng.uniform(0.5, 1.5, params[k].shape)
    base = rng.uniform(0, 1, (n, patch_size ** 2))
    x = np.concatenate([base, np.clip(base + rng.normal(0, 0.1, base.shape), 0, 1)])
    raw = encode(x, params, enc, training=True, iteration=1).data
    units, _ = geometry.normalize_rows(raw)
    batch = mine_triplets(geometry.angle_matrix(units[:n], units[n:]), 0.3)
    c_pos = rng.uniform(0.2, 1.0, n) * 0.9 / n
    c_neg = rng.uniform(0.2, 1.0, n) / n

    def f(p):
        return pseudo_loss_tensor(encode(x, p, enc, training=True, iteration=1), batch, c_pos, c_neg)

    return CheckResult("end_to_end[encoder_params]", finite_diff_check(f, params, h), 1e-4)


def run_all(quick: bool = False) -> list[CheckResult]:
    results = magnitude_laws(pairs=60 if quick else 300)
    results += pseudo_loss_equivalence(batches=4 if quick else 20)
    results.append(end_to_end())
    return results
