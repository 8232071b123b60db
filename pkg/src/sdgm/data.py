"""Patch datasets: synthetic generation, UBC PhotoTour layout ingestion,
augmentation and matching-pair batch sampling."""
from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, FormatError, ShapeMismatch

UBC_PATCH = 64
UBC_TILES = 16


@dataclass
class PatchDataset:
    patches: np.ndarray  # (n, H, W) in [0, 1]
    labels: np.ndarray  # (n,) class id
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.patches.ndim != 3 or self.patches.shape[1] != self.patches.shape[2]:
            raise ShapeMismatch(f"patches must be square, got shape {self.patches.shape}")
        if len(self.labels) != len(self.patches):
            raise ShapeMismatch("one label per patch required")
        if self.patches.size and (self.patches.min() < 0.0 or self.patches.max() > 1.0):
            raise FormatError("pixel values must lie in [0, 1]")
        if not self.index:
            index: dict[int, list[int]] = {}
            for i, lab in enumerate(self.labels.tolist()):
                index.setdefault(lab, []).append(i)
            self.index = {k: np.asarray(v) for k, v in index.items()}

    def __len__(self):
        return len(self.patches)

    @property
    def patch_size(self) -> int:
        return self.patches.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.asarray(sorted(self.index))

    def trainable_classes(self) -> np.ndarray:
        return np.asarray([c for c in sorted(self.index) if len(self.index[c]) >= 2])


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 200
    patches_per_class: int = 4
    patch_size: int = 16
    blobs: int = 5
    max_rotation: float = 0.15  # radians
    max_translation: float = 0.08  # fraction of the patch
    brightness: float = 0.15
    contrast: float = 0.2
    noise: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.patches_per_class < 1 or self.patch_size < 2:
            raise ConfigError("num_classes, patches_per_class must be >= 1 and patch_size >= 2")


@dataclass(frozen=True)
class AugmentConfig:
    """Defaults are desk-scale choices, not values taken from any benchmark."""

    rot90: bool = True
    flip: bool = True
    max_angle: float = 0.1  # radians, small-angle resample
    min_crop: float = 0.85  # side of the crop as a fraction of the patch

    @property
    def is_identity(self) -> bool:
        return not self.rot90 and not self.flip and self.max_angle == 0.0 and self.min_crop >= 1.0


NO_AUGMENT = AugmentConfig(rot90=False, flip=False, max_angle=0.0, min_crop=1.0)


def _render(prototype: np.ndarray, size: int, angle: float = 0.0, shift=(0.0, 0.0)) -> np.ndarray:
    """Evaluate a sum of oriented Gabor-like blobs on a rotated/shifted grid.

    ``prototype`` rows are (cx, cy, sigma, orientation, frequency, phase,
    amplitude) in patch-relative coordinates on [-1, 1].
    """
    lin = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(lin, lin, indexing="ij")
    c, s = np.cos(angle), np.sin(angle)
    u = c * xx - s * yy + shift[0]
    v = s * xx + c * yy + shift[1]
    img = np.full((size, size), 0.5)
    for cx, cy, sigma, ori, freq, phase, amp in prototype:
        du, dv = u - cx, v - cy
        env = np.exp(-(du * du + dv * dv) / (2.0 * sigma * sigma))
        wave = np.cos(freq * (np.cos(ori) * du + np.sin(ori) * dv) + phase)
        img += amp * env * wave
    return img


def generate_synthetic(cfg: SynthConfig) -> PatchDataset:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.num_classes * cfg.patches_per_class
    patches = np.empty((n, cfg.patch_size, cfg.patch_size))
    labels = np.repeat(np.arange(cfg.num_classes), cfg.patches_per_class)
    k = 0
    for _ in range(cfg.num_classes):
        proto = np.column_stack([
            rng.uniform(-0.7, 0.7, cfg.blobs),
            rng.uniform(-0.7, 0.7, cfg.blobs),
            rng.uniform(0.15, 0.45, cfg.blobs),
            rng.uniform(0.0, np.pi, cfg.blobs),
            rng.uniform(2.0, 9.0, cfg.blobs),
            rng.uniform(0.0, 2 * np.pi, cfg.blobs),
            rng.uniform(0.15, 0.35, cfg.blobs) * rng.choice([-1.0, 1.0], cfg.blobs),
        ])
        for _ in range(cfg.patches_per_class):
            angle = rng.uniform(-cfg.max_rotation, cfg.max_rotation)
            shift = rng.uniform(-cfg.max_translation, cfg.max_translation, 2) * 2.0
            img = _render(proto, cfg.patch_size, angle, shift)
            gain = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast)
            offset = rng.uniform(-cfg.brightness, cfg.brightness)
            img = (img - 0.5) * gain + 0.5 + offset
            if cfg.noise > 0:
                img = img + rng.normal(0.0, cfg.noise, img.shape)
            patches[k] = np.clip(img, 0.0, 1.0)
            k += 1
    return PatchDataset(patches, labels)


def apply_augmentation(patch, rot90: int = 0, flip_h: bool = False, flip_v: bool = False,
                       angle: float = 0.0, crop: float = 1.0, center=(0.0, 0.0)) -> np.ndarray:
    """Deterministic part of :func:`augment`.

    ``crop`` is the side of the crop window relative to the patch and
    ``center`` its offset from the patch center in pixels; the window is
    rotated by ``angle`` and resampled back to full size with bilinear
    interpolation.
    """
    out = np.asarray(patch, dtype=np.float64)
    if rot90 % 4:
        out = np.rot90(out, rot90 % 4)
    if flip_h:
        out = out[:, ::-1]
    if flip_v:
        out = out[::-1, :]
    if angle != 0.0 or crop != 1.0 or center[0] != 0.0 or center[1] != 0.0:
        size = out.shape[0]
        mid = (size - 1) / 2.0
        c, s = np.cos(angle), np.sin(angle)
        mat = crop * np.array([[c, -s], [s, c]])
        offset = np.array([mid, mid]) + np.asarray(center) - mat @ np.array([mid, mid])
        out = ndimage.affine_transform(out, mat, offset=offset, order=1, mode="reflect")
    return np.clip(np.ascontiguousarray(out), 0.0, 1.0)


def draw_pair_transform(rng: np.random.Generator, cfg: AugmentConfig) -> dict:
    return {
        "rot90": int(rng.integers(4)) if cfg.rot90 else 0,
        "flip_h": bool(rng.random() < 0.5) if cfg.flip else False,
        "flip_v": bool(rng.random() < 0.5) if cfg.flip else False,
    }


def draw_patch_transform(rng: np.random.Generator, cfg: AugmentConfig, size: int) -> dict:
    angle = rng.uniform(-cfg.max_angle, cfg.max_angle) if cfg.max_angle > 0 else 0.0
    crop = rng.uniform(cfg.min_crop, 1.0) if cfg.min_crop < 1.0 else 1.0
    slack = (1.0 - crop) * (size - 1) / 2.0
    center = tuple(rng.uniform(-slack, slack, 2)) if slack > 0 else (0.0, 0.0)
    return {"angle": angle, "crop": crop, "center": center}


def augment(patch, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Random rotation, flip and crop-and-resize of one patch."""
    patch = np.asarray(patch, dtype=np.float64)
    if cfg.is_identity:
        return patch.copy()
    return apply_augmentation(patch, **draw_pair_transform(rng, cfg),
                              **draw_patch_transform(rng, cfg, patch.shape[0]))


def sample_batch(dataset: PatchDataset, n: int, rng: np.random.Generator,
                 cfg: AugmentConfig = NO_AUGMENT):
    """``n`` matching pairs from ``n`` distinct classes.

    Returns (anchors, positives, labels) with patch stacks of shape
    (n, H, W). Both members of a pair share one dihedral transform
    (rot90/flip); small-angle rotation and cropping are drawn per patch.
    """
    classes = dataset.trainable_classes()
    if n > len(classes):
        raise ConfigError(f"batch of {n} pairs needs {n} classes with >= 2 patches, have {len(classes)}")
    if n < 1:
        raise ConfigError("batch size must be positive")
    chosen = rng.choice(classes, size=n, replace=False)
    size = dataset.patch_size
    anchors = np.empty((n, size, size))
    positives = np.empty((n, size, size))
    for k, c in enumerate(chosen):
        i, j = rng.choice(dataset.index[int(c)], size=2, replace=False)
        if cfg.is_identity:
            anchors[k] = dataset.patches[i]
            positives[k] = dataset.patches[j]
            continue
        shared = draw_pair_transform(rng, cfg)
        anchors[k] = apply_augmentation(dataset.patches[i], **shared, **draw_patch_transform(rng, cfg, size))
        positives[k] = apply_augmentation(dataset.patches[j], **shared, **draw_patch_transform(rng, cfg, size))
    return anchors, positives, chosen


@dataclass
class VerificationPairs:
    left: np.ndarray
    right: np.ndarray
    is_match: np.ndarray

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.is_match = np.asarray(self.is_match, dtype=bool)
        if not (len(self.left) == len(self.right) == len(self.is_match)):
            raise ShapeMismatch("pair columns differ in length")

    def __len__(self):
        return len(self.left)

    def validate(self, n_patches: int) -> None:
        if len(self) and (min(self.left.min(), self.right.min()) < 0
                          or max(self.left.max(), self.right.max()) >= n_patches):
            raise FormatError("pair references a patch index outside the dataset")


def make_verification_pairs(dataset: PatchDataset, n_pairs: int, rng: np.random.Generator,
                            match_fraction: float = 0.5) -> VerificationPairs:
    """Random matching / non-matching pairs over ``dataset``."""
    trainable = dataset.trainable_classes()
    all_classes = dataset.classes
    if len(trainable) < 1 or len(all_classes) < 2:
        raise ConfigError("need at least one class with two patches and two classes overall")
    n_match = int(round(n_pairs * match_fraction))
    left, right, match = [], [], []
    for _ in range(n_match):
        c = trainable[rng.integers(len(trainable))]
        i, j = rng.choice(dataset.index[int(c)], size=2, replace=False)
        left.append(i), right.append(j), match.append(True)
    for _ in range(n_pairs - n_match):
        c1, c2 = rng.choice(all_classes, size=2, replace=False)
        left.append(rng.choice(dataset.index[int(c1)]))
        right.append(rng.choice(dataset.index[int(c2)]))
        match.append(False)
    return VerificationPairs(left, right, match)


# UBC PhotoTour layout --------------------------------------------------------

def _downsample(tile: np.ndarray, size: int) -> np.ndarray:
    if tile.shape[0] == size:
        return tile
    f = tile.shape[0] // size
    if f * size == tile.shape[0]:
        return tile.reshape(size, f, size, f).mean(axis=(1, 3))
    from PIL import Image

    img = Image.fromarray(tile.astype(np.float32), mode="F").resize((size, size), Image.BOX)
    return np.asarray(img, dtype=np.float64)


def load_ubc(directory, patch_size: int = 16, info_name: str = "info.txt") -> PatchDataset:
    """Read bitmap mosaics of 64x64 tiles (row-major) plus the info file that
    maps patch index to 3D point id."""
    from PIL import Image

    info_path = os.path.join(directory, info_name)
    if not os.path.exists(info_path):
        raise FormatError(f"missing info file {info_path}")
    point_ids = []
    with open(info_path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                point_ids.append(int(parts[0]))
            except ValueError:
                raise FormatError(f"{info_path}:{lineno}: expected an integer point id") from None
    mosaics = sorted(f for f in os.listdir(directory) if f.lower().endswith((".bmp", ".png")))
    if not mosaics:
        raise FormatError(f"no mosaic images in {directory}")
    tiles = []
    for name in mosaics:
        img = np.asarray(Image.open(os.path.join(directory, name)).convert("L"), dtype=np.float64) / 255.0
        rows, cols = img.shape[0] // UBC_PATCH, img.shape[1] // UBC_PATCH
        for r in range(rows):
            for c in range(cols):
                tiles.append(img[r * UBC_PATCH:(r + 1) * UBC_PATCH, c * UBC_PATCH:(c + 1) * UBC_PATCH])
                if len(tiles) == len(point_ids):
                    break
            if len(tiles) == len(point_ids):
                break
        if len(tiles) == len(point_ids):
            break
    if len(tiles) < len(point_ids):
        raise FormatError(f"info file lists {len(point_ids)} patches, mosaics hold {len(tiles)}")
    patches = np.stack([_downsample(t, patch_size) for t in tiles]) if tiles else np.empty((0, patch_size, patch_size))
    return PatchDataset(np.clip(patches, 0.0, 1.0), np.asarray(point_ids))


def load_verification_pairs(path) -> VerificationPairs:
    """Parse a pair list: ``patch1 point1 _ patch2 point2 _ _`` per line;
    a pair matches iff the point ids are equal."""
    left, right, match = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 7 or not all(re.fullmatch(r"-?\d+", p) for p in parts):
                raise FormatError(f"{path}:{lineno}: expected 7 integers, got {line.strip()!r}")
            a, pa, _, b, pb, _, _ = (int(p) for p in parts)
            left.append(a), right.append(b), match.append(pa == pb)
    return VerificationPairs(left, right, match)


# containers -------------------------------------------------------------------

def save_dataset(path, dataset: PatchDataset, config: SynthConfig | None = None) -> None:
    meta = {"format": "sdgm-dataset", "version": 1, "config": asdict(config) if config else None}
    np.savez_compressed(path, patches=dataset.patches, labels=dataset.labels, meta=json.dumps(meta))


def load_dataset(path) -> tuple[PatchDataset, SynthConfig | None]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != "sdgm-dataset":
            raise FormatError(f"{path} is not a dataset container")
        ds = PatchDataset(z["patches"], z["labels"])
    cfg = SynthConfig(**meta["config"]) if meta.get("config") else None
    return ds, cfg
