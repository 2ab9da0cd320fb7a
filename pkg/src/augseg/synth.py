"""Seeded synthetic segmentation data and the four corruption families.

Samples are grayscale [1,H,W] images in [0, 1] over a low-frequency
textured background, with 1-3 anti-aliased ellipses/rectangles of
distinct foreground classes.  The label mask is the exact center-in-shape
rasterization (the image edges are anti-aliased, the mask is crisp).

Corruptions (brightness, motion blur, Poisson noise, random pixel
masking) are pure functions of (values, spec); they never touch masks.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve

from .autodiff import Tensor
from .errors import ContractError, FormatError, InputError
from .netpbm import read_pgm, write_pgm

CORRUPTION_KINDS = ("brightness", "motion_blur", "poisson", "rand_mask")


@dataclass
class SynthConfig:
    image_size: int = 64
    num_classes: int = 3                  # background + 2 foreground
    fg_fraction_range: tuple = (0.05, 0.40)
    max_shapes: int = 3
    background_range: tuple = (0.15, 0.45)
    background_cells: int = 8             # coarse noise grid extent


@dataclass
class Sample:
    image: np.ndarray     # [1,H,W] float32 in [0,1]
    mask: np.ndarray      # [H,W] uint8 class indices
    seed: int
    shapes: list          # generation parameters, for provenance


@dataclass
class CorruptionSpec:
    kind: str
    seed: int = 0
    factor: float = 1.3       # brightness multiplier
    length: int = 5           # motion blur extent in pixels
    scale: float = 60.0       # poisson photon scale
    drop_prob: float = 0.2    # rand_mask zeroing probability

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ContractError(f"unknown corruption kind {self.kind!r}")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ContractError("drop_prob outside [0, 1]")
        if self.length < 1 or self.scale <= 0 or self.factor < 0:
            raise ContractError("corruption strength outside documented range")


def _coarse_noise(rng, size, cells, lo, hi):
    """Low-frequency texture: bilinear upsample of a coarse uniform grid."""
    grid = rng.uniform(lo, hi, size=(cells, cells))
    src = (np.arange(size) + 0.5) * (cells / size) - 0.5
    src = np.clip(src, 0, cells - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, cells - 1)
    t = src - i0
    rows = grid[i0][:, i0] * ((1 - t)[:, None] * (1 - t)[None, :]) \
        + grid[i0][:, i1] * ((1 - t)[:, None] * t[None, :]) \
        + grid[i1][:, i0] * (t[:, None] * (1 - t)[None, :]) \
        + grid[i1][:, i1] * (t[:, None] * t[None, :])
    return rows


def _shape_coverage(kind, size, cy, cx, ry, rx, angle, supersample=3):
    """Anti-aliased coverage in [0,1] plus the exact center-inside mask."""
    ss = supersample
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    yy = np.arange(size)[:, None, None, None] + offs[None, None, :, None]
    xx = np.arange(size)[None, :, None, None] + offs[None, None, None, :]
    ca, sa = math.cos(angle), math.sin(angle)
    u = (yy - cy) * ca + (xx - cx) * sa
    v = -(yy - cy) * sa + (xx - cx) * ca
    if kind == "ellipse":
        inside = (u / ry) ** 2 + (v / rx) ** 2 <= 1.0
    else:
        inside = (np.abs(u) <= ry) & (np.abs(v) <= rx)
    coverage = inside.mean(axis=(2, 3))
    uc = (np.arange(size)[:, None] - cy) * ca + (np.arange(size)[None, :] - cx) * sa
    vc = -(np.arange(size)[:, None] - cy) * sa + (np.arange(size)[None, :] - cx) * ca
    if kind == "ellipse":
        center_in = (uc / ry) ** 2 + (vc / rx) ** 2 <= 1.0
    else:
        center_in = (np.abs(uc) <= ry) & (np.abs(vc) <= rx)
    return coverage, center_in


def gen_sample(seed: int, config: SynthConfig | None = None) -> Sample:
    """Deterministic sample for a seed; retries (seeded) until the total
    foreground fraction lands inside the configured band."""
    config = config or SynthConfig()
    size = config.image_size
    n_fg = config.num_classes - 1
    if n_fg < 1:
        raise ContractError("need at least one foreground class")
    for attempt in range(64):
        rng = np.random.default_rng(np.random.SeedSequence((seed, attempt)))
        bg = _coarse_noise(rng, size, config.background_cells,
                           *config.background_range)
        image = bg.astype(np.float64)
        mask = np.zeros((size, size), dtype=np.uint8)
        count = int(rng.integers(1, min(config.max_shapes, n_fg) + 1))
        classes = rng.choice(np.arange(1, n_fg + 1), size=count, replace=False)
        lo, hi = config.fg_fraction_range
        shapes = []
        for cls in classes:
            kind = "ellipse" if rng.random() < 0.6 else "rect"
            area_target = rng.uniform(lo / count, hi / count) * size * size
            aspect = rng.uniform(0.5, 2.0)
            if kind == "ellipse":
                ry = math.sqrt(area_target * aspect / math.pi)
                rx = area_target / (math.pi * ry)
            else:
                ry = math.sqrt(area_target * aspect) / 2.0
                rx = area_target / (4.0 * ry)
            ry = min(ry, size * 0.45)
            rx = min(rx, size * 0.45)
            cy = rng.uniform(ry + 1, size - ry - 1)
            cx = rng.uniform(rx + 1, size - rx - 1)
            angle = rng.uniform(0, math.pi)
            coverage, center_in = _shape_coverage(kind, size, cy, cx, ry, rx,
                                                  angle)
            intensity = 0.55 + 0.17 * int(cls) + rng.normal(0, 0.02)
            image = image * (1 - coverage) + intensity * coverage
            mask[center_in] = cls
            shapes.append({"kind": kind, "class": int(cls), "cy": cy, "cx": cx,
                           "ry": ry, "rx": rx, "angle": angle,
                           "intensity": float(intensity)})
        frac = float((mask > 0).mean())
        if lo <= frac <= hi:
            image = np.clip(image, 0.0, 1.0).astype(np.float32)
            return Sample(image=image[None], mask=mask, seed=seed, shapes=shapes)
    raise ContractError(
        f"could not satisfy foreground band {config.fg_fraction_range} "
        f"for seed {seed}")


# ----------------------------------------------------------------------
# corruptions
# ----------------------------------------------------------------------
def motion_blur_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized line kernel: unit-weight samples splatted bilinearly."""
    size = length if length % 2 else length + 1
    k = np.zeros((size, size))
    c = size // 2
    steps = np.linspace(-(length - 1) / 2, (length - 1) / 2, 2 * length + 1)
    for t in steps:
        y = c + t * math.sin(angle)
        x = c + t * math.cos(angle)
        i0, j0 = int(math.floor(y)), int(math.floor(x))
        fy, fx = y - i0, x - j0
        for di, wy in ((0, 1 - fy), (1, fy)):
            for dj, wx in ((0, 1 - fx), (1, fx)):
                i, j = i0 + di, j0 + dj
                if 0 <= i < size and 0 <= j < size:
                    k[i, j] += wy * wx
    return k / k.sum()


def corrupt(image: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Apply one corruption to a [H,W] or [1,H,W] image in [0,1]."""
    img = np.asarray(image, dtype=np.float32)
    squeeze = False
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
        squeeze = True
    if img.ndim != 2:
        raise ContractError("corrupt expects a [H,W] or [1,H,W] image")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "brightness":
        out = np.clip(img * spec.factor, 0.0, 1.0)
    elif spec.kind == "motion_blur":
        kernel = motion_blur_kernel(spec.length, rng.uniform(0, math.pi))
        out = convolve(img, kernel, mode="nearest").astype(np.float32)
        out = np.clip(out, 0.0, 1.0)
    elif spec.kind == "poisson":
        counts = rng.poisson(np.clip(img, 0, 1) * spec.scale)
        out = np.clip(counts / spec.scale, 0.0, 1.0).astype(np.float32)
    elif spec.kind == "rand_mask":
        keep = rng.random(img.shape) >= spec.drop_prob
        out = img * keep
    else:  # pragma: no cover - guarded by CorruptionSpec
        raise ContractError(f"unknown corruption kind {spec.kind!r}")
    return out[None].astype(np.float32) if squeeze else out.astype(np.float32)


def feature_spatial_aug(f: Tensor, spec: CorruptionSpec) -> Tensor:
    """The same four transforms applied per channel to a feature map.

    This is the ablation baseline arm; it acts on frozen encoder outputs,
    so only the brightness/rand_mask paths keep exact gradients (blur and
    Poisson noise enter as additive constants).  Feature values are not
    clamped.
    """
    if f.ndim != 4:
        raise ContractError("feature_spatial_aug expects a rank-4 tensor")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "brightness":
        return f * float(spec.factor)
    if spec.kind == "rand_mask":
        if spec.drop_prob <= 0:
            return f
        keep = (rng.random((1, 1) + f.shape[2:]) >= spec.drop_prob)
        return f * Tensor(keep.astype(np.float32))
    if spec.kind == "motion_blur":
        kernel = motion_blur_kernel(spec.length, rng.uniform(0, math.pi))
        data = f.numpy()
        blurred = np.stack([
            np.stack([convolve(data[n, c], kernel, mode="nearest")
                      for c in range(data.shape[1])])
            for n in range(data.shape[0])])
        return f + Tensor((blurred - data).astype(data.dtype))
    if spec.kind == "poisson":
        data = f.numpy()
        shifted = data - data.min(axis=(2, 3), keepdims=True)
        noisy = rng.poisson(shifted * spec.scale) / spec.scale
        return f + Tensor((noisy - shifted).astype(data.dtype))
    raise ContractError(f"unknown corruption kind {spec.kind!r}")


def random_corruption(rng, *, length_range=(3, 9), factor_range=(0.6, 1.5),
                      scale_range=(30.0, 120.0), drop_range=(0.05, 0.35),
                      kinds=CORRUPTION_KINDS) -> CorruptionSpec:
    """Draw a corruption kind and strength for one training application."""
    kind = kinds[int(rng.integers(0, len(kinds)))]
    return CorruptionSpec(
        kind=kind,
        seed=int(rng.integers(0, 2 ** 31)),
        factor=float(rng.uniform(*factor_range)),
        length=int(rng.integers(length_range[0], length_range[1] + 1)),
        scale=float(rng.uniform(*scale_range)),
        drop_prob=float(rng.uniform(*drop_range)),
    )


# ----------------------------------------------------------------------
# dataset emission / loading
# ----------------------------------------------------------------------
def write_dataset(out_dir, train_seeds, test_seeds, config: SynthConfig | None = None):
    """Render seeded samples to PGM pairs plus a JSON manifest.

    Images are quantized to 8 bits on write; mask pixel value is the
    class index.  Train/test seed ranges must not overlap.
    """
    config = config or SynthConfig()
    if set(train_seeds) & set(test_seeds):
        raise ContractError("train and test seed ranges overlap")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for split, seeds in (("train", train_seeds), ("test", test_seeds)):
        for seed in seeds:
            sample = gen_sample(seed, config)
            sid = f"{split}_{seed:06d}"
            img_name = f"{sid}.pgm"
            mask_name = f"{sid}_mask.pgm"
            write_pgm(os.path.join(out_dir, img_name),
                      np.round(sample.image[0] * 255).astype(np.uint8))
            write_pgm(os.path.join(out_dir, mask_name), sample.mask)
            entries.append({"id": sid, "split": split, "seed": seed,
                            "image": img_name, "mask": mask_name})
    manifest = {"image_size": config.image_size,
                "num_classes": config.num_classes,
                "samples": entries}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def load_manifest(path):
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"manifest not found: {path}")
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})")
    for key in ("image_size", "num_classes", "samples"):
        if key not in manifest:
            raise FormatError(f"{path}: missing manifest key {key!r}")
    return manifest


def load_sample(manifest_dir, entry):
    """Read one manifest entry back as float image in [0,1] plus mask."""
    image = read_pgm(os.path.join(manifest_dir, entry["image"]))
    mask = read_pgm(os.path.join(manifest_dir, entry["mask"]))
    return image.astype(np.float32)[None] / 255.0, mask
