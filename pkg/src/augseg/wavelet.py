"""Single-level 2-d Haar analysis/synthesis and wavelet-domain masking.

The transform uses the orthonormal convention: for each disjoint 2x2
block [[a, b], [c, d]] (b right of a, c below a)

    LL = (a + b + c + d) / 2      low-pass both axes
    LH = (a - b + c - d) / 2      high-pass along the horizontal axis
    HL = (a + b - c - d) / 2      high-pass along the vertical axis
    HH = (a - b - c + d) / 2      diagonal detail

so synthesis is the transpose and reconstruction is exact, and the
total squared energy of the four sub-bands equals that of the source.
Odd spatial extents are reflect-padded to even before analysis and the
synthesis output is cropped back.

The augmentation zeroes a random subset of coefficients per sub-band
(Bernoulli keep masks shared across batch, and across channels by
default) and reconstructs; gradients flow through the whole pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, reshape
from .errors import ContractError


@dataclass
class SubbandSet:
    """The LL/LH/HL/HH sub-bands of one feature map.

    ``orig_hw`` records the pre-padding spatial extents so that
    synthesis can crop; ``None`` means no padding was applied.
    """

    LL: Tensor
    LH: Tensor
    HL: Tensor
    HH: Tensor
    orig_hw: tuple | None = None

    def bands(self):
        return (self.LL, self.LH, self.HL, self.HH)


@dataclass
class MaskSet:
    """Binary keep-masks, one per sub-band, broadcastable to the bands."""

    M_LL: Tensor
    M_LH: Tensor
    M_HL: Tensor
    M_HH: Tensor

    def masks(self):
        return (self.M_LL, self.M_LH, self.M_HL, self.M_HH)

    def all_ones(self) -> bool:
        return all(np.all(m.numpy() == 1) for m in self.masks())


@dataclass
class WtAugConfig:
    """Masking configuration: per-sub-band keep probabilities and seed.

    ``channel_shared=True`` draws one [1,1,h,w] mask per sub-band that
    applies to every channel; False draws per-channel masks.
    """

    keep_prob: tuple = (0.8, 0.8, 0.8, 0.8)
    seed: int = 0
    channel_shared: bool = True

    def __post_init__(self):
        if len(self.keep_prob) != 4:
            raise ContractError("keep_prob needs one value per sub-band")
        for p in self.keep_prob:
            if not 0.0 <= p <= 1.0:
                raise ContractError(f"keep_prob {p} outside [0, 1]")


def _reflect_pad_to_even(f: Tensor):
    """Append a mirrored row/column where the extent is odd."""
    n, c, h, w = f.shape
    pad_h = h % 2
    pad_w = w % 2
    if pad_h:
        f = concat([f, f[:, :, h - 2:h - 1, :]], axis=2)
    if pad_w:
        f = concat([f, f[:, :, :, w - 2:w - 1]], axis=3)
    return f, (pad_h or pad_w)


def haar_dwt2(f: Tensor) -> SubbandSet:
    """Orthonormal single-level Haar analysis of a [N,C,H,W] map."""
    if f.ndim != 4:
        raise ContractError(f"haar_dwt2 expects rank 4, got rank {f.ndim}")
    n, c, h, w = f.shape
    if h < 2 or w < 2:
        raise ContractError("spatial extents must be >= 2")
    padded, was_padded = _reflect_pad_to_even(f)
    a = padded[:, :, 0::2, 0::2]
    b = padded[:, :, 0::2, 1::2]
    cc = padded[:, :, 1::2, 0::2]
    d = padded[:, :, 1::2, 1::2]
    ll = (a + b + cc + d) * 0.5
    lh = (a - b + cc - d) * 0.5
    hl = (a + b - cc - d) * 0.5
    hh = (a - b - cc + d) * 0.5
    return SubbandSet(ll, lh, hl, hh, orig_hw=(h, w) if was_padded else None)


def _interleave_cols(left: Tensor, right: Tensor) -> Tensor:
    n, c, h, w = left.shape
    stacked = concat([reshape(left, (n, c, h, w, 1)),
                      reshape(right, (n, c, h, w, 1))], axis=4)
    return reshape(stacked, (n, c, h, 2 * w))


def _interleave_rows(top: Tensor, bottom: Tensor) -> Tensor:
    n, c, h, w = top.shape
    stacked = concat([reshape(top, (n, c, h, 1, w)),
                      reshape(bottom, (n, c, h, 1, w))], axis=3)
    return reshape(stacked, (n, c, 2 * h, w))


def haar_idwt2(s: SubbandSet) -> Tensor:
    """Exact inverse of :func:`haar_dwt2`; crops any analysis padding."""
    shapes = {band.shape for band in s.bands()}
    if len(shapes) != 1:
        raise ContractError(f"sub-band shapes differ: {sorted(shapes)}")
    ll, lh, hl, hh = s.bands()
    a = (ll + lh + hl + hh) * 0.5
    b = (ll - lh + hl - hh) * 0.5
    c = (ll + lh - hl - hh) * 0.5
    d = (ll - lh - hl + hh) * 0.5
    top = _interleave_cols(a, b)
    bottom = _interleave_cols(c, d)
    out = _interleave_rows(top, bottom)
    if s.orig_hw is not None:
        h, w = s.orig_hw
        out = out[:, :, :h, :w]
    return out


def make_masks(spatial_shape, cfg: WtAugConfig, rng=None) -> MaskSet:
    """Draw one Bernoulli(keep_prob) mask per sub-band.

    ``spatial_shape`` is (h, w) of the sub-bands, or (c, h, w) when
    per-channel masks are wanted.  Deterministic given (cfg.seed, shape)
    when no rng is supplied.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if len(spatial_shape) == 2:
        shape = (1, 1) + tuple(spatial_shape)
    elif len(spatial_shape) == 3:
        shape = (1,) + tuple(spatial_shape)
    else:
        raise ContractError("spatial_shape must be (h, w) or (c, h, w)")
    drawn = []
    for p in cfg.keep_prob:
        if p >= 1.0:
            m = np.ones(shape, dtype=np.float32)
            rng.random(shape)  # keep the stream position independent of p
        elif p <= 0.0:
            m = np.zeros(shape, dtype=np.float32)
            rng.random(shape)
        else:
            m = (rng.random(shape) < p).astype(np.float32)
        drawn.append(Tensor(m))
    return MaskSet(*drawn)


def wt_aug(f: Tensor, cfg: WtAugConfig, rng=None, masks: MaskSet | None = None) -> Tensor:
    """Decompose, mask each sub-band, reconstruct.

    Output shape equals input shape and gradients flow through to ``f``.
    When every mask is all-ones the input is returned unchanged, which
    makes the identity configuration exact rather than merely within
    float rounding.
    """
    if f.ndim != 4:
        raise ContractError(f"wt_aug expects rank 4, got rank {f.ndim}")
    sub = haar_dwt2(f)
    if masks is None:
        h2, w2 = sub.LL.shape[2], sub.LL.shape[3]
        if cfg.channel_shared:
            masks = make_masks((h2, w2), cfg, rng)
        else:
            masks = make_masks((f.shape[1], h2, w2), cfg, rng)
    if masks.all_ones():
        return f
    ll, lh, hl, hh = sub.bands()
    m_ll, m_lh, m_hl, m_hh = masks.masks()
    masked = SubbandSet(ll * m_ll, lh * m_lh, hl * m_hl, hh * m_hh,
                        orig_hw=sub.orig_hw)
    return haar_idwt2(masked)
