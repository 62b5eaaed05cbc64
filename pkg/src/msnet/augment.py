"""Stochastic view generation for contrastive pretraining.

The transform order is fixed: crop (then resize back), horizontal flip,
rotation, Gaussian blur. Each draw consumes the supplied generator in a
fixed sequence, so one seed reproduces one view stream exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .images import bilinear_resize, gaussian_blur, rotate_bilinear


@dataclass(frozen=True)
class AugmentPolicy:
    out_size: int = 64
    crop_enabled: bool = True
    crop_scale: tuple = (0.5, 1.0)
    flip_enabled: bool = True
    flip_prob: float = 0.5
    rotate_enabled: bool = True
    rotate_range: tuple = (-math.pi, math.pi)
    blur_enabled: bool = True
    blur_prob: float = 0.5
    blur_sigma: tuple = (0.1, 2.0)

    def __post_init__(self):
        if self.out_size < 8:
            raise ValueError(f"out_size too small: {self.out_size}")
        lo, hi = self.crop_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob outside [0, 1]: {self.flip_prob}")
        if not 0.0 <= self.blur_prob <= 1.0:
            raise ValueError(f"blur_prob outside [0, 1]: {self.blur_prob}")
        slo, shi = self.blur_sigma
        if not 0.0 < slo <= shi:
            raise ValueError(f"blur_sigma must be positive and ordered, got {self.blur_sigma}")
        rlo, rhi = self.rotate_range
        if rlo > rhi:
            raise ValueError(f"rotate_range reversed: {self.rotate_range}")


def augment(pixels: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """One random view of ``pixels``; always (out_size, out_size) in [0, 1]."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"augment expects a 2-D image, got shape {arr.shape}")
    h, w = arr.shape

    if policy.crop_enabled:
        scale = rng.uniform(policy.crop_scale[0], policy.crop_scale[1])
        side = max(8, int(round(scale * min(h, w))))
        side = min(side, h, w)
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        arr = arr[top : top + side, left : left + side]
    arr = bilinear_resize(arr, policy.out_size, policy.out_size)

    if policy.flip_enabled and rng.random() < policy.flip_prob:
        arr = arr[:, ::-1].copy()

    if policy.rotate_enabled:
        angle = rng.uniform(policy.rotate_range[0], policy.rotate_range[1])
        arr = rotate_bilinear(arr, angle, fill=0.0)

    if policy.blur_enabled and rng.random() < policy.blur_prob:
        sigma = rng.uniform(policy.blur_sigma[0], policy.blur_sigma[1])
        arr = gaussian_blur(arr, sigma)

    return np.clip(arr, 0.0, 1.0)


def two_views(pixels: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator):
    """A pair of independently augmented views of the same image."""
    return augment(pixels, policy, rng), augment(pixels, policy, rng)
