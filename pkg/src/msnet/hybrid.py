"""Hybrid local-attention / dynamic-convolution block.

One set of 1x1 projections produces Q, K, V feature maps shared by two
branches. The attention branch runs per-pixel multi-head softmax attention
over a small window. The convolution branch turns the concatenated
projections into per-head kernel coefficients, multiplies each coefficient
map with the V channels of its head, translates the product by that kernel
cell's offset, and sums: exactly a convolution when the coefficients are
constant over space, and a dynamic one when they are not. The two branch
outputs are blended by learnable scalars.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError
from .optim import Parameter, kaiming_uniform


class HybridBlock:
    """Shared-projection window attention plus coefficient-generated convolution."""

    def __init__(self, channels: int, heads: int = 4, window: int = 3,
                 rng: np.random.Generator | None = None, prefix: str = "hybrid"):
        if heads < 1 or channels % heads != 0:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        if window < 1 or window % 2 == 0:
            raise ValueError(f"window must be odd and positive, got {window}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.heads = heads
        self.window = window
        c = channels
        self.proj_q = Parameter(f"{prefix}.proj_q.weight",
                                kaiming_uniform(rng, (c, c, 1, 1), c))
        self.proj_k = Parameter(f"{prefix}.proj_k.weight",
                                kaiming_uniform(rng, (c, c, 1, 1), c))
        self.proj_v = Parameter(f"{prefix}.proj_v.weight",
                                kaiming_uniform(rng, (c, c, 1, 1), c))
        n_coef = heads * window * window
        self.coef_w = Parameter(f"{prefix}.coef.weight",
                                kaiming_uniform(rng, (n_coef, 3 * c, 1, 1), 3 * c))
        self.coef_b = Parameter(f"{prefix}.coef.bias", np.zeros(n_coef))
        self.alpha = Parameter(f"{prefix}.alpha", np.ones(()))
        self.beta = Parameter(f"{prefix}.beta", np.ones(()))

    def parameters(self):
        return [self.proj_q, self.proj_k, self.proj_v,
                self.coef_w, self.coef_b, self.alpha, self.beta]

    def project(self, x: Tensor):
        q = ad.conv2d(x, self.proj_q.tensor, stride=1, padding=0)
        k = ad.conv2d(x, self.proj_k.tensor, stride=1, padding=0)
        v = ad.conv2d(x, self.proj_v.tensor, stride=1, padding=0)
        return q, k, v

    def attention_path(self, q: Tensor, k: Tensor, v: Tensor,
                       return_weights: bool = False):
        return ad.window_attention(q, k, v, self.heads, self.window,
                                   return_weights=return_weights)

    def convolution_path(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        """Sum of coefficient-weighted, offset-shifted copies of V.

        Channel m*window^2 + u*window + w of the coefficient stack holds head
        m's kernel cell (u, w); the cell's map scales every V channel of that
        head and the product is shifted by the cell offset relative to the
        kernel center. Out-of-image positions contribute zero, mirroring the
        zero padding of an ordinary convolution.
        """
        if q.shape != k.shape or q.shape != v.shape:
            raise DimensionError(f"Q/K/V shapes differ: {q.shape}, {k.shape}, {v.shape}")
        ch_axis = q.ndim - 3
        stacked = ad.concat([q, k, v], axis=ch_axis)
        coef = ad.conv2d(stacked, self.coef_w.tensor, stride=1, padding=0)
        coef = ad.add(coef, ad.reshape(self.coef_b.tensor, (-1, 1, 1)))
        win = self.window
        radius = win // 2
        per_head = self.channels // self.heads
        head_outputs = []
        for head in range(self.heads):
            v_head = ad.narrow(v, ch_axis, head * per_head, per_head)
            acc = None
            for u in range(win):
                for w in range(win):
                    cmap = ad.narrow(coef, ch_axis, head * win * win + u * win + w, 1)
                    moved = ad.shift(ad.mul(cmap, v_head), u - radius, w - radius)
                    acc = moved if acc is None else ad.add(acc, moved)
            head_outputs.append(acc)
        return ad.concat(head_outputs, axis=ch_axis)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-3] != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got shape {x.shape}")
        q, k, v = self.project(x)
        attended = self.attention_path(q, k, v)
        convolved = self.convolution_path(q, k, v)
        return ad.add(ad.mul(attended, self.alpha.tensor),
                      ad.mul(convolved, self.beta.tensor))

    def fusion_ratio(self):
        """(|alpha|, |beta|, log10(|alpha|/|beta|)); inf when beta is zero."""
        a = abs(float(self.alpha.data))
        b = abs(float(self.beta.data))
        if b == 0.0:
            return a, b, math.inf
        if a == 0.0:
            return a, b, -math.inf
        return a, b, math.log10(a / b)
