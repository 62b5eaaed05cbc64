"""Two-sided encoder: residual conv/attention trunk plus size conditioning.

The trunk is a three-stage residual network whose bottleneck 3x3 has been
replaced by the hybrid attention/convolution block; normalization is over
channel groups of each sample alone, so statistics never mix samples and
single-image inference is deterministic. Global average pooling yields the
image embedding, which the size branch then refines with the normalized
physical size pair. The refined vector is the model's embedding.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError
from .hybrid import HybridBlock
from .images import GrayImage
from .optim import Parameter, check_unique_names, kaiming_uniform
from .scatter import normalize_size
from .size_branch import SizeBranch


@dataclass(frozen=True)
class EncoderConfig:
    input_size: int = 64
    stage_channels: tuple = (16, 32, 64)
    stage_blocks: tuple = (2, 2, 2)
    heads: int = 4
    window: int = 3
    norm_groups: int = 4
    size_code_dim: int = 32
    recursion_steps: int = 2
    size_range: tuple = (0.0, 100.0)
    seed: int = 0

    def __post_init__(self):
        if self.input_size < 16 or self.input_size % 8 != 0:
            raise ValueError(f"input_size must be a multiple of 8 and >= 16, got {self.input_size}")
        if len(self.stage_channels) != len(self.stage_blocks) or not self.stage_channels:
            raise ValueError("stage_channels and stage_blocks must be equal-length and non-empty")
        if any(b < 1 for b in self.stage_blocks):
            raise ValueError(f"every stage needs >= 1 block, got {self.stage_blocks}")
        for ch in self.stage_channels:
            mid = ch // 4
            if ch % 4 != 0 or mid % self.heads != 0 or mid % self.norm_groups != 0:
                raise ValueError(
                    f"stage width {ch}: bottleneck width {mid} must divide by "
                    f"heads ({self.heads}) and norm groups ({self.norm_groups})"
                )
            if ch % self.norm_groups != 0:
                raise ValueError(f"stage width {ch} not divisible by norm groups")
        low, high = self.size_range
        if high <= low:
            raise ValueError(f"invalid size_range {self.size_range}")

    @property
    def embedding_dim(self) -> int:
        return self.stage_channels[-1]


@dataclass
class Embedding:
    values: np.ndarray
    l2_normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise DimensionError(f"embedding must be a vector, got shape {self.values.shape}")


class GroupNorm:
    """Per-sample normalization over channel groups, with learned affine."""

    def __init__(self, channels: int, groups: int, prefix: str):
        if channels % groups != 0:
            raise ValueError(f"{channels} channels not divisible into {groups} groups")
        self.channels = channels
        self.groups = groups
        self.gain = Parameter(f"{prefix}.gain", np.ones(channels))
        self.bias = Parameter(f"{prefix}.bias", np.zeros(channels))

    def parameters(self):
        return [self.gain, self.bias]

    def forward(self, x: Tensor) -> Tensor:
        c = x.shape[-3]
        if c != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got shape {x.shape}")
        h, w = x.shape[-2], x.shape[-1]
        per = c // self.groups
        if x.ndim == 3:
            grouped = ad.reshape(x, (self.groups, per, h, w))
            normed = ad.layer_norm(grouped, axes=(1, 2, 3))
        elif x.ndim == 4:
            n = x.shape[0]
            grouped = ad.reshape(x, (n, self.groups, per, h, w))
            normed = ad.layer_norm(grouped, axes=(2, 3, 4))
        else:
            raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")
        flat = ad.reshape(normed, x.shape)
        scale = ad.reshape(self.gain.tensor, (c, 1, 1))
        shift = ad.reshape(self.bias.tensor, (c, 1, 1))
        return ad.add(ad.mul(flat, scale), shift)


class Bottleneck:
    """1x1 reduce -> hybrid block -> 1x1 expand, with a residual shortcut."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, config: EncoderConfig,
                 rng: np.random.Generator, prefix: str):
        mid = out_ch // 4
        self.name = prefix
        self.stride = stride
        self.reduce_w = Parameter(f"{prefix}.reduce.weight",
                                  kaiming_uniform(rng, (mid, in_ch, 1, 1), in_ch))
        self.norm1 = GroupNorm(mid, config.norm_groups, f"{prefix}.norm1")
        self.hybrid = HybridBlock(mid, config.heads, config.window, rng, f"{prefix}.hybrid")
        self.norm2 = GroupNorm(mid, config.norm_groups, f"{prefix}.norm2")
        self.expand_w = Parameter(f"{prefix}.expand.weight",
                                  kaiming_uniform(rng, (out_ch, mid, 1, 1), mid))
        self.norm3 = GroupNorm(out_ch, config.norm_groups, f"{prefix}.norm3")
        if in_ch != out_ch or stride != 1:
            self.short_w = Parameter(f"{prefix}.shortcut.weight",
                                     kaiming_uniform(rng, (out_ch, in_ch, 1, 1), in_ch))
            self.short_norm = GroupNorm(out_ch, config.norm_groups, f"{prefix}.shortcut_norm")
        else:
            self.short_w = None
            self.short_norm = None

    def parameters(self):
        params = [self.reduce_w, *self.norm1.parameters(), *self.hybrid.parameters(),
                  *self.norm2.parameters(), self.expand_w, *self.norm3.parameters()]
        if self.short_w is not None:
            params.append(self.short_w)
            params.extend(self.short_norm.parameters())
        return params

    def forward(self, x: Tensor) -> Tensor:
        h = ad.conv2d(x, self.reduce_w.tensor, stride=self.stride, padding=0)
        h = ad.relu(self.norm1.forward(h))
        h = self.hybrid.forward(h)
        h = ad.relu(self.norm2.forward(h))
        h = ad.conv2d(h, self.expand_w.tensor, stride=1, padding=0)
        h = self.norm3.forward(h)
        if self.short_w is None:
            shortcut = x
        else:
            shortcut = self.short_norm.forward(
                ad.conv2d(x, self.short_w.tensor, stride=self.stride, padding=0)
            )
        return ad.relu(ad.add(h, shortcut))


class Encoder:
    """Full image+size encoder; build with ``build_encoder``."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        rng = np.random.default_rng([config.seed, 2024])
        c0 = config.stage_channels[0]
        self.stem_w = Parameter("stem.weight", kaiming_uniform(rng, (c0, 1, 3, 3), 9))
        self.stem_norm = GroupNorm(c0, config.norm_groups, "stem.norm")
        self.blocks = []
        in_ch = c0
        for si, (ch, nblocks) in enumerate(zip(config.stage_channels, config.stage_blocks)):
            for bi in range(nblocks):
                stride = 2 if (si > 0 and bi == 0) else 1
                block = Bottleneck(in_ch, ch, stride, config, rng, f"stage{si}.block{bi}")
                self.blocks.append(block)
                in_ch = ch
        self.size_branch = SizeBranch(config.embedding_dim, config.size_code_dim,
                                      config.recursion_steps, rng)
        self._params = [self.stem_w, *self.stem_norm.parameters()]
        for block in self.blocks:
            self._params.extend(block.parameters())
        self._params.extend(self.size_branch.parameters())
        check_unique_names(self._params)

    def parameters(self):
        return list(self._params)

    def hybrid_blocks(self):
        return [b.hybrid for b in self.blocks]

    def forward_features(self, images: Tensor) -> Tensor:
        """Trunk only: (N,1,H,W) or (1,H,W) -> final feature map."""
        if images.shape[-1] != self.config.input_size or images.shape[-2] != self.config.input_size:
            raise DimensionError(
                f"expected {self.config.input_size}x{self.config.input_size} input, "
                f"got shape {images.shape}"
            )
        h = ad.conv2d(images, self.stem_w.tensor, stride=2, padding=1)
        h = ad.relu(self.stem_norm.forward(h))
        for block in self.blocks:
            h = block.forward(h)
        return h

    def forward(self, images: Tensor, sizes_norm: Tensor) -> Tensor:
        """(N,1,H,W) images + (N,2) normalized sizes -> (N,d) embeddings."""
        features = self.forward_features(images)
        pooled = ad.global_avg_pool(features)
        return self.size_branch.forward(sizes_norm, pooled)

    def param_count(self) -> int:
        return sum(p.data.size for p in self._params)


def build_encoder(config: EncoderConfig) -> Encoder:
    model = Encoder(config)
    total = model.param_count()
    if total >= 2_000_000:
        raise ValueError(f"encoder has {total} parameters, budget is < 2,000,000")
    return model


def encode(model: Encoder, image: GrayImage, length_m: float, width_m: float) -> Embedding:
    """Inference-mode embedding of one image with its physical sizes."""
    cfg = model.config
    if image.height != cfg.input_size or image.width != cfg.input_size:
        raise DimensionError(
            f"image is {image.height}x{image.width}, model wants {cfg.input_size}"
        )
    sizes = normalize_size(length_m, width_m, cfg.size_range[0], cfg.size_range[1])
    with ad.no_grad():
        out = model.forward(Tensor(image.pixels[None, None]), Tensor(sizes[None]))
    return Embedding(out.data[0].copy(), l2_normalized=False)
