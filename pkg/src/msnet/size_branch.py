"""Size-conditioned recurrent modulation of image embeddings.

Normalized physical sizes are lifted to a periodic encoding, mapped to a
compact code, and expanded into a per-sample square matrix that is applied
to the image embedding a fixed number of times. The recursion reuses the
same generated matrix and the same normalization affine at every step and
has no bias or residual path, so repeated application is a pure fixed-point
style refinement conditioned on the size pair.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError
from .optim import Parameter, kaiming_uniform


class SizeBranch:
    """fc -> LN -> ReLU encoder, matrix generator, and N-step recursion."""

    def __init__(self, feature_dim: int, code_dim: int = 32, steps: int = 2,
                 rng: np.random.Generator | None = None, prefix: str = "size_branch"):
        if feature_dim < 1 or code_dim < 1:
            raise ValueError(f"dims must be positive, got {feature_dim}, {code_dim}")
        if steps < 1:
            raise ValueError(f"recursion needs at least 1 step, got {steps}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.feature_dim = feature_dim
        self.code_dim = code_dim
        self.steps = steps
        # weights stored (in, out) so forward is a plain right-multiply
        self.enc_w = Parameter(f"{prefix}.enc.weight", kaiming_uniform(rng, (4, code_dim), 4))
        self.enc_b = Parameter(f"{prefix}.enc.bias", np.zeros(code_dim))
        self.enc_gain = Parameter(f"{prefix}.enc_norm.gain", np.ones(code_dim))
        self.enc_shift = Parameter(f"{prefix}.enc_norm.bias", np.zeros(code_dim))
        self.gen_w = Parameter(
            f"{prefix}.gen.weight",
            kaiming_uniform(rng, (code_dim, feature_dim * feature_dim), code_dim),
        )
        self.gen_b = Parameter(f"{prefix}.gen.bias", np.zeros(feature_dim * feature_dim))
        self.rec_gain = Parameter(f"{prefix}.rec_norm.gain", np.ones(feature_dim))
        self.rec_shift = Parameter(f"{prefix}.rec_norm.bias", np.zeros(feature_dim))

    def parameters(self):
        return [self.enc_w, self.enc_b, self.enc_gain, self.enc_shift,
                self.gen_w, self.gen_b, self.rec_gain, self.rec_shift]

    def generate_matrix(self, sizes: Tensor) -> Tensor:
        """Per-sample (feature_dim x feature_dim) matrix from a size pair."""
        sizes, _ = _as_batch(sizes, 2, "sizes")
        scaled = ad.mul_scalar(sizes, math.pi)
        encoding = ad.concat([ad.sin(scaled), ad.cos(scaled)], axis=1)
        pre = ad.add(ad.matmul(encoding, self.enc_w.tensor), self.enc_b.tensor)
        normed = ad.add(ad.mul(ad.layer_norm(pre, axes=(1,)), self.enc_gain.tensor),
                        self.enc_shift.tensor)
        code = ad.relu(normed)
        flat = ad.add(ad.matmul(code, self.gen_w.tensor), self.gen_b.tensor)
        n = flat.shape[0]
        return ad.reshape(flat, (n, self.feature_dim, self.feature_dim))

    def forward(self, sizes: Tensor, features: Tensor) -> Tensor:
        """Apply the generated matrix ``steps`` times with shared LN affine."""
        sizes_b, _ = _as_batch(sizes, 2, "sizes")
        feats, single = _as_batch(features, self.feature_dim, "features")
        if sizes_b.shape[0] != feats.shape[0]:
            raise DimensionError(
                f"batch mismatch: {sizes_b.shape[0]} size pairs, {feats.shape[0]} features"
            )
        if np.any(np.abs(sizes_b.data) > 1.0 + 1e-9):
            raise ValueError("sizes must be normalized into [-1, 1] before the branch")
        matrix = self.generate_matrix(sizes_b)
        z = feats
        for _ in range(self.steps):
            z = ad.bmm(matrix, z)
            z = ad.layer_norm(z, axes=(1,))
            z = ad.add(ad.mul(z, self.rec_gain.tensor), self.rec_shift.tensor)
            z = ad.relu(z)
        return ad.reshape(z, (self.feature_dim,)) if single else z


def _as_batch(t: Tensor, width: int, what: str):
    if not isinstance(t, Tensor):
        t = Tensor(t)
    if t.ndim == 1:
        if t.shape[0] != width:
            raise DimensionError(f"{what} must have {width} entries, got {t.shape[0]}")
        return ad.reshape(t, (1, width)), True
    if t.ndim == 2:
        if t.shape[1] != width:
            raise DimensionError(f"{what} must be (n, {width}), got {t.shape}")
        return t, False
    raise DimensionError(f"{what} must be 1-D or 2-D, got shape {t.shape}")


def apply_size_branch(branch: SizeBranch, sizes, features) -> Tensor:
    """Functional alias for ``branch.forward``."""
    return branch.forward(sizes if isinstance(sizes, Tensor) else Tensor(sizes),
                          features if isinstance(features, Tensor) else Tensor(features))
