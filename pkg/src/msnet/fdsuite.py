"""Named finite-difference fragments covering every differentiable stage.

Each fragment builds a small, deterministically seeded computation that
exercises one trainable component end to end and returns a scalar loss. Normalization
constraints (unit rows, simplex rows) are satisfied inside the fragment,
so perturbing the raw leaves keeps the preconditions intact.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .contrastive import NegativeQueue, d_ec_pair, d_ec_sets, info_nce, sp_loss
from .encoder import EncoderConfig, build_encoder
from .gradcheck import GradCheckResult, grad_check
from .hybrid import HybridBlock
from .size_branch import SizeBranch


_SEED_STRIDE = 7919  # offsets the fixed fragment streams per CLI --seed


def _unit_rows(rng, n, d):
    raw = rng.normal(size=(n, d))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _square_mean(t: Tensor) -> Tensor:
    return ad.tensor_mean(ad.mul(t, t))


def fragment_size_branch(seed: int = 0):
    rng = np.random.default_rng(1101 + _SEED_STRIDE * seed)
    branch = SizeBranch(feature_dim=6, code_dim=5, steps=2, rng=rng)
    sizes = Tensor(np.array([[0.31, -0.62], [-0.18, 0.77]]), requires_grad=True)
    feats = Tensor(rng.normal(size=(2, 6)), requires_grad=True)

    def fn():
        return _square_mean(branch.forward(sizes, feats))

    return fn, [*branch.parameters(), ("sizes", sizes), ("features", feats)]


def fragment_hybrid_block(seed: int = 0):
    rng = np.random.default_rng(1203 + _SEED_STRIDE * seed)
    block = HybridBlock(channels=4, heads=2, window=3, rng=rng)
    x = Tensor(rng.normal(size=(4, 6, 6)) * 0.7, requires_grad=True)

    def fn():
        return _square_mean(block.forward(x))

    return fn, [*block.parameters(), ("input", x)]


def fragment_info_nce(seed: int = 0):
    rng = np.random.default_rng(1307 + _SEED_STRIDE * seed)
    raw = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
    positives = _unit_rows(rng, 3, 8)
    negatives = _unit_rows(rng, 16, 8)

    def fn():
        return info_nce(ad.l2_normalize(raw, axis=-1), positives, negatives, 0.07)

    return fn, [("queries", raw)]


def fragment_d_ec_pair(seed: int = 0):
    rng = np.random.default_rng(1409 + _SEED_STRIDE * seed)
    a = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 6)), requires_grad=True)

    def fn():
        return d_ec_pair(ad.softmax(a, axis=-1), ad.softmax(b, axis=-1))

    return fn, [("first", a), ("second", b)]


def fragment_d_ec_sets(seed: int = 0):
    rng = np.random.default_rng(1511 + _SEED_STRIDE * seed)
    a = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 5)), requires_grad=True)

    def fn():
        return d_ec_sets(ad.softmax(a, axis=-1), ad.softmax(b, axis=-1))

    return fn, [("first", a), ("second", b)]


def fragment_sp_loss(seed: int = 0):
    rng = np.random.default_rng(1613 + _SEED_STRIDE * seed)
    q = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
    k = rng.normal(size=(3, 8))
    queue = NegativeQueue(16, 8)
    queue.enqueue(_unit_rows(rng, 16, 8))

    def fn():
        return sp_loss(q, k, queue, 0.07).total

    return fn, [("projections", q)]


def desk_encoder_config(seed: int = 5) -> EncoderConfig:
    """Tiny two-stage encoder small enough for exhaustive differencing."""
    return EncoderConfig(
        input_size=16,
        stage_channels=(4, 8),
        stage_blocks=(1, 1),
        heads=1,
        window=3,
        norm_groups=1,
        size_code_dim=4,
        recursion_steps=2,
        seed=seed,
    )


def fragment_full_encoder(seed: int = 0):
    rng = np.random.default_rng(1717 + _SEED_STRIDE * seed)
    model = build_encoder(desk_encoder_config(5 + _SEED_STRIDE * seed))
    images = Tensor(rng.uniform(0.05, 0.95, size=(2, 1, 16, 16)), requires_grad=True)
    sizes = Tensor(np.array([[0.22, -0.41], [-0.63, 0.54]]), requires_grad=True)

    def fn():
        return _square_mean(model.forward(images, sizes))

    return fn, [*model.parameters(), ("images", images), ("sizes", sizes)]


FRAGMENTS = (
    ("size_branch", fragment_size_branch),
    ("hybrid_block", fragment_hybrid_block),
    ("info_nce", fragment_info_nce),
    ("d_ec_pair", fragment_d_ec_pair),
    ("d_ec_sets", fragment_d_ec_sets),
    ("sp_loss", fragment_sp_loss),
    ("full_encoder", fragment_full_encoder),
)


def run_suite(step: float = 1e-5, tol: float = 1e-5, names=None, seed: int = 0):
    """Run the fragments and return [(name, GradCheckResult)]."""
    wanted = set(names) if names else None
    results = []
    for name, builder in FRAGMENTS:
        if wanted is not None and name not in wanted:
            continue
        fn, leaves = builder(seed)
        results.append((name, grad_check(fn, leaves, step=step, tol=tol)))
    return results
