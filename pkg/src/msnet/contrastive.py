"""Momentum-contrast pretraining with a distribution-consistency objective.

A query network (encoder + projection head) is trained by SGD; a key
network with identical structure trails it as an exponential moving
average and never receives gradients. Keys from past batches wait in a
FIFO queue and serve as negatives. The loss adds a distribution-consistency
term to InfoNCE: the squared Euclidean distance between the softmax
distributions of the two views' projections, with unit weight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .augment import AugmentPolicy, augment
from .encoder import Encoder, EncoderConfig, build_encoder
from .errors import NumericError
from .optim import LrSchedule, Parameter, kaiming_uniform, sgd_step, zero_grads
from .synth import SampleSet

_NORM_TOL = 1e-6


class NegativeQueue:
    """Fixed-capacity FIFO of L2-normalized key vectors."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1 or dim < 1:
            raise ValueError(f"capacity and dim must be positive, got {capacity}, {dim}")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._buffer = np.zeros((self.capacity, self.dim))
        self._start = 0
        self._count = 0

    @property
    def size(self) -> int:
        return self._count

    def enqueue(self, keys: np.ndarray) -> None:
        """Append keys in order; the oldest entries beyond capacity fall out."""
        keys = np.asarray(keys, dtype=np.float64)
        if keys.ndim == 1:
            keys = keys[None]
        if keys.ndim != 2 or keys.shape[1] != self.dim:
            raise ValueError(f"keys must be (n, {self.dim}), got shape {keys.shape}")
        n = keys.shape[0]
        if n > self.capacity:
            raise ValueError(f"cannot enqueue {n} keys into capacity {self.capacity}")
        if not np.all(np.isfinite(keys)):
            raise ValueError("keys contain non-finite values")
        norms = np.linalg.norm(keys, axis=1)
        if np.any(np.abs(norms - 1.0) > _NORM_TOL):
            raise ValueError("queue keys must be L2-normalized")
        for row in keys:
            slot = (self._start + self._count) % self.capacity
            self._buffer[slot] = row
            if self._count < self.capacity:
                self._count += 1
            else:
                self._start = (self._start + 1) % self.capacity

    def as_array(self) -> np.ndarray:
        """Contents oldest-first, shape (size, dim)."""
        idx = (self._start + np.arange(self._count)) % self.capacity
        return self._buffer[idx].copy()


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _rows(t, what: str) -> Tensor:
    t = t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64))
    if t.ndim == 1:
        t = ad.reshape(t, (1, t.shape[0]))
    if t.ndim != 2:
        raise ValueError(f"{what} must be a vector or matrix, got shape {t.shape}")
    return t


def _check_unit_rows(arr: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(arr, axis=-1)
    if np.any(np.abs(norms - 1.0) > _NORM_TOL):
        worst = float(np.abs(norms - 1.0).max())
        raise ValueError(f"{what} must be L2-normalized (worst deviation {worst:.2e})")


def info_nce(query, positive_key, negatives, temperature: float = 0.07) -> Tensor:
    """Mean InfoNCE over the batch; gradients flow only into ``query``.

    query: (n, d) or (d,) unit rows (Tensor). positive_key: matching unit
    rows, treated as constants. negatives: (k, d) unit rows, constants.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    q = _rows(query, "query")
    pos = np.asarray(positive_key.data if isinstance(positive_key, Tensor) else positive_key,
                     dtype=np.float64)
    if pos.ndim == 1:
        pos = pos[None]
    if isinstance(negatives, NegativeQueue):
        negatives = negatives.as_array()
    neg = np.asarray(negatives, dtype=np.float64)
    if neg.ndim != 2 or neg.shape[0] < 1:
        raise ValueError("need a non-empty (k, d) array of negative keys")
    if pos.shape != q.shape or neg.shape[1] != q.shape[1]:
        raise ValueError(
            f"shape mismatch: query {q.shape}, positive {pos.shape}, negatives {neg.shape}"
        )
    _check_unit_rows(q.data, "query rows")
    _check_unit_rows(pos, "positive keys")
    _check_unit_rows(neg, "negative keys")

    inv_t = 1.0 / float(temperature)
    pos_logit = ad.tensor_sum(ad.mul(q, Tensor(pos)), axis=1, keepdims=True)
    neg_logits = ad.matmul(q, Tensor(neg.T))
    logits = ad.mul_scalar(ad.concat([pos_logit, neg_logits], axis=1), inv_t)
    per_sample = ad.sub(ad.logsumexp(logits, axis=1),
                        ad.reshape(ad.mul_scalar(pos_logit, inv_t), (q.shape[0],)))
    return ad.tensor_mean(per_sample)


def _check_simplex(arr: np.ndarray, what: str) -> None:
    if np.any(arr < -1e-9):
        raise ValueError(f"{what} must be non-negative")
    sums = arr.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > _NORM_TOL):
        worst = float(np.abs(sums - 1.0).max())
        raise ValueError(f"{what} rows must sum to 1 (worst deviation {worst:.2e})")


def d_ec_pair(p, q) -> Tensor:
    """Mean squared Euclidean distance between paired distributions."""
    pt = _rows(p, "first distribution")
    qt = _rows(q, "second distribution")
    if pt.shape != qt.shape:
        raise ValueError(f"distribution shapes differ: {pt.shape} vs {qt.shape}")
    _check_simplex(pt.data, "first distribution")
    _check_simplex(qt.data, "second distribution")
    diff = ad.sub(pt, qt)
    return ad.tensor_mean(ad.tensor_sum(ad.mul(diff, diff), axis=1))


def d_ec_sets(set_a, set_b) -> Tensor:
    """All-pairs mean squared distance between two sets of distributions."""
    a = _rows(set_a, "first set")
    b = _rows(set_b, "second set")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"distribution widths differ: {a.shape[1]} vs {b.shape[1]}")
    _check_simplex(a.data, "first set")
    _check_simplex(b.data, "second set")
    m_a, m_b = a.shape[0], b.shape[0]
    wide_a = ad.reshape(a, (m_a, 1, a.shape[1]))
    wide_b = ad.reshape(b, (1, m_b, b.shape[1]))
    diff = ad.sub(wide_a, wide_b)
    total = ad.tensor_sum(ad.mul(diff, diff))
    return ad.mul_scalar(total, 1.0 / (m_a * m_b))


@dataclass
class SpLossParts:
    total: Tensor
    info_nce: Tensor
    d_ec: Tensor


def sp_loss(query_proj, key_proj, queue, temperature: float = 0.07,
            labels=None) -> SpLossParts:
    """InfoNCE plus the distribution-consistency term, both at unit weight.

    query_proj: (n, d) projection outputs with graph. key_proj: (n, d)
    constants from the momentum branch. Without labels the consistency term
    compares each query/key pair; with labels it averages the all-pairs set
    distance over distinct label pairs (zero when fewer than two labels),
    pooling both branches' distributions per label.
    """
    q = _rows(query_proj, "query projections")
    k = np.asarray(key_proj.data if isinstance(key_proj, Tensor) else key_proj,
                   dtype=np.float64)
    if k.ndim == 1:
        k = k[None]
    if k.shape != q.shape:
        raise ValueError(f"projection shapes differ: {q.shape} vs {k.shape}")

    q_unit = ad.l2_normalize(q, axis=-1)
    k_unit = k / np.linalg.norm(k, axis=1, keepdims=True)
    nce = info_nce(q_unit, k_unit, queue, temperature)

    q_dist = ad.softmax(q, axis=-1)
    k_dist = np.exp(k - k.max(axis=1, keepdims=True))
    k_dist /= k_dist.sum(axis=1, keepdims=True)

    if labels is None:
        dec = d_ec_pair(q_dist, Tensor(k_dist))
    else:
        labels = np.asarray(labels).reshape(-1)
        if labels.shape[0] != q.shape[0]:
            raise ValueError(f"{labels.shape[0]} labels for {q.shape[0]} samples")
        distinct = sorted(set(labels.tolist()))
        if len(distinct) < 2:
            dec = Tensor(0.0)
        else:
            pooled = {
                lbl: ad.concat(
                    [ad.gather_rows(q_dist, np.nonzero(labels == lbl)[0]),
                     Tensor(k_dist[labels == lbl])], axis=0)
                for lbl in distinct
            }
            terms = [d_ec_sets(pooled[i], pooled[j]) for i, j in combinations(distinct, 2)]
            acc = terms[0]
            for term in terms[1:]:
                acc = ad.add(acc, term)
            dec = ad.mul_scalar(acc, 1.0 / len(terms))
    return SpLossParts(total=ad.add(nce, dec), info_nce=nce, d_ec=dec)


# ---------------------------------------------------------------------------
# momentum networks
# ---------------------------------------------------------------------------


def momentum_update(query_params, key_params, momentum: float) -> None:
    """key <- momentum*key + (1-momentum)*query, name-checked, in place."""
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    query_params = list(query_params)
    key_params = list(key_params)
    if len(query_params) != len(key_params):
        raise ValueError(f"{len(query_params)} query vs {len(key_params)} key parameters")
    for pq, pk in zip(query_params, key_params):
        if pq.name != pk.name or pq.data.shape != pk.data.shape:
            raise ValueError(f"parameter mismatch: {pq.name}/{pq.data.shape} "
                             f"vs {pk.name}/{pk.data.shape}")
        pk.data = momentum * pk.data + (1.0 - momentum) * pq.data


def copy_parameters(src_params, dst_params) -> None:
    for ps, pd in zip(list(src_params), list(dst_params)):
        if ps.name != pd.name or ps.data.shape != pd.data.shape:
            raise ValueError(f"parameter mismatch: {ps.name} vs {pd.name}")
        pd.data = ps.data.copy()


class ProjectionHead:
    """Two-layer ReLU MLP mapping embeddings to the contrastive space."""

    def __init__(self, in_dim: int, out_dim: int = 32, rng=None, prefix: str = "proj_head"):
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = in_dim
        self.w1 = Parameter(f"{prefix}.fc1.weight", kaiming_uniform(rng, (in_dim, hidden), in_dim))
        self.b1 = Parameter(f"{prefix}.fc1.bias", np.zeros(hidden))
        self.w2 = Parameter(f"{prefix}.fc2.weight", kaiming_uniform(rng, (hidden, out_dim), hidden))
        self.b2 = Parameter(f"{prefix}.fc2.bias", np.zeros(out_dim))
        self.out_dim = out_dim

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x: Tensor) -> Tensor:
        h = ad.relu(ad.add(ad.matmul(x, self.w1.tensor), self.b1.tensor))
        return ad.add(ad.matmul(h, self.w2.tensor), self.b2.tensor)


# ---------------------------------------------------------------------------
# pretraining loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 32
    base_lr: float = 0.01
    warmup_epochs: int = 5
    sgd_momentum: float = 0.9
    key_momentum: float = 0.999
    temperature: float = 0.07
    queue_capacity: int = 1024
    proj_dim: int = 32
    use_d_ec: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 <= self.key_momentum < 1.0:
            raise ValueError(f"key momentum must lie in [0, 1), got {self.key_momentum}")
        if self.temperature <= 0 or self.queue_capacity < 1 or self.proj_dim < 1:
            raise ValueError("temperature, queue capacity and proj_dim must be positive")
        if self.batch_size > self.queue_capacity:
            raise ValueError("batch size cannot exceed queue capacity")


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    info_nce: float
    d_ec: float
    lr: float


@dataclass
class PretrainResult:
    encoder: Encoder
    head: ProjectionHead
    key_encoder: Encoder
    key_head: ProjectionHead
    metrics: list = field(default_factory=list)


def pretrain(
    encoder: Encoder,
    data: SampleSet,
    config: PretrainConfig,
    policy: AugmentPolicy | None = None,
    checkpoint_fn=None,
    log_fn=None,
) -> PretrainResult:
    """Run momentum-contrast pretraining over ``data``.

    checkpoint_fn, when given, is called after every epoch (and right
    before a numeric abort) with the PretrainResult so far, so the last
    finished state survives a NaN abort. log_fn receives EpochMetrics.
    """
    if len(data) < 2:
        raise ValueError("pretraining needs at least 2 samples")
    policy = policy or AugmentPolicy(out_size=encoder.config.input_size)
    if policy.out_size != encoder.config.input_size:
        raise ValueError(
            f"policy emits {policy.out_size}px views, encoder wants {encoder.config.input_size}"
        )

    head_rng = np.random.default_rng([config.seed, 23])
    head = ProjectionHead(encoder.config.embedding_dim, config.proj_dim, head_rng)
    key_encoder = build_encoder(encoder.config)
    copy_parameters(encoder.parameters(), key_encoder.parameters())
    key_head = ProjectionHead(encoder.config.embedding_dim, config.proj_dim,
                              np.random.default_rng([config.seed, 23]))
    copy_parameters(head.parameters(), key_head.parameters())

    # prefill with encoded keys so epoch 1 already faces realistic
    # negatives; random vectors would be trivially separable at this scale
    queue = NegativeQueue(config.queue_capacity, config.proj_dim)
    fill_rng = np.random.default_rng([config.seed, 29])
    with ad.no_grad():
        filled = 0
        while filled < config.queue_capacity:
            take = min(config.batch_size, config.queue_capacity - filled)
            idx = fill_rng.integers(0, len(data), size=take)
            views = np.stack([augment(data.images[i], policy, fill_rng) for i in idx])
            k_emb = key_encoder.forward(Tensor(views[:, None]),
                                        Tensor(data.sizes_norm[idx]))
            k_proj = key_head.forward(k_emb).data
            queue.enqueue(k_proj / np.linalg.norm(k_proj, axis=1, keepdims=True))
            filled += take

    schedule = LrSchedule(config.base_lr, config.warmup_epochs, config.epochs)
    order_rng = np.random.default_rng([config.seed, 31])
    train_params = encoder.parameters() + head.parameters()
    result = PretrainResult(encoder, head, key_encoder, key_head)

    for epoch in range(config.epochs):
        lr = schedule.lr_at(epoch)
        order = order_rng.permutation(len(data))
        sums = np.zeros(3)
        batches = 0
        try:
            for start in range(0, len(order), config.batch_size):
                chunk = order[start : start + config.batch_size]
                views_q, views_k = [], []
                for i in chunk:
                    view_rng = np.random.default_rng([config.seed, 37, epoch, int(i)])
                    vq, vk = (augment(data.images[i], policy, view_rng),
                              augment(data.images[i], policy, view_rng))
                    views_q.append(vq)
                    views_k.append(vk)
                sizes = Tensor(data.sizes_norm[chunk])
                q_emb = encoder.forward(Tensor(np.stack(views_q)[:, None]), sizes)
                q_proj = head.forward(q_emb)
                with ad.no_grad():
                    k_emb = key_encoder.forward(Tensor(np.stack(views_k)[:, None]), sizes)
                    k_proj = key_head.forward(k_emb).data

                parts = sp_loss(q_proj, k_proj, queue, config.temperature)
                loss = parts.total if config.use_d_ec else parts.info_nce
                ad.backward(loss)
                sgd_step(train_params, lr, config.sgd_momentum)
                zero_grads(train_params)
                momentum_update(encoder.parameters(), key_encoder.parameters(),
                                config.key_momentum)
                momentum_update(head.parameters(), key_head.parameters(),
                                config.key_momentum)
                k_unit = k_proj / np.linalg.norm(k_proj, axis=1, keepdims=True)
                queue.enqueue(k_unit)

                sums += (loss.item(), parts.info_nce.item(), parts.d_ec.item())
                batches += 1
        except NumericError:
            if checkpoint_fn is not None:
                checkpoint_fn(result)
            raise
        metrics = EpochMetrics(epoch + 1, sums[0] / batches, sums[1] / batches,
                               sums[2] / batches, lr)
        result.metrics.append(metrics)
        if log_fn is not None:
            log_fn(metrics)
        if checkpoint_fn is not None:
            checkpoint_fn(result)
    return result


def heldout_dec(result: PretrainResult, data: SampleSet) -> float:
    """Mean distribution distance between branches on un-augmented data."""
    with ad.no_grad():
        q_emb = result.encoder.forward(Tensor(data.images[:, None]), Tensor(data.sizes_norm))
        q_proj = result.head.forward(q_emb)
        k_emb = result.key_encoder.forward(Tensor(data.images[:, None]),
                                           Tensor(data.sizes_norm))
        k_proj = result.key_head.forward(k_emb)
        dec = d_ec_pair(ad.softmax(q_proj, axis=-1), ad.softmax(k_proj, axis=-1))
    return dec.item()
