"""Frozen-backbone evaluation: label-fraction splits, linear probing,
accuracy/confusion reporting, and embedding / activation-map exports.

The probe never updates the encoder; embeddings are computed once under
no-grad and only a linear softmax classifier is trained on top.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import Encoder
from .errors import DataError
from .images import bilinear_resize, write_pgm
from .optim import Parameter, sgd_step, zero_grads
from .synth import SampleSet

ALLOWED_FRACTIONS = (0.1, 0.2, 0.5, 1.0)


def split_labeled(labels, fraction: float, seed: int = 0) -> np.ndarray:
    """Indices of a per-class subsample: floor(fraction*n) of each class, min 1.

    The per-class order is a seeded shuffle that does not depend on the
    fraction, so smaller fractions select prefixes of larger ones (nested
    subsets). Returned indices are sorted ascending.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise ValueError("empty label array")
    chosen = []
    for rank, cls in enumerate(sorted(set(labels.tolist()))):
        members = np.nonzero(labels == cls)[0]
        rng = np.random.default_rng([seed, 41, rank])
        order = members[rng.permutation(members.size)]
        keep = max(1, int(np.floor(fraction * members.size)))
        chosen.append(order[:keep])
    return np.sort(np.concatenate(chosen))


@dataclass
class ProbeHead:
    """Linear softmax classifier over standardized embeddings."""

    weight: np.ndarray  # (d, n_classes)
    bias: np.ndarray    # (n_classes,)
    mean: np.ndarray    # (d,) train standardization
    scale: np.ndarray   # (d,)
    classes: list

    def logits(self, embeddings: np.ndarray) -> np.ndarray:
        z = (embeddings - self.mean) / self.scale
        return z @ self.weight + self.bias

    def predict(self, embeddings: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(embeddings), axis=1)


def embed_dataset(model: Encoder, data: SampleSet, batch_size: int = 64) -> np.ndarray:
    """(N, d) embeddings under no-grad; backbone state is untouched."""
    outs = []
    with ad.no_grad():
        for start in range(0, len(data), batch_size):
            chunk = slice(start, start + batch_size)
            out = model.forward(Tensor(data.images[chunk][:, None]),
                                Tensor(data.sizes_norm[chunk]))
            outs.append(out.data)
    return np.concatenate(outs, axis=0)


def linear_probe(embeddings: np.ndarray, labels, classes, epochs: int = 50,
                 lr: float = 0.5, momentum: float = 0.9) -> ProbeHead:
    """Full-batch softmax regression on frozen embeddings.

    Zero-initialized weights make the run deterministic without a seed.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError(f"bad embedding/label shapes: {x.shape} vs {y.shape}")
    if epochs < 1:
        raise ValueError(f"epochs must be positive, got {epochs}")
    n_classes = len(classes)
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("label index outside class range")

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale < 1e-8, 1.0, scale)
    z = (x - mean) / scale
    onehot = np.zeros((y.size, n_classes))
    onehot[np.arange(y.size), y] = 1.0

    weight = Parameter("probe.weight", np.zeros((x.shape[1], n_classes)))
    bias = Parameter("probe.bias", np.zeros(n_classes))
    params = [weight, bias]
    inputs = Tensor(z)
    targets = Tensor(onehot)
    for _ in range(epochs):
        logits = ad.add(ad.matmul(inputs, weight.tensor), bias.tensor)
        picked = ad.tensor_sum(ad.mul(logits, targets), axis=1)
        loss = ad.tensor_mean(ad.sub(ad.logsumexp(logits, axis=1), picked))
        ad.backward(loss)
        sgd_step(params, lr, momentum)
        zero_grads(params)
    return ProbeHead(weight.data.copy(), bias.data.copy(), mean, scale, list(classes))


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # (C, C) int64, rows = true class, columns = predicted
    classes: list

    def to_csv(self) -> str:
        lines = ["true\\pred," + ",".join(self.classes)]
        for i, cls in enumerate(self.classes):
            lines.append(cls + "," + ",".join(str(int(v)) for v in self.confusion[i]))
        return "\n".join(lines) + "\n"


def evaluate(head: ProbeHead, embeddings: np.ndarray, labels) -> EvalReport:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    pred = head.predict(np.asarray(embeddings, dtype=np.float64))
    n = len(head.classes)
    confusion = np.zeros((n, n), dtype=np.int64)
    for t, p in zip(y, pred):
        confusion[t, p] += 1
    accuracy = float((pred == y).mean()) if y.size else 0.0
    return EvalReport(accuracy, confusion, list(head.classes))


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def export_embeddings(path, data: SampleSet, embeddings: np.ndarray) -> None:
    """Tab-separated dump: path, label, then one column per dimension."""
    embeddings = np.asarray(embeddings)
    if embeddings.shape[0] != len(data):
        raise ValueError(f"{embeddings.shape[0]} embeddings for {len(data)} samples")
    d = embeddings.shape[1]
    header = "path\tlabel\t" + "\t".join(f"e{i}" for i in range(d))
    lines = [header]
    for i in range(len(data)):
        values = "\t".join(f"{v:.10g}" for v in embeddings[i])
        lines.append(f"{data.paths[i]}\t{data.classes[data.labels[i]]}\t{values}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def activation_map(model: Encoder, image_pixels: np.ndarray,
                   sizes_norm: np.ndarray) -> np.ndarray:
    """Channel-mean of the final feature map, min-max scaled and upsampled.

    A constant map (e.g. from a constant input) scales to all zeros rather
    than dividing by zero.
    """
    with ad.no_grad():
        feats = model.forward_features(Tensor(image_pixels[None, None]))
    fmap = feats.data[0].mean(axis=0)
    lo, hi = float(fmap.min()), float(fmap.max())
    if hi > lo:
        fmap = (fmap - lo) / (hi - lo)
    else:
        fmap = np.zeros_like(fmap)
    side = model.config.input_size
    return bilinear_resize(fmap, side, side)


def export_activation_map(path, model: Encoder, image_pixels: np.ndarray,
                          sizes_norm: np.ndarray) -> None:
    write_pgm(path, activation_map(model, image_pixels, sizes_norm))
