"""Central-difference verification of analytic gradients.

A fragment is a zero-argument callable that rebuilds its graph on every
invocation and returns a scalar loss tensor. The checker perturbs each
coordinate of the watched leaves in place, so the callable must read the
leaf tensors afresh each time (closures over Tensor objects do).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward
from .errors import StateError
from .optim import Parameter


@dataclass
class GradCheckResult:
    max_rel_error: float
    tol: float
    step: float
    n_coordinates: int
    passed: bool
    worst_leaf: str = ""
    worst_index: tuple = ()
    per_leaf: dict = field(default_factory=dict)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"gradcheck {status}: max rel err {self.max_rel_error:.3e} "
            f"(tol {self.tol:.1e}, h {self.step:.1e}, {self.n_coordinates} coords, "
            f"worst {self.worst_leaf}{list(self.worst_index)})"
        )


def _as_leaves(wrt):
    leaves = []
    for i, item in enumerate(wrt):
        if isinstance(item, Parameter):
            leaves.append((item.name, item.tensor))
        elif isinstance(item, Tensor):
            leaves.append((f"leaf{i}", item))
        else:
            name, t = item
            leaves.append((str(name), t.tensor if isinstance(t, Parameter) else t))
    if not leaves:
        raise ValueError("grad_check needs at least one leaf to differentiate")
    return leaves


def grad_check(fn, wrt, step: float = 1e-5, tol: float = 1e-5) -> GradCheckResult:
    """Compare backward() gradients of fn() against central differences.

    wrt: iterable of Parameters, Tensors, or (name, tensor) pairs. Every
    leaf must have requires_grad set. Raises StateError when two evaluations
    of fn() disagree, which indicates unseeded randomness inside the fragment.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step must lie in [1e-7, 1e-3], got {step}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    leaves = _as_leaves(wrt)
    for name, t in leaves:
        if not t.requires_grad:
            raise ValueError(f"leaf {name} does not require gradients")

    first = fn()
    if first.data.size != 1:
        raise ValueError(f"fragment must return a scalar, got shape {first.shape}")
    second = fn()
    if first.item() != second.item():
        raise StateError(
            "fragment is not deterministic between evaluations; "
            "seed any randomness before running grad_check"
        )

    for _, t in leaves:
        t.grad = None
        if not t.data.flags["C_CONTIGUOUS"]:
            t.data = np.ascontiguousarray(t.data)
    loss = fn()
    backward(loss)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for name, t in leaves}

    result = GradCheckResult(max_rel_error=0.0, tol=tol, step=step, n_coordinates=0, passed=True)
    for name, t in leaves:
        flat = t.data.reshape(-1)
        grads = analytic[name].reshape(-1)
        leaf_worst = 0.0
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = fn().item()
            flat[i] = keep - step
            down = fn().item()
            flat[i] = keep
            numeric = (up - down) / (2.0 * step)
            a = grads[i]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            result.n_coordinates += 1
            leaf_worst = max(leaf_worst, rel)
            if rel > result.max_rel_error:
                result.max_rel_error = rel
                result.worst_leaf = name
                result.worst_index = np.unravel_index(i, t.data.shape)
        result.per_leaf[name] = leaf_worst
    result.passed = result.max_rel_error <= tol
    return result
