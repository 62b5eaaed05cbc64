"""Engine tests: forward oracles in plain numpy, gradients vs central
finite differences computed locally (independent of msnet.gradcheck)."""
import numpy as np
import pytest

import msnet.autodiff as ad
from msnet.autodiff import Tensor, backward, no_grad
from msnet.errors import DimensionError, NumericError


def fd_grad(fn, arrays, step=1e-6):
    """Central-difference gradients of scalar fn(*arrays) wrt each array."""
    grads = []
    for k, base in enumerate(arrays):
        base = np.asarray(base, dtype=np.float64)
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        bflat = base.reshape(-1)
        for i in range(base.size):
            orig = bflat[i]
            bflat[i] = orig + step
            hi = fn(*arrays)
            bflat[i] = orig - step
            lo = fn(*arrays)
            bflat[i] = orig
            flat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def check_grads(build, arrays, step=1e-6, tol=1e-6):
    """build(*tensors) -> scalar Tensor; compares backward to fd_grad."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    backward(loss)

    def scalar(*arrs):
        with no_grad():
            return build(*[Tensor(a) for a in arrs]).item()

    numeric = fd_grad(scalar, [t.data for t in tensors], step=step)
    for t, n in zip(tensors, numeric):
        err = np.max(np.abs(t.grad - n) / np.maximum(1.0, np.abs(n)))
        assert err < tol, f"gradient mismatch: {err:.3e}"


# ---------------------------------------------------------------------------
# tensor basics
# ---------------------------------------------------------------------------


def test_tensor_is_float64():
    t = Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64
    assert t.shape == (2, 2)
    assert not t.requires_grad


def test_tensor_rejects_non_finite():
    with pytest.raises(NumericError):
        Tensor([1.0, np.nan])
    with pytest.raises(NumericError):
        Tensor(np.inf)


def test_item_requires_scalar():
    with pytest.raises(DimensionError):
        Tensor([1.0, 2.0]).item()
    assert Tensor([[3.5]]).item() == 3.5


def test_numpy_returns_copy():
    t = Tensor([1.0, 2.0])
    arr = t.numpy()
    arr[0] = 99.0
    assert t.data[0] == 1.0


# ---------------------------------------------------------------------------
# forward oracles
# ---------------------------------------------------------------------------


def test_elementwise_forward_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    assert np.array_equal(ad.add(Tensor(a), Tensor(b)).data, a + b)
    assert np.array_equal(ad.sub(Tensor(a), Tensor(b)).data, a - b)
    assert np.array_equal(ad.mul(Tensor(a), Tensor(b)).data, a * b)
    assert np.array_equal(ad.neg(Tensor(a)).data, -a)
    assert np.array_equal(ad.mul_scalar(Tensor(a), 2.5).data, 2.5 * a)
    assert np.array_equal(ad.relu(Tensor(a)).data, np.maximum(a, 0.0))
    assert np.allclose(ad.sin(Tensor(a)).data, np.sin(a), rtol=0, atol=0)
    assert np.allclose(ad.cos(Tensor(a)).data, np.cos(a), rtol=0, atol=0)
    assert np.array_equal(ad.exp(Tensor(a)).data, np.exp(a))
    assert np.array_equal(ad.log(Tensor(np.abs(a) + 1.0)).data, np.log(np.abs(a) + 1.0))


def test_broadcast_add_shapes():
    a = np.ones((3, 1))
    b = np.ones((1, 4))
    out = ad.add(Tensor(a), Tensor(b))
    assert out.shape == (3, 4)
    assert np.array_equal(out.data, np.full((3, 4), 2.0))


@pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True), ((0, 1), False)])
def test_sum_and_mean_match_numpy(axis, keepdims):
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 5))
    s = ad.tensor_sum(Tensor(a), axis=axis, keepdims=keepdims)
    m = ad.tensor_mean(Tensor(a), axis=axis, keepdims=keepdims)
    assert np.allclose(s.data, a.sum(axis=axis, keepdims=keepdims), atol=1e-15)
    assert np.allclose(m.data, a.mean(axis=axis, keepdims=keepdims), atol=1e-15)


def test_logsumexp_matches_numpy_and_is_stable():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(3, 6))
    got = ad.logsumexp(Tensor(a), axis=1).data
    want = np.log(np.exp(a).sum(axis=1))
    assert np.allclose(got, want, atol=1e-12)
    # values at +-1000 would overflow a naive implementation
    big = np.array([[1000.0, 999.0], [-1000.0, -1001.0]])
    out = ad.logsumexp(Tensor(big), axis=1).data
    assert np.all(np.isfinite(out))
    assert abs(out[0] - (1000.0 + np.log1p(np.exp(-1.0)))) < 1e-12


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 7)) * 3.0
    p = ad.softmax(Tensor(a), axis=1).data
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    q = ad.softmax(Tensor(a + 100.0), axis=1).data
    assert np.allclose(p, q, atol=1e-12)


def test_matmul_variants_match_numpy():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 5))
    v = rng.normal(size=4)
    u = rng.normal(size=3)
    assert np.allclose(ad.matmul(Tensor(a), Tensor(b)).data, a @ b, atol=1e-14)
    assert np.allclose(ad.matmul(Tensor(a), Tensor(v)).data, a @ v, atol=1e-14)
    assert np.allclose(ad.matmul(Tensor(u), Tensor(a)).data, u @ a, atol=1e-14)
    assert abs(ad.dot(Tensor(v), Tensor(v)).item() - v @ v) < 1e-14


def test_bmm_matches_loop():
    rng = np.random.default_rng(5)
    m = rng.normal(size=(6, 3, 4))
    x = rng.normal(size=(6, 4))
    got = ad.bmm(Tensor(m), Tensor(x)).data
    want = np.stack([m[i] @ x[i] for i in range(6)])
    assert np.allclose(got, want, atol=1e-14)


def test_layer_norm_zero_input_maps_to_zero():
    out = ad.layer_norm(Tensor(np.zeros((2, 8)))).data
    assert np.array_equal(out, np.zeros((2, 8)))


def test_layer_norm_normalizes_requested_axes():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(4, 16)) * 5.0 + 3.0
    out = ad.layer_norm(Tensor(a), axes=-1).data
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(out.std(axis=-1), 1.0, atol=1e-3)  # eps shifts variance slightly
    full = ad.layer_norm(Tensor(a)).data  # default: all axes
    assert abs(full.mean()) < 1e-12
    assert abs(full.std() - 1.0) < 1e-3


def test_l2_normalize_unit_rows():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(5, 8))
    out = ad.l2_normalize(Tensor(a)).data
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


def test_l2_normalize_rejects_near_zero():
    with pytest.raises(NumericError):
        ad.l2_normalize(Tensor(np.zeros((1, 4))))


def test_reshape_concat_narrow_take_roundtrip():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(2, 6))
    r = ad.reshape(Tensor(a), (3, 4))
    assert np.array_equal(r.data, a.reshape(3, 4))
    c = ad.concat([Tensor(a), Tensor(a)], axis=0)
    assert c.shape == (4, 6)
    n = ad.narrow(Tensor(a), 1, 2, 3)
    assert np.array_equal(n.data, a[:, 2:5])
    t = ad.take(Tensor(a[0]), 1)  # scalar pick from a 1-D tensor
    assert t.item() == a[0, 1]
    g = ad.gather_rows(Tensor(a), [1, 0, 1])
    assert np.array_equal(g.data, a[[1, 0, 1]])


def test_shift_contract_example():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ad.shift(a, 1, 0)
    assert np.array_equal(out.data, [[3.0, 4.0], [0.0, 0.0]])
    back = ad.shift(a, -1, 0)
    assert np.array_equal(back.data, [[0.0, 0.0], [1.0, 2.0]])


def test_global_avg_pool():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 3, 4, 4))
    out = ad.global_avg_pool(Tensor(x)).data
    assert np.allclose(out, x.mean(axis=(2, 3)), atol=1e-14)


# ---------------------------------------------------------------------------
# conv2d vs explicit loops
# ---------------------------------------------------------------------------


def conv_reference(x, w, stride, padding):
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for b in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[b, o, i, j] = np.sum(patch * w[o])
    return out


@pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (3, 2), (5, 1)])
def test_conv2d_matches_loop_reference(k, stride):
    rng = np.random.default_rng(10 + k + stride)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, k, k))
    pad = k // 2
    got = ad.conv2d(Tensor(x), Tensor(w), stride=stride).data
    want = conv_reference(x, w, stride, pad)
    assert np.allclose(got, want, atol=1e-12)


def test_conv2d_gradients():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    check_grads(lambda xt, wt: ad.tensor_sum(ad.mul(ad.conv2d(xt, wt, stride=2), ad.conv2d(xt, wt, stride=2))), [x, w])


# ---------------------------------------------------------------------------
# window attention vs brute force
# ---------------------------------------------------------------------------


def attention_reference(q, k, v, heads, window):
    n, c, h, w = q.shape
    d = c // heads
    r = window // 2
    scale = 1.0 / np.sqrt(d)
    out = np.zeros_like(q)
    for b in range(n):
        for m in range(heads):
            qs = q[b, m * d : (m + 1) * d]
            ks = k[b, m * d : (m + 1) * d]
            vs = v[b, m * d : (m + 1) * d]
            for i in range(h):
                for j in range(w):
                    logits, vals = [], []
                    for di in range(-r, r + 1):
                        for dj in range(-r, r + 1):
                            ii, jj = i + di, j + dj
                            if 0 <= ii < h and 0 <= jj < w:
                                logits.append(scale * float(qs[:, i, j] @ ks[:, ii, jj]))
                                vals.append(vs[:, ii, jj])
                    logits = np.asarray(logits)
                    p = np.exp(logits - logits.max())
                    p /= p.sum()
                    out[b, m * d : (m + 1) * d, i, j] = np.sum(p[:, None] * np.asarray(vals), axis=0)
    return out


@pytest.mark.parametrize("heads,window", [(1, 3), (2, 3), (4, 3), (2, 5)])
def test_window_attention_matches_brute_force(heads, window):
    rng = np.random.default_rng(20 + heads + window)
    q, k, v = (rng.normal(size=(2, 8, 5, 5)) for _ in range(3))
    got = ad.window_attention(Tensor(q), Tensor(k), Tensor(v), heads, window).data
    want = attention_reference(q, k, v, heads, window)
    assert np.allclose(got, want, atol=1e-12)


def test_window_attention_weights_sum_to_one():
    rng = np.random.default_rng(30)
    q, k, v = (rng.normal(size=(4, 4, 4)) for _ in range(3))
    out, weights = ad.window_attention(Tensor(q), Tensor(k), Tensor(v), 2, 3,
                                       return_weights=True)
    sums = weights.sum(axis=(-2, -1))
    assert np.allclose(sums, 1.0, atol=1e-12)


def test_window_attention_gradients():
    rng = np.random.default_rng(31)
    q, k, v = (rng.normal(size=(4, 4, 4)) * 0.5 for _ in range(3))
    check_grads(
        lambda qt, kt, vt: ad.tensor_sum(
            ad.mul(ad.window_attention(qt, kt, vt, 2, 3),
                   ad.window_attention(qt, kt, vt, 2, 3))),
        [q, k, v], tol=1e-5)


# ---------------------------------------------------------------------------
# gradients of the remaining primitives
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_elementwise_gradients(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    check_grads(lambda x, y: ad.tensor_sum(ad.mul(ad.add(x, y), ad.sub(x, y))), [a, b])
    check_grads(lambda x: ad.tensor_sum(ad.mul(ad.sin(x), ad.cos(x))), [a])
    check_grads(lambda x: ad.tensor_sum(ad.exp(ad.mul_scalar(x, 0.3))), [a])
    check_grads(lambda x: ad.tensor_sum(ad.log(ad.add(ad.mul(x, x), Tensor(np.ones_like(a))))), [a])


def test_relu_gradient_away_from_kink():
    a = np.array([[1.5, -2.0], [0.5, -0.25]])
    check_grads(lambda x: ad.tensor_sum(ad.mul(ad.relu(x), ad.relu(x))), [a])


def test_broadcast_gradients():
    rng = np.random.default_rng(40)
    a = rng.normal(size=(3, 1))
    b = rng.normal(size=(1, 4))
    check_grads(lambda x, y: ad.tensor_sum(ad.mul(ad.add(x, y), ad.add(x, y))), [a, b])


def test_matmul_gradients():
    rng = np.random.default_rng(41)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    v = rng.normal(size=4)
    check_grads(lambda x, y: ad.tensor_sum(ad.mul(ad.matmul(x, y), ad.matmul(x, y))), [a, b])
    check_grads(lambda x, y: ad.tensor_sum(ad.mul(ad.matmul(x, y), ad.matmul(x, y))), [a, v])


def test_bmm_gradients():
    rng = np.random.default_rng(42)
    m = rng.normal(size=(3, 2, 4))
    x = rng.normal(size=(3, 4))
    check_grads(lambda a, b: ad.tensor_sum(ad.mul(ad.bmm(a, b), ad.bmm(a, b))), [m, x])


def test_reduction_gradients():
    rng = np.random.default_rng(43)
    a = rng.normal(size=(4, 5))
    check_grads(lambda x: ad.mul_scalar(ad.tensor_mean(ad.mul(x, x)), 3.0), [a])
    check_grads(lambda x: ad.tensor_sum(ad.mul(ad.tensor_sum(x, axis=0), ad.tensor_sum(x, axis=0))), [a])
    check_grads(lambda x: ad.tensor_sum(ad.logsumexp(x, axis=1)), [a])


def test_normalization_gradients():
    rng = np.random.default_rng(44)
    a = rng.normal(size=(3, 8)) + 0.5
    w = rng.normal(size=(3, 8))  # fixed weighting, so the probed fn is pure
    check_grads(lambda x: ad.tensor_sum(ad.mul(ad.layer_norm(x), ad.layer_norm(x))), [a], tol=1e-5)
    check_grads(lambda x: ad.tensor_sum(ad.mul(ad.softmax(x), ad.softmax(x))), [a])
    check_grads(lambda x: ad.tensor_sum(ad.mul(ad.l2_normalize(x), Tensor(w))), [a])


def test_structural_gradients():
    rng = np.random.default_rng(45)
    a = rng.normal(size=(4, 6))
    check_grads(lambda x: ad.tensor_sum(ad.mul(ad.reshape(x, (2, 12)), ad.reshape(x, (2, 12)))), [a])
    check_grads(lambda x: ad.tensor_sum(ad.mul(ad.narrow(x, 1, 1, 3), ad.narrow(x, 1, 1, 3))), [a])
    check_grads(lambda x: ad.mul(ad.take(x, 2), ad.take(x, 2)), [a[0]])
    check_grads(lambda x: ad.tensor_sum(ad.mul(ad.gather_rows(x, [0, 2, 2]), ad.gather_rows(x, [0, 2, 2]))), [a])
    check_grads(lambda x: ad.tensor_sum(ad.mul(ad.shift(x, 1, -2), ad.shift(x, 1, -2))), [a])
    check_grads(lambda x, y: ad.tensor_sum(ad.mul(ad.concat([x, y], axis=1), ad.concat([x, y], axis=1))),
                [a, rng.normal(size=(4, 2))])


# ---------------------------------------------------------------------------
# engine mechanics
# ---------------------------------------------------------------------------


def test_diamond_graph_accumulates_both_paths():
    # loss = sum((a + a) * a) = 2 * sum(a^2), so dloss/da = 4a exactly
    a = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    loss = ad.tensor_sum(ad.mul(ad.add(a, a), a))
    backward(loss)
    assert np.array_equal(a.grad, 4.0 * a.data)


def test_repeated_backward_doubles_exactly():
    rng = np.random.default_rng(50)
    a = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    loss = ad.tensor_sum(ad.mul(a, a))
    backward(loss)
    once = a.grad.copy()
    backward(loss)
    # a + a is exact in binary floating point
    assert np.array_equal(a.grad, 2.0 * once)


def test_backward_requires_scalar():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(DimensionError):
        backward(ad.mul(a, a))


def test_no_grad_blocks_graph_recording():
    a = Tensor(np.ones(4), requires_grad=True)
    with no_grad():
        out = ad.mul(a, a)
    assert not out.requires_grad
    loss = ad.tensor_sum(ad.mul(a, a))
    with no_grad():
        pass
    backward(loss)
    assert a.grad is not None


def test_grad_none_until_backward():
    a = Tensor(np.ones(3), requires_grad=True)
    out = ad.tensor_sum(a)
    assert a.grad is None
    backward(out)
    assert np.array_equal(a.grad, np.ones(3))


def test_non_finite_op_output_raises():
    a = Tensor(np.array([1000.0]), requires_grad=True)
    with pytest.raises(NumericError):
        ad.exp(a)  # overflows to inf
    with pytest.raises(NumericError):
        ad.log(Tensor(np.array([-1.0])))


def test_operator_sugar_matches_functions():
    rng = np.random.default_rng(51)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    ta, tb = Tensor(a), Tensor(b)
    assert np.array_equal((ta + tb).data, a + b)
    assert np.array_equal((ta - tb).data, a - b)
    assert np.array_equal((ta * tb).data, a * b)
    assert np.array_equal((-ta).data, -a)
    m = rng.normal(size=(3, 4))
    assert np.allclose((ta @ Tensor(m)).data, a @ m, atol=1e-14)
