import numpy as np
import pytest

from app.core.exceptions import ContractError, DegenerateEmbeddingError, DimensionError
from app.core.ops import (
    MaxPool2,
    conv2d_forward,
    dense_forward,
    l2_normalize,
    maxpool2_forward,
    relu_forward,
    reshape,
    tensor_sum,
    weighted_sum,
)
from app.core.tensor import GradTape, Tensor, grad_check, grad_check_detailed


def naive_conv(x, k, b):
    bsz, c, h, w = x.shape
    f = k.shape[0]
    out = np.zeros((bsz, f, h, w))
    for n in range(bsz):
        for o in range(f):
            for i in range(h):
                for j in range(w):
                    acc = b[o]
                    for ch in range(c):
                        for di in range(3):
                            for dj in range(3):
                                y, z = i + di - 1, j + dj - 1
                                if 0 <= y < h and 0 <= z < w:
                                    acc += x[n, ch, y, z] * k[o, ch, di, dj]
                    out[n, o, i, j] = acc
    return out


# ============================================================================
# FORWARD
# ============================================================================

def test_dense_identity():
    """Identity weights pass the input through"""
    out = dense_forward(Tensor([[1, 2]]), Tensor(np.eye(2)), Tensor([0, 0]))
    np.testing.assert_array_equal(out.data, [[1, 2]])


def test_dense_zero_input_returns_bias(rng):
    out = dense_forward(Tensor(np.zeros((1, 3))), Tensor(rng.normal(size=(3, 2))), Tensor([5, 6]))
    np.testing.assert_array_equal(out.data, [[5, 6]])


def test_dense_matches_triple_loop(rng):
    x, w, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
    expected = np.zeros((4, 2))
    for i in range(4):
        for o in range(2):
            expected[i, o] = b[o] + sum(x[i, k] * w[k, o] for k in range(3))
    out = dense_forward(Tensor(x), Tensor(w), Tensor(b))
    np.testing.assert_allclose(out.data, expected, atol=1e-6)


def test_dense_shape_mismatch():
    with pytest.raises(DimensionError) as exc:
        dense_forward(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))
    assert "2×3" in exc.value.detail and "4×2" in exc.value.detail


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(1, 1, 3, 3))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    out = conv2d_forward(Tensor(x), Tensor(k), Tensor([0]))
    np.testing.assert_allclose(out.data, x.astype(np.float32))


def test_conv_padded_counting():
    out = conv2d_forward(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor([0]))
    assert out.data[0, 0, 1, 1] == 9
    assert out.data[0, 0, 0, 0] == 4
    assert out.data[0, 0, 2, 2] == 4
    assert out.data[0, 0, 0, 1] == 6


def test_conv_matches_naive_loops(rng):
    x, k, b = rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    out = conv2d_forward(Tensor(x), Tensor(k), Tensor(b))
    np.testing.assert_allclose(out.data, naive_conv(x, k, b), atol=1e-5)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        conv2d_forward(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor([0]))


def test_relu_values():
    np.testing.assert_array_equal(relu_forward(Tensor([-1, 0, 2])).data, [0, 0, 2])
    assert not relu_forward(Tensor(-np.ones((2, 3)))).data.any()


def test_maxpool_values():
    np.testing.assert_array_equal(maxpool2_forward(Tensor([[[[1, 2], [3, 4]]]])).data, [[[[4]]]])


def test_maxpool_constant_routes_to_first_cell():
    x = Tensor.parameter(np.full((1, 1, 4, 4), 2.0), name="x")
    tape = GradTape()
    out = maxpool2_forward(x, tape=tape)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 2.0))
    grads = tape.backward(tensor_sum(out, tape=tape), [x])
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1
    np.testing.assert_array_equal(grads[x][0, 0], expected)


def test_maxpool_matches_window_scan(rng):
    x = rng.normal(size=(1, 1, 4, 4)).astype(np.float32)
    expected = np.zeros((2, 2), dtype=np.float32)
    for i in range(2):
        for j in range(2):
            expected[i, j] = max(x[0, 0, 2 * i + a, 2 * j + c] for a in range(2) for c in range(2))
    np.testing.assert_array_equal(maxpool2_forward(Tensor(x)).data[0, 0], expected)


def test_maxpool_odd_dims():
    with pytest.raises(DimensionError):
        maxpool2_forward(Tensor(np.zeros((1, 1, 3, 4))))


def test_maxpool_backward_conserves_gradient(rng):
    x = Tensor.parameter(rng.normal(size=(2, 3, 6, 4)), name="x")
    weights = rng.normal(size=(2, 3, 3, 2))
    tape = GradTape()
    loss = weighted_sum(MaxPool2.apply(x, tape=tape), weights, tape=tape)
    grads = tape.backward(loss, [x])
    assert grads[x].sum() == pytest.approx(weights.sum(), rel=1e-5)


def test_l2_normalize_values():
    np.testing.assert_allclose(l2_normalize(Tensor([[3, 4]])).data, [[0.6, 0.8]])
    np.testing.assert_allclose(l2_normalize(Tensor([[0, 1, 0]])).data, [[0, 1, 0]])


def test_l2_normalize_row_norms(rng):
    out = l2_normalize(Tensor(rng.normal(size=(7, 5)) * 100))
    norms = np.linalg.norm(out.data, axis=1)
    assert np.all(np.abs(norms - 1) <= 1e-5)


def test_l2_normalize_zero_row():
    with pytest.raises(DegenerateEmbeddingError) as exc:
        l2_normalize(Tensor([[1, 0], [0, 0]]))
    assert exc.value.context["rows"] == [1]


def test_forward_is_deterministic(rng):
    x, k, b = rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    first = conv2d_forward(Tensor(x), Tensor(k), Tensor(b)).data
    second = conv2d_forward(Tensor(x), Tensor(k), Tensor(b)).data
    assert np.array_equal(first, second)


# ============================================================================
# BACKWARD
# ============================================================================

def test_backward_sum_gives_ones():
    w = Tensor.parameter(np.arange(6.0).reshape(2, 3), name="w")
    tape = GradTape()
    grads = tape.backward(tensor_sum(w, tape=tape), [w])
    np.testing.assert_array_equal(grads[w], np.ones((2, 3)))
    assert grads[w].shape == w.shape


def test_backward_unused_parameter_is_zero():
    w = Tensor.parameter(np.ones(3), name="w")
    unused = Tensor.parameter(np.ones((2, 2)), name="unused")
    tape = GradTape()
    grads = tape.backward(tensor_sum(w, tape=tape), [w, unused])
    np.testing.assert_array_equal(grads[unused], np.zeros((2, 2)))


def test_backward_needs_scalar():
    w = Tensor.parameter(np.ones((2, 2)), name="w")
    tape = GradTape()
    out = relu_forward(w, tape=tape)
    with pytest.raises(ContractError):
        tape.backward(out, [w])


def test_backward_visits_ops_in_reverse(rng):
    x = Tensor.parameter(rng.normal(size=(2, 3)), name="x")
    w = Tensor.parameter(rng.normal(size=(3, 4)), name="w")
    b = Tensor.parameter(np.zeros(4), name="b")
    tape = GradTape()
    loss = tensor_sum(relu_forward(l2_normalize(dense_forward(x, w, b, tape=tape), tape=tape), tape=tape), tape=tape)
    tape.backward(loss, [w])
    assert tape.backward_trace == list(reversed(tape.ops))


# ============================================================================
# FINITE DIFFERENCES
# ============================================================================

def test_grad_check_linear_is_exact(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    w = Tensor.parameter(rng.normal(size=(4, 2)), name="w")
    b = Tensor.parameter(rng.normal(size=2), name="b")
    c = rng.normal(size=(3, 2))
    error = grad_check(lambda tape: weighted_sum(dense_forward(x, w, b, tape=tape), c, tape=tape), [w, b])
    assert error < 1e-10


def test_grad_check_skips_relu_kink():
    x = Tensor.parameter(np.array([[0.0, 0.7, -0.4]]), name="x")
    result = grad_check_detailed(lambda tape: tensor_sum(relu_forward(x, tape=tape), tape=tape), [x])
    assert result.skipped == 1
    assert result.checked == 2
    assert result.max_rel_error < 1e-10


def test_grad_check_restores_dtype(rng):
    w = Tensor.parameter(rng.normal(size=(2, 2)), name="w")
    grad_check(lambda tape: tensor_sum(relu_forward(w, tape=tape), tape=tape), [w])
    assert w.data.dtype == np.float32


@pytest.mark.parametrize("seed", range(10))
def test_primitive_gradients_match_finite_differences(seed):
    """Every layer primitive, one random shape per seed"""
    r = np.random.default_rng(seed)
    bsz, c, f = int(r.integers(1, 3)), int(r.integers(1, 3)), int(r.integers(1, 3))
    side = 2 * int(r.integers(2, 4))
    x = Tensor.parameter(r.normal(size=(bsz, c, side, side)), name="x")
    k = Tensor.parameter(r.normal(size=(f, c, 3, 3)), name="k")
    kb = Tensor.parameter(r.normal(size=f), name="kb")
    flat = f * (side // 2) ** 2
    w = Tensor.parameter(r.normal(size=(flat, 3)), name="w")
    b = Tensor.parameter(r.normal(size=3), name="b")
    c_out = r.normal(size=(bsz, 3))

    def full(tape):
        h = conv2d_forward(x, k, kb, tape=tape)
        h = maxpool2_forward(relu_forward(h, tape=tape), tape=tape)
        h = reshape(h, (bsz, -1), tape=tape)
        h = l2_normalize(dense_forward(h, w, b, tape=tape), tape=tape)
        return weighted_sum(h, c_out, tape=tape)

    result = grad_check_detailed(full, [x, k, kb, w, b])
    assert result.checked > 0
    assert result.max_rel_error < 1e-4


def test_l2_normalize_gradient(rng):
    x = Tensor.parameter(rng.normal(size=(5, 8)), name="x")
    c = rng.normal(size=(5, 8))
    assert grad_check(lambda tape: weighted_sum(l2_normalize(x, tape=tape), c, tape=tape), [x]) < 1e-4


def test_relu_gradient_is_step(rng):
    x = Tensor.parameter(np.array([[1.5, -2.0, 0.3, -0.1]]), name="x")
    tape = GradTape()
    grads = tape.backward(tensor_sum(relu_forward(x, tape=tape), tape=tape), [x])
    np.testing.assert_array_equal(grads[x], [[1, 0, 1, 0]])
    assert grad_check(lambda t: tensor_sum(relu_forward(x, tape=t), tape=t), [x]) < 1e-8
