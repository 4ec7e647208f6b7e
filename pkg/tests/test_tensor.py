"""Per-op gradient checks and tape semantics for the array substrate."""

import numpy as np
import pytest

from helpers import assert_grads_close
from phredgan import tensor as T
from phredgan.rng import RandomSource
from phredgan.tensor import ShapeError, Tensor


def leaf(shape, seed=0, scale=0.5):
    rng = RandomSource(seed)
    return Tensor(rng.uniform_range(shape, -scale, scale), requires_grad=True)


# ---------------------------------------------------------------------------
# finite differences, one op at a time


def test_grad_add_broadcast():
    a, b = leaf((3, 4), 1), leaf((4,), 2)
    assert_grads_close(lambda: T.reduce_sum(T.mul(T.add(a, b), T.add(a, b))), {"a": a, "b": b})


def test_grad_sub():
    a, b = leaf((2, 5), 3), leaf((2, 5), 4)
    assert_grads_close(lambda: T.reduce_sum(T.mul(T.sub(a, b), T.sub(a, b))), {"a": a, "b": b})


def test_grad_mul_broadcast_scalar_axis():
    a, b = leaf((4, 3), 5), leaf((4, 1), 6)
    assert_grads_close(lambda: T.reduce_sum(T.mul(a, b)), {"a": a, "b": b})


def test_grad_neg():
    a = leaf((7,), 7)
    assert_grads_close(lambda: T.reduce_sum(T.mul(T.neg(a), a)), {"a": a})


def test_grad_matmul():
    a, b = leaf((3, 4), 8), leaf((4, 2), 9)
    assert_grads_close(lambda: T.reduce_sum(T.tanh(T.matmul(a, b))), {"a": a, "b": b})


def test_grad_concat_and_slice():
    a, b = leaf((2, 3), 10), leaf((2, 2), 11)
    def fn():
        c = T.concat([a, b], axis=1)
        return T.reduce_sum(T.mul(T.slice_axis(c, 1, 1, 4), T.slice_axis(c, 1, 0, 3)))
    assert_grads_close(fn, {"a": a, "b": b})


def test_grad_stack():
    a, b = leaf((3,), 12), leaf((3,), 13)
    assert_grads_close(lambda: T.reduce_sum(T.tanh(T.stack([a, b], axis=0))), {"a": a, "b": b})


def test_grad_reshape():
    a = leaf((2, 6), 14)
    assert_grads_close(lambda: T.reduce_sum(T.mul(T.reshape(a, (3, 4)), T.reshape(a, (3, 4)))),
                       {"a": a})


def test_grad_tanh_sigmoid_relu_log():
    a = leaf((4, 4), 15)
    assert_grads_close(lambda: T.reduce_sum(T.tanh(a)), {"a": a})
    assert_grads_close(lambda: T.reduce_sum(T.sigmoid(a)), {"a": a})
    b = leaf((4, 4), 16)
    # keep entries away from the relu kink where FD is one-sided
    b.data = b.data + np.sign(b.data) * 0.1
    assert_grads_close(lambda: T.reduce_sum(T.relu(b)), {"b": b})
    c = Tensor(RandomSource(17).uniform_range((5, 3), 0.5, 2.0), requires_grad=True)
    assert_grads_close(lambda: T.reduce_sum(T.log(c)), {"c": c})


def test_grad_clip_interior_only():
    a = Tensor(np.array([-2.0, -0.5, 0.0, 0.5, 2.0], dtype=np.float32), requires_grad=True)
    with T.tape():
        out = T.reduce_sum(T.clip(a, -1.0, 1.0))
        T.backward(out)
    assert np.array_equal(a.grad, [0.0, 1.0, 1.0, 1.0, 0.0])


def test_grad_softmax():
    a = leaf((3, 5), 18)
    w = Tensor(RandomSource(19).uniform_range((3, 5), -1, 1))
    assert_grads_close(lambda: T.reduce_sum(T.mul(T.softmax(a), w)), {"a": a})


def test_grad_embed():
    table = leaf((6, 3), 20)
    ids = np.array([[0, 2], [5, 2]], dtype=np.int32)
    assert_grads_close(lambda: T.reduce_sum(T.tanh(T.embed(table, ids))), {"table": table})


def test_grad_cross_entropy():
    logits = leaf((4, 5), 21, scale=1.5)
    targets = np.array([0, 3, 4, 1])
    assert_grads_close(lambda: T.reduce_mean(T.cross_entropy_with_logits(logits, targets)),
                       {"logits": logits})


def test_grad_reductions_with_axis():
    a = leaf((3, 4), 22)
    assert_grads_close(lambda: T.reduce_sum(T.tanh(T.reduce_sum(a, axis=0))), {"a": a})
    assert_grads_close(lambda: T.reduce_sum(T.tanh(T.reduce_mean(a, axis=1))), {"a": a})


# ---------------------------------------------------------------------------
# op semantics


def test_softmax_uniform_rows():
    y = T.softmax(Tensor(np.zeros((2, 3), dtype=np.float32)))
    assert np.allclose(y.data, 1 / 3, atol=1e-7)


def test_cross_entropy_uniform_is_log_v():
    logits = Tensor(np.zeros((3, 4), dtype=np.float32))
    out = T.cross_entropy_with_logits(logits, np.array([0, 1, 3]))
    assert np.allclose(out.data, np.log(4.0), atol=1e-6)


def test_sigmoid_extremes_are_finite_and_saturate():
    y = T.sigmoid(Tensor(np.array([-100.0, 0.0, 100.0], dtype=np.float32)))
    assert np.all(np.isfinite(y.data))
    assert y.data[0] == pytest.approx(0.0, abs=1e-6)
    assert y.data[1] == pytest.approx(0.5)
    assert y.data[2] == pytest.approx(1.0, abs=1e-6)


def test_matmul_rejects_bad_shapes_with_both_named():
    with pytest.raises(ShapeError) as exc:
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    msg = str(exc.value)
    assert "matmul" in msg and "(2, 3)" in msg and "(4, 2)" in msg


def test_add_rejects_nonbroadcastable():
    with pytest.raises(ShapeError, match="add"):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_embed_rejects_float_ids_and_out_of_range():
    table = Tensor(np.zeros((4, 2), dtype=np.float32))
    with pytest.raises(ShapeError):
        T.embed(table, np.array([0.5]))
    with pytest.raises(ShapeError):
        T.embed(table, np.array([4]))


def test_division_by_tensor_rejected():
    a, b = Tensor(np.ones(3)), Tensor(np.ones(3))
    with pytest.raises(TypeError):
        a / b
    assert np.allclose((a / 2.0).data, 0.5)


# ---------------------------------------------------------------------------
# tape semantics


def test_no_tape_records_nothing():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    out = T.tanh(T.mul(a, a))
    assert out.requires_grad is False and out.grad is None


def test_ops_without_grad_inputs_not_recorded():
    a = Tensor(np.ones((2, 2)))  # requires_grad defaults False
    with T.tape() as tp:
        T.tanh(T.mul(a, a))
        assert len(tp) == 0


def test_backward_accumulates_through_reused_tensor():
    a = Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
    with T.tape():
        out = T.reduce_sum(T.add(T.mul(a, a), a))  # d/da (a^2 + a) = 2a + 1
        T.backward(out)
    assert a.grad == pytest.approx([5.0])


def test_double_backward_rejected():
    a = Tensor(np.ones(2), requires_grad=True)
    with T.tape():
        out = T.reduce_sum(a)
        T.backward(out)
        with pytest.raises(RuntimeError, match="tape"):
            T.backward(out)


def test_backward_without_tape_rejected():
    a = Tensor(np.ones(1), requires_grad=True)
    out = T.reduce_sum(a)
    with pytest.raises(RuntimeError, match="tape"):
        T.backward(out)


def test_backward_rejects_nonscalar_and_unrecorded_loss():
    a = Tensor(np.ones(3), requires_grad=True)
    with T.tape():
        vec = T.mul(a, a)
        with pytest.raises(ShapeError):
            T.backward(vec)
        T.backward(T.reduce_sum(vec))
    with T.tape():
        T.mul(a, a)
        plain = Tensor(np.float32(1.0))  # never recorded
        with pytest.raises(RuntimeError, match="recorded"):
            T.backward(plain)


def test_forward_values_identical_with_and_without_tape():
    a = Tensor(RandomSource(30).uniform_range((4, 4), -1, 1), requires_grad=True)
    plain = T.softmax(T.matmul(a, a)).data.copy()
    with T.tape():
        taped = T.softmax(T.matmul(a, a)).data.copy()
    assert np.array_equal(plain, taped)


def test_random_normal_is_leaf_and_deterministic():
    rng1, rng2 = RandomSource(8), RandomSource(8)
    with T.tape() as tp:
        z1 = T.random_normal((3, 2), 1.0, rng1)
        assert len(tp) == 0 and z1.requires_grad is False
    z2 = T.random_normal((3, 2), 1.0, rng2)
    assert np.array_equal(z1.data, z2.data)
