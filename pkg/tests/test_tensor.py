import numpy as np
import pytest

from confusionkit.errors import ParameterError, ShapeError, UsageError
from confusionkit.numerics import (
    GradRecord,
    Tensor,
    backward,
    clamp_min,
    concat,
    finite_difference_check,
    matmul,
    no_grad,
    tensor_mean,
    tensor_sum,
)


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = matmul(Tensor(np.eye(2)), Tensor(a))
    assert np.array_equal(out.data, a)


def test_matmul_hand_case():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    assert np.array_equal(out.data, np.array([[17.0], [39.0]]))


def test_matmul_output_shape():
    out = matmul(Tensor(np.zeros((3, 5))), Tensor(np.zeros((5, 2))))
    assert out.shape == (3, 2)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        matmul(Tensor(np.zeros((3, 5))), Tensor(np.zeros((4, 2))))
    assert "(3, 5)" in str(err.value) and "(4, 2)" in str(err.value)


def test_linear_gradient_is_exact():
    rec = GradRecord()
    w = rec.parameter("w", np.array([1.0, -2.0, 0.5]))
    x = np.array([3.0, 4.0, 5.0])
    grads = backward(tensor_sum(w * x), rec)
    assert np.array_equal(grads["w"], x)


def test_squared_norm_gradient():
    rec = GradRecord()
    w = rec.parameter("w", np.array([1.5, -0.3, 2.0]))
    report = finite_difference_check(lambda: tensor_sum(w * w), rec)
    assert report.ok
    grads = backward(tensor_sum(w * w), rec)
    np.testing.assert_allclose(grads["w"], 2 * w.data, rtol=1e-12)


def test_unused_parameter_gets_exact_zero_gradient():
    rec = GradRecord()
    used = rec.parameter("used", np.array([2.0]))
    unused = rec.parameter("unused", np.ones((3, 2)))
    grads = backward(tensor_sum(used * used), rec)
    assert np.array_equal(grads["unused"], np.zeros((3, 2)))
    assert grads["used"][0] == 4.0


def test_every_registered_parameter_gets_a_gradient_of_its_shape():
    rec = GradRecord()
    a = rec.parameter("a", np.ones((2, 3)))
    rec.parameter("b", np.ones(7))
    grads = backward(tensor_sum(a), rec)
    assert set(grads) == {"a", "b"}
    assert grads["a"].shape == (2, 3)
    assert grads["b"].shape == (7,)


def test_frozen_parameter_receives_no_updates():
    rec = GradRecord()
    w = rec.parameter("w", np.array([1.0, 2.0]))
    rec.freeze("w")
    grads = backward(tensor_sum(Tensor([1.0, 1.0]) * w), rec)
    assert np.array_equal(grads["w"], np.zeros(2))
    assert ("w", w) not in rec.trainable_items()


def test_backward_rejects_non_scalar():
    rec = GradRecord()
    w = rec.parameter("w", np.ones(3))
    with pytest.raises(UsageError):
        backward(w * 2.0, rec)


def test_no_grad_suppresses_graph():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = tensor_sum(w * w)
    assert out._backward is None and not out.requires_grad


@pytest.mark.parametrize("seed", range(20))
def test_broadcast_ops_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    rec = GradRecord()
    a = rec.parameter("a", rng.standard_normal((3, 4)))
    b = rec.parameter("b", rng.standard_normal((1, 4)))
    c = rec.parameter("c", rng.standard_normal((3, 1)))

    def fn():
        mixed = (a + b) * c - a / (clamp_min(c * c, 0.1) + 1.0)
        return tensor_sum(mixed * mixed) + tensor_mean(concat([a, a], axis=0))

    assert finite_difference_check(fn, rec).ok


def test_narrow_and_concat_roundtrip_gradient():
    rec = GradRecord()
    a = rec.parameter("a", np.arange(12, dtype=float).reshape(3, 4))
    out = concat([a.narrow(0, 0, 1), a.narrow(0, 1, 2)], axis=0)
    grads = backward(tensor_sum(out * 2.0), rec)
    assert np.array_equal(grads["a"], np.full((3, 4), 2.0))


def test_gradcheck_rejects_bad_step():
    rec = GradRecord()
    rec.parameter("w", np.ones(2))
    with pytest.raises(ParameterError):
        finite_difference_check(lambda: Tensor(0.0), rec, step=0.0)


def test_fd_check_constant_function_zero_gradients():
    rec = GradRecord()
    rec.parameter("w", np.ones(4))
    report = finite_difference_check(lambda: Tensor(3.0), rec)
    assert report.ok
    assert report.max_relative_error == 0.0


def test_fd_check_linear_function():
    rec = GradRecord()
    w = rec.parameter("w", np.array([2.0]))
    report = finite_difference_check(lambda: tensor_sum(w * 3.0), rec)
    assert report.ok
    grads = backward(tensor_sum(w * 3.0), rec)
    assert grads["w"][0] == 3.0
