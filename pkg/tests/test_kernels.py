import numpy as np
import pytest

from confusionkit.errors import (
    ConfigurationError,
    DegenerateInputError,
    ParameterError,
    ShapeError,
)
from confusionkit.numerics import (
    AttentionWeights,
    GradRecord,
    Tensor,
    cosine_similarity,
    depthwise_conv2d,
    finite_difference_check,
    l2_normalize,
    layer_norm,
    multi_head_attention,
    reshape,
    softmax,
    softmax_rows,
    tensor_sum,
    top_k,
)


# -- softmax -----------------------------------------------------------------


def test_softmax_symmetry():
    out = softmax(Tensor([0.0, 0.0]), 1.0)
    np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)


def test_softmax_hand_case():
    out = softmax(Tensor([np.log(2.0), 0.0]), 1.0)
    np.testing.assert_allclose(out.data, [2 / 3, 1 / 3], atol=1e-14)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(50)
    for shift in (-100.0, 3.7, 1e6):
        a = softmax(Tensor(x), 0.3).data
        b = softmax(Tensor(x + shift), 0.3).data
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_softmax_sums_to_one_at_scale():
    rng = np.random.default_rng(11)
    for tau in (0.01, 1.0, 50.0):
        out = softmax(Tensor(rng.standard_normal(10_000) * 10), tau)
        assert abs(out.data.sum() - 1.0) < 1e-12
        assert np.all(out.data > 0)


def test_softmax_rejects_bad_temperature():
    with pytest.raises(ParameterError):
        softmax(Tensor([1.0, 2.0]), 0.0)
    with pytest.raises(ParameterError):
        softmax(Tensor([1.0, 2.0]), -1.0)


# -- cosine ------------------------------------------------------------------


def test_cosine_self_is_one():
    rng = np.random.default_rng(0)
    for _ in range(5):
        v = rng.standard_normal(8)
        assert cosine_similarity(Tensor(v), Tensor(v)).item() == pytest.approx(1.0, abs=1e-12)


def test_cosine_orthogonal_is_zero():
    assert cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0


def test_cosine_hand_case():
    value = cosine_similarity(Tensor([1.0, 1.0]), Tensor([1.0, 0.0])).item()
    assert value == pytest.approx(1 / np.sqrt(2), abs=1e-12)


def test_cosine_rejects_zero_norm():
    with pytest.raises(DegenerateInputError):
        cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))


# -- layer norm ----------------------------------------------------------------


def test_layer_norm_constant_row_is_zero():
    out = layer_norm(Tensor(np.full((2, 6), 3.5)), Tensor(np.ones(6)), Tensor(np.zeros(6)))
    assert np.all(np.abs(out.data) < 1e-6)


def test_layer_norm_hand_case():
    out = layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-4)


def test_layer_norm_row_means_vanish():
    rng = np.random.default_rng(5)
    out = layer_norm(Tensor(rng.standard_normal((7, 16)) * 4), Tensor(np.ones(16)), Tensor(np.zeros(16)))
    assert np.all(np.abs(out.data.mean(axis=1)) < 1e-10)


# -- attention -----------------------------------------------------------------


def _identity_weights(dim: int) -> AttentionWeights:
    eye = np.eye(dim)
    return AttentionWeights(wq=Tensor(eye), wk=Tensor(eye), wv=Tensor(eye), wo=Tensor(eye))


def test_attention_single_key_returns_value_row():
    rng = np.random.default_rng(1)
    q = rng.standard_normal((3, 4))
    k = rng.standard_normal((1, 4))
    v = rng.standard_normal((1, 4))
    out = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), 2, _identity_weights(4))
    for row in out.data:
        np.testing.assert_allclose(row, v[0], atol=1e-12)


def test_attention_identical_keys_average_values():
    rng = np.random.default_rng(2)
    q = rng.standard_normal((5, 6))
    k = np.tile(rng.standard_normal(6), (4, 1))
    v = rng.standard_normal((4, 6))
    out = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), 3, _identity_weights(6))
    for row in out.data:
        np.testing.assert_allclose(row, v.mean(axis=0), atol=1e-12)


def test_attention_preserves_shape():
    rng = np.random.default_rng(3)
    q = rng.standard_normal((17, 8))
    out = multi_head_attention(Tensor(q), Tensor(q), Tensor(q), 2, _identity_weights(8))
    assert out.shape == (17, 8)


def test_attention_rejects_indivisible_heads():
    with pytest.raises(ConfigurationError):
        multi_head_attention(Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 6))),
                             Tensor(np.zeros((2, 6))), 4, _identity_weights(6))


# -- depthwise convolution ------------------------------------------------------


def test_conv_k1_identity():
    rng = np.random.default_rng(4)
    grid = rng.standard_normal((3, 4, 5))
    out = depthwise_conv2d(Tensor(grid), Tensor(np.ones((1, 1, 5))))
    np.testing.assert_allclose(out.data, grid, atol=0)


def test_conv_all_ones_interior():
    grid = np.full((5, 5, 2), 2.0)
    out = depthwise_conv2d(Tensor(grid), Tensor(np.ones((3, 3, 2))))
    np.testing.assert_allclose(out.data[1:-1, 1:-1, :], 18.0, atol=1e-12)


def test_conv_channel_independence_is_bitwise():
    rng = np.random.default_rng(6)
    grid = rng.standard_normal((4, 4, 3))
    kernels = rng.standard_normal((3, 3, 3))
    base = depthwise_conv2d(Tensor(grid), Tensor(kernels)).data
    bumped = grid.copy()
    bumped[:, :, 1] += rng.standard_normal((4, 4))
    out = depthwise_conv2d(Tensor(bumped), Tensor(kernels)).data
    assert np.array_equal(base[:, :, 0], out[:, :, 0])
    assert np.array_equal(base[:, :, 2], out[:, :, 2])
    assert not np.array_equal(base[:, :, 1], out[:, :, 1])


def test_conv_rejects_even_kernel():
    with pytest.raises(ConfigurationError):
        depthwise_conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((2, 2, 2))))


# -- top-k ---------------------------------------------------------------------


def test_top_k_full_sort():
    values = np.array([3.0, 1.0, 2.0])
    assert top_k(Tensor(values), 3) == [(0, 3.0), (2, 2.0), (1, 1.0)]


def test_top_k_matches_sort_prefix_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        x = rng.standard_normal(n)
        k = int(rng.integers(1, n + 1))
        got = top_k(Tensor(x), k)
        oracle = sorted(range(n), key=lambda i: (-x[i], i))[:k]
        assert [i for i, _ in got] == oracle


def test_top_k_at_scale():
    rng = np.random.default_rng(8)
    x = rng.integers(0, 50, size=10_000).astype(float)  # many ties
    got = [i for i, _ in top_k(Tensor(x), 100)]
    oracle = sorted(range(10_000), key=lambda i: (-x[i], i))[:100]
    assert got == oracle


def test_top_k_tie_breaks_to_lower_index():
    assert top_k(Tensor([5.0, 5.0, 1.0]), 1) == [(0, 5.0)]


def test_top_k_rejects_bad_k():
    with pytest.raises(ParameterError):
        top_k(Tensor([1.0, 2.0]), 3)
    with pytest.raises(ParameterError):
        top_k(Tensor([1.0, 2.0]), 0)


# -- gradients of every kernel ---------------------------------------------------


@pytest.mark.parametrize("seed", range(100))
def test_kernel_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    rec = GradRecord()
    dim, heads, patches = 6, 2, 4
    weights = AttentionWeights(
        wq=rec.parameter("wq", rng.standard_normal((dim, dim)) * 0.4),
        wk=rec.parameter("wk", rng.standard_normal((dim, dim)) * 0.4),
        wv=rec.parameter("wv", rng.standard_normal((dim, dim)) * 0.4),
        wo=rec.parameter("wo", rng.standard_normal((dim, dim)) * 0.4),
    )
    gain = rec.parameter("gain", 1.0 + 0.2 * rng.standard_normal(dim))
    bias = rec.parameter("bias", 0.2 * rng.standard_normal(dim))
    kernels = rec.parameter("kernels", rng.standard_normal((3, 3, dim)) * 0.3)
    tokens = rng.standard_normal((patches + 1, dim))
    probe = rng.standard_normal(dim)

    def fn():
        z = layer_norm(Tensor(tokens), gain, bias)
        attended = multi_head_attention(z, z, z, heads, weights)
        grid = reshape(attended.narrow(0, 1, patches), (2, 2, dim))
        conv = depthwise_conv2d(grid, kernels)
        pooled = reshape(conv, (patches, dim)).sum(axis=0) + reshape(attended.narrow(0, 0, 1), (dim,))
        scored = softmax(l2_normalize(pooled) * 4.0, 0.7)
        return cosine_similarity(scored, Tensor(np.abs(probe) + 0.1)) + tensor_sum(scored * scored)

    report = finite_difference_check(fn, rec, step=1e-3, tolerance=1e-4)
    assert report.ok, report.per_parameter


def test_softmax_rows_gradient():
    rng = np.random.default_rng(200)
    rec = GradRecord()
    x = rec.parameter("x", rng.standard_normal((4, 5)))
    probe = rng.standard_normal((4, 5))

    def fn():
        return tensor_sum(softmax_rows(x, 0.5) * probe)

    assert finite_difference_check(fn, rec).ok
