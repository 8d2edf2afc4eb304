import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import central_diff, gradcam_fd, rel_err, topk_binary_loops
from salguide import diffcore as dc
from salguide.diffcore import Tensor
from salguide.errors import InvalidParameterError, InvalidShapeError
from salguide.explain import (DisconnectedScoreWarning, evaluation_kind, explain_rows, explain_sample,
                              gradcam_heatmap, gradcam_weights, normalize_minmax, threshold_topk,
                              topk_count)
from salguide.model import ForwardTrace, forward
from salguide.scores import ScoreKind

maps = arrays(np.float64, (6, 6), elements=st.floats(0, 5, allow_nan=False))


# --- weights -----------------------------------------------------------------

def test_weights_of_sum_and_mean():
    A = Tensor(np.arange(4.0).reshape(1, 2, 2), requires_grad=True)
    np.testing.assert_array_equal(gradcam_weights(dc.tsum(A), A).data, [1.0])
    B = Tensor(np.ones((2, 2, 2)), requires_grad=True)
    np.testing.assert_array_equal(gradcam_weights(dc.mean(B), B).data, [0.125, 0.125])


def test_disconnected_score_warns_and_gives_zero():
    A = Tensor(np.ones((3, 2, 2)), requires_grad=True)
    other = Tensor(np.ones(2), requires_grad=True)
    with pytest.warns(DisconnectedScoreWarning):
        w = gradcam_weights(dc.tsum(other), A)
    np.testing.assert_array_equal(w.data, np.zeros(3))


def test_weights_bad_rank():
    A = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(InvalidShapeError):
        gradcam_weights(dc.tsum(A), A)


def _small_net(rng, c=3, h=4):
    w1 = rng.normal(size=(c,))
    w2 = rng.normal(size=(c, h, h))

    def score_t(A):
        return dc.tsum(dc.relu(A * Tensor(w2)) * Tensor(w1[:, None, None])) ** 2 * 0.1

    def score_np(A):
        return float(0.1 * ((np.maximum(A * w2, 0) * w1[:, None, None]).sum()) ** 2)

    return score_t, score_np


def test_weights_match_finite_differences(rng):
    for _ in range(5):
        score_t, score_np = _small_net(rng)
        A = rng.normal(size=(3, 4, 4))
        w_fd, H_fd = gradcam_fd(score_np, A.copy())
        At = Tensor(A, requires_grad=True)
        w = gradcam_weights(score_t(At), At)
        assert rel_err(w.data, w_fd) <= 1e-4
        assert rel_err(gradcam_heatmap(w, At).data, H_fd) <= 1e-4


def test_batched_weights_equal_per_sample(rng):
    score_t, _ = _small_net(rng)
    A = rng.normal(size=(3, 3, 4, 4))
    At = Tensor(A, requires_grad=True)
    s = dc.stack([score_t(At[i]) for i in range(3)])
    batched = gradcam_weights(s, At).data
    for i in range(3):
        Ai = Tensor(A[i], requires_grad=True)
        np.testing.assert_allclose(batched[i], gradcam_weights(score_t(Ai), Ai).data, rtol=1e-13)


# --- heatmap -----------------------------------------------------------------

def test_heatmap_examples():
    A = Tensor(np.array([[[-1.0, 2.0]]]))
    np.testing.assert_array_equal(gradcam_heatmap(Tensor([1.0]), A).data, [[0, 2]])
    np.testing.assert_array_equal(gradcam_heatmap(Tensor([0.0]), A).data, [[0, 0]])
    B = Tensor(np.stack([np.arange(4.0).reshape(2, 2)] * 2))
    np.testing.assert_array_equal(gradcam_heatmap(Tensor([1.0, -1.0]), B).data, np.zeros((2, 2)))


def test_heatmap_shape_mismatch():
    with pytest.raises(InvalidShapeError):
        gradcam_heatmap(Tensor([1.0, 2.0]), Tensor(np.ones((3, 2, 2))))


def test_heatmap_channel_permutation(rng):
    A, w = rng.normal(size=(5, 4, 4)), rng.normal(size=5)
    perm = rng.permutation(5)
    a = gradcam_heatmap(Tensor(w), Tensor(A)).data
    b = gradcam_heatmap(Tensor(w[perm]), Tensor(A[perm])).data
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


# --- normalization -----------------------------------------------------------

def test_normalize_examples():
    out, deg = normalize_minmax(Tensor([[1.0, 3.0]]))
    np.testing.assert_array_equal(out.data, [[0, 1]])
    assert deg is False
    out, _ = normalize_minmax(Tensor([[0.0, 5.0, 10.0]]))
    np.testing.assert_array_equal(out.data, [[0, 0.5, 1]])
    out, deg = normalize_minmax(Tensor([[2.0, 2.0, 2.0]]))
    np.testing.assert_array_equal(out.data, [[0, 0, 0]])
    assert deg is True


def test_normalize_batch_flags():
    H = Tensor(np.stack([np.ones((2, 2)), np.arange(4.0).reshape(2, 2)]))
    out, deg = normalize_minmax(H)
    np.testing.assert_array_equal(deg, [True, False])
    assert out.data[1].max() == 1.0


@settings(max_examples=60, deadline=None)
@given(maps)
def test_normalize_idempotent_and_in_range(H):
    a, deg = normalize_minmax(Tensor(H))
    assert np.all((a.data >= 0) & (a.data <= 1))
    if not deg:
        b, _ = normalize_minmax(a)
        np.testing.assert_allclose(b.data, a.data, rtol=0, atol=1e-15)


def test_normalize_gradient_modes(rng):
    H = rng.random((4, 4)) + 0.1
    wts = rng.normal(size=(4, 4))

    # gradient-stopped: min/max are constants
    const = {}
    Ht = Tensor(H, requires_grad=True)
    (g,) = dc.grad(dc.tsum(normalize_minmax(Ht, constants=const)[0] * Tensor(wts)), [Ht])
    np.testing.assert_allclose(g.data, wts / (H.max() - H.min()), rtol=1e-13)

    # full gradient through argmin / argmax
    Ht = Tensor(H, requires_grad=True)
    (g,) = dc.grad(dc.tsum(normalize_minmax(Ht, stop_grad=False)[0] * Tensor(wts)), [Ht])
    fd = central_diff(lambda: float((((H - H.min()) / (H.max() - H.min())) * wts).sum()), H, 1e-7)
    assert rel_err(g.data, fd) <= 1e-6


def test_constants_need_stop_grad():
    with pytest.raises(InvalidParameterError):
        normalize_minmax(Tensor(np.ones((2, 2))), stop_grad=False, constants={})


# --- top-k -------------------------------------------------------------------

def test_topk_examples():
    b, theta, _ = threshold_topk(Tensor([[0.1, 0.4], [0.6, 0.9]]), 50)
    assert theta == 0.6
    np.testing.assert_array_equal(b, [[0, 0], [1, 1]])
    b, theta, _ = threshold_topk(Tensor([[0.5, 0.5], [0.5, 0.9]]), 50)
    assert theta == 0.5
    np.testing.assert_array_equal(b, np.ones((2, 2)))
    b, _, soft = threshold_topk(Tensor(np.zeros((3, 3))), 50)
    assert b.sum() == 0 and soft.data.sum() == 0


@pytest.mark.parametrize("k", [0, -5, 100.5])
def test_topk_rejects_k(k):
    with pytest.raises(InvalidParameterError):
        threshold_topk(Tensor(np.ones((2, 2))), k)


def test_topk_count_rule():
    assert topk_count(256, 50) == 128
    assert topk_count(10, 33) == 4
    assert topk_count(4, 1) == 1
    assert topk_count(4, 100) == 4


@settings(max_examples=80, deadline=None)
@given(maps, st.sampled_from([10.0, 25.0, 50.0, 75.0, 100.0]))
def test_topk_matches_sort_oracle(H, k):
    binary, theta, soft = threshold_topk(Tensor(H), k)
    ref, ref_theta = topk_binary_loops(H, k)
    np.testing.assert_array_equal(binary, ref)
    assert theta == ref_theta
    np.testing.assert_array_equal(soft.data, H * ref)
    assert 0 <= binary.sum() <= H.size
    assert np.all(H[binary == 1] >= theta)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 1), min_size=16, max_size=16, unique=True))
def test_topk_count_without_ties_or_zeros(vals):
    binary, _, _ = threshold_topk(Tensor(np.array(vals).reshape(4, 4)), 50)
    assert binary.sum() == 8


def test_masked_soft_gradient_is_indicator(rng):
    Hn = Tensor(rng.random((3, 3)), requires_grad=True)
    binary, _, soft = threshold_topk(Hn, 50)
    (g,) = dc.grad(dc.tsum(soft), [Hn])
    np.testing.assert_array_equal(g.data, binary)


# --- composition ---------------------------------------------------------------

def _linear_trace(A_np, v):
    """A 'model' whose logits are linear in the pooled activations."""
    A = Tensor(A_np, requires_grad=True)
    pooled = dc.mean(A, axis=(2, 3))
    z1 = dc.tsum(pooled * Tensor(v), axis=1)
    logits = dc.stack([z1 * 0.0, z1], axis=1)
    return ForwardTrace(logits, A)


def test_explain_sample_linear_oracle(rng):
    A = rng.normal(size=(1, 3, 4, 4))
    v = np.array([1.0, -2.0, 0.5])
    sal = explain_sample(_linear_trace(A, v), ScoreKind.LOGIT_ALG)
    w = v / 16.0
    H = np.maximum((w[:, None, None] * A[0]).sum(axis=0), 0)
    Hn = (H - H.min()) / (H.max() - H.min())
    ref, theta = topk_binary_loops(Hn, 50)
    np.testing.assert_allclose(sal.raw.data, H, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(sal.normalized.data, Hn, rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(sal.binary, ref)
    assert not sal.degenerate


def test_explain_sample_squared_score(rng):
    A = rng.normal(size=(1, 3, 4, 4))
    v = np.array([0.3, 1.0, -0.7])
    tr = _linear_trace(A, v)
    sal = explain_sample(tr, ScoreKind.LOGIT_SQR)
    z1 = float(tr.logits.data[0, 1])
    w = 2 * z1 * v / 16.0
    H = np.maximum((w[:, None, None] * A[0]).sum(axis=0), 0)
    np.testing.assert_allclose(sal.raw.data, H, rtol=1e-12, atol=1e-15)


def test_degenerate_flag_and_determinism(rng):
    tr = _linear_trace(-np.abs(rng.normal(size=(1, 2, 3, 3))), np.array([1.0, 1.0]))
    sal = explain_sample(tr, ScoreKind.LOGIT_ALG)
    assert sal.degenerate and sal.binary.sum() == 0
    A = rng.normal(size=(1, 2, 3, 3))
    a = explain_sample(_linear_trace(A, np.ones(2)), "logit_alg")
    b = explain_sample(_linear_trace(A, np.ones(2)), "logit_alg")
    assert a.normalized.data.tobytes() == b.normalized.data.tobytes()


def test_explain_sample_requires_single(toy_model, rng):
    tr = forward(toy_model, rng.random((2, 1, 8, 8)))
    with pytest.raises(InvalidShapeError):
        explain_sample(tr, "logit_alg")


def test_pure_bce_evaluated_with_logit_alg(toy_model, rng):
    assert evaluation_kind("pure_bce") is ScoreKind.LOGIT_ALG
    tr = forward(toy_model, rng.random((2, 1, 8, 8)))
    a = explain_rows(tr, "pure_bce")
    b = explain_rows(tr, "logit_alg")
    np.testing.assert_array_equal(a.raw.data, b.raw.data)


def test_training_map_is_differentiable(toy_model, rng):
    x = rng.random((2, 1, 8, 8))
    tr = forward(toy_model, x)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sal = explain_rows(tr, "logit_sqr", for_training=True)
    conv3 = toy_model.params["conv3.weight"]
    (g,) = dc.grad(dc.tsum(sal.masked_soft), [conv3])
    assert np.any(g.data != 0)
    ev = explain_rows(forward(toy_model, x), "logit_sqr", for_training=False)
    np.testing.assert_allclose(ev.normalized.data, sal.normalized.data, rtol=1e-12, atol=1e-15)
