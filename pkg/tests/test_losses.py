import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from entrokeys.diffengine import PairObjective
from entrokeys.geometry import KeypointState, aggregate_mask, gaussian_fields, heatmap, heatmap_area
from entrokeys.losses import (LossWeights, information_transport_loss, masked_conditional_entropy_loss,
                              masked_entropy_loss, mint_loss, overlap_loss, status_loss)

SHAPE = (40, 40)
BINARY_ETA = 1e9  # eta * (1 - tau) >> 1: heatmaps are 0 or 1


def binary_heatmaps(xy, sigma=4.0, tau=0.1):
    h = heatmap(gaussian_fields(xy, sigma, SHAPE), tau, BINARY_ETA)
    assert set(np.unique(h)) <= {0.0, 1.0}
    return h


def test_weight_defaults_and_validation():
    w = LossWeights()
    assert (w.lambda_me, w.lambda_mce, w.lambda_it, w.lambda_s, w.lambda_o) == (100, 100, 20, 10, 30)
    assert (w.m_d, w.kappa, w.beta) == (1.0, 0.9, 4.0)
    with pytest.raises(ValueError):
        LossWeights(lambda_me=-1)
    with pytest.raises(ValueError):
        LossWeights(kappa=1.5)
    with pytest.raises(ValueError):
        LossWeights(overlap_form="other")
    assert LossWeights(lambda_me=0).lambda_me == 0


def test_masked_entropy_examples():
    H = np.random.default_rng(0).random(SHAPE)
    assert masked_entropy_loss(H, np.ones(SHAPE)) == 0.0
    assert masked_entropy_loss(H, np.zeros(SHAPE)) == 1.0
    M = np.zeros(SHAPE)
    M[:, :20] = 1
    assert masked_entropy_loss(np.full(SHAPE, 0.7), M) == 0.5
    assert masked_entropy_loss(np.zeros(SHAPE), M) == 0.0


def test_masked_conditional_examples():
    assert masked_conditional_entropy_loss(np.zeros(SHAPE), np.zeros(SHAPE)) == 0.0
    Hc = np.zeros(SHAPE)
    Hc[5:9, 5:9] = 1.3
    assert masked_conditional_entropy_loss(Hc, np.ones(SHAPE)) == 0.0
    M = np.zeros(SHAPE)
    M[20:, 20:] = 1
    assert masked_conditional_entropy_loss(Hc, M) == 1.0


@settings(max_examples=50)
@given(arrays(np.float64, (6, 6), elements=st.floats(0, 5)), arrays(np.float64, (6, 6), elements=st.floats(0, 1)),
       arrays(np.float64, (6, 6), elements=st.floats(0, 1)), st.floats(0.01, 100))
def test_coverage_losses_bounded_monotone_and_scale_free(H, M, grow, scale):
    for fn in (masked_entropy_loss, masked_conditional_entropy_loss):
        a = fn(H, M)
        assert -1e-12 <= a <= 1 + 1e-12
        assert fn(H, np.maximum(M, grow)) <= a + 1e-12
        if H.sum() > 1e-6:
            assert abs(fn(scale * H, M) - a) < 1e-9


def test_activation_never_increases_masked_entropy():
    rng = np.random.default_rng(1)
    H = rng.random(SHAPE)
    h = heatmap(gaussian_fields(rng.uniform(0, 39, (4, 2)), 6.0, SHAPE))
    s = rng.random(4)
    for i in range(4):
        on = s.copy()
        on[i] = 1.0
        off = s.copy()
        off[i] = 0.0
        assert masked_entropy_loss(H, aggregate_mask(h, on)) <= masked_entropy_loss(H, aggregate_mask(h, off))


def _transport(H_t, H_prev, H_cond, xy_t, xy_prev, weights):
    h_t, h_p = binary_heatmaps(xy_t), binary_heatmaps(xy_prev)
    return information_transport_loss(H_t, H_prev, H_cond, xy_t, xy_prev, h_t, h_p, weights,
                                      heatmap_area(4.0, 0.1, BINARY_ETA))


def test_transport_zero_for_stationary_keypoints_on_identical_frames():
    H = np.random.default_rng(2).random(SHAPE)
    xy = np.array([[10.0, 12.0], [30.0, 25.0]])
    total, terms, d = _transport(H, H, np.zeros(SHAPE), xy, xy, LossWeights())
    assert total == 0.0 and np.all(terms == 0.0) and np.all(d == 0.0)


def test_transport_movement_charge():
    # entropy only where both heatmaps of the moved keypoint are 1
    H = np.zeros(SHAPE)
    H[18:22, 18:22] = 2.0
    xy_prev = np.array([[20.0, 20.0]])
    xy_t = xy_prev + [3.0, 4.0]
    for m_d in (1.0, 0.25):
        total, terms, d = _transport(H, H, np.zeros(SHAPE), xy_t, xy_prev, LossWeights(m_d=m_d))
        assert d.tolist() == [25.0]
        assert total == m_d * 25.0


def test_transport_is_movement_sum_on_identical_frames():
    H = np.zeros(SHAPE)
    H[8:11, 8:11] = 1.0
    H[28:31, 28:31] = 3.0
    xy_prev = np.array([[9.0, 9.0], [29.0, 29.0], [5.0, 35.0]])
    xy_t = xy_prev + np.array([[1.0, -2.0], [0.5, 0.5], [0.0, 0.0]])
    total, _, d = _transport(H, H, np.zeros(SHAPE), xy_t, xy_prev, LossWeights(m_d=2.0))
    assert total == 2.0 * d.sum()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_transport_terms_nonnegative_and_per_keypoint(seed):
    rng = np.random.default_rng(seed)
    H_t, H_prev = rng.random(SHAPE), rng.random(SHAPE)
    H_cond = np.maximum(H_t - H_prev, 0)
    xy_t, xy_prev = rng.uniform(0, 39, (3, 2)), rng.uniform(0, 39, (3, 2))
    h_t = heatmap(gaussian_fields(xy_t, 6.0, SHAPE))
    h_p = heatmap(gaussian_fields(xy_prev, 6.0, SHAPE))
    w = LossWeights()
    _, terms, _ = information_transport_loss(H_t, H_prev, H_cond, xy_t, xy_prev, h_t, h_p, w, 100.0)
    assert np.all(terms >= 0)
    perm = [2, 0, 1]
    _, t2, _ = information_transport_loss(H_t, H_prev, H_cond, xy_t[perm], xy_prev[perm], h_t[perm],
                                          h_p[perm], w, 100.0)
    assert np.allclose(t2, terms[perm], rtol=0, atol=0)


def test_transport_reconstruction_scales_linearly():
    rng = np.random.default_rng(4)
    H_t, H_prev = rng.random(SHAPE), rng.random(SHAPE)
    H_cond = np.maximum(H_t - H_prev, 0)
    xy = rng.uniform(0, 39, (2, 2))
    h = heatmap(gaussian_fields(xy, 6.0, SHAPE))
    w = LossWeights(m_d=0.0)
    a = information_transport_loss(H_t, H_prev, H_cond, xy, xy, h, h, w, 50.0)[0]
    b = information_transport_loss(3 * H_t, 3 * H_prev, 3 * H_cond, xy, xy, h, h, w, 50.0)[0]
    assert abs(b - 3 * a) < 1e-9 * max(1.0, b)


def test_overlap_examples():
    assert overlap_loss(gaussian_fields([[10, 10]], 9.0, SHAPE), beta=4) == 0.0
    five = gaussian_fields([[20, 20]] * 5, 9.0, SHAPE)
    assert overlap_loss(five, beta=4) == 0.2
    assert overlap_loss(five, beta=4, form="paper") == 0.0
    assert overlap_loss(gaussian_fields([[20, 20]], 9.0, SHAPE), beta=4, form="paper") == -3.0


@pytest.mark.parametrize("beta", [0.5, 1.0, 1.5, 4.0])
def test_overlap_non_increasing_with_separation(beta):
    seps = np.linspace(0, 30, 61)
    vals = [overlap_loss(gaussian_fields([[5, 20], [5 + s, 20]], 6.0, (40, 60)), beta) for s in seps]
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))


def test_status_examples():
    assert status_loss(np.ones(7)) == 1.0
    assert status_loss(np.zeros(7)) == 0.0
    s = np.zeros(25)
    s[:5] = 1
    assert status_loss(s) == 0.2


@given(st.integers(1, 40), st.data())
def test_status_linear_in_active_count(k, data):
    n = data.draw(st.integers(0, k))
    s = np.r_[np.ones(n), np.zeros(k - n)]
    assert status_loss(s) == n / k


def test_mint_examples():
    w = LossWeights()
    assert mint_loss(0, 0, 0, 0, 0, w).total == 0.0
    assert mint_loss(1.0, 0, 0, 0, 1.0, w).total == w.lambda_me
    bd = mint_loss(0.2, 0, 0, 0, 0.5, LossWeights(lambda_s=10))
    assert abs(bd.total - (0.8 * 10 * 0.5 + 100 * 0.2)) < 1e-12
    only_s = LossWeights(lambda_me=0, lambda_mce=0, lambda_it=0, lambda_o=0, lambda_s=10)
    assert abs(mint_loss(0.2, 0, 0, 0, 0.5, only_s).total - 4.0) < 1e-12
    assert set(bd.to_json()) == {"me", "mce", "it", "overlap", "status", "total"}


def test_objective_agrees_with_loss_functions():
    rng = np.random.default_rng(9)
    H_t, H_prev = rng.random(SHAPE), rng.random(SHAPE)
    H_cond = np.maximum(H_t - H_prev, 0)
    prev = KeypointState(rng.uniform(0, 39, (4, 2)), rng.normal(size=4))
    cur = KeypointState(prev.xy + rng.normal(0, 2, (4, 2)), rng.normal(size=4))
    w = LossWeights(beta=1.0)
    bd, _ = PairObjective(H_t, H_prev, H_cond, w).evaluate(cur, prev)
    h_t = heatmap(gaussian_fields(cur.xy, 9.0, SHAPE))
    h_p = heatmap(gaussian_fields(prev.xy, 9.0, SHAPE))
    M = aggregate_mask(h_t, cur.status)
    me = masked_entropy_loss(H_t, M)
    mce = masked_conditional_entropy_loss(H_cond, M)
    it = information_transport_loss(H_t, H_prev, H_cond, cur.xy, prev.xy, h_t, h_p, w, heatmap_area())[0]
    o = overlap_loss(gaussian_fields(cur.xy, 9.0, SHAPE), w.beta)
    ref = mint_loss(me, mce, it, o, status_loss(cur.status), w)
    for key in ("me", "mce", "it", "overlap", "status", "total"):
        assert abs(getattr(bd, key) - getattr(ref, key)) < 1e-9 * max(1.0, abs(getattr(ref, key)))
