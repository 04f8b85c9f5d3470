import numpy as np
import pytest

from quakerank.losses import (
    RankingPairBatch,
    build_pairs,
    composite_loss,
    margin_ranking_loss,
    mse_loss,
)


def _fd(f, x, h=1e-6):
    g = np.empty_like(x)
    for k in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2 * h)
    return g


def _single(x1, x2, y, m=0.02):
    return RankingPairBatch(np.array([x1]), np.array([x2]), np.array([y]), m, np.array([[0, 1]]))


def test_mse_zero():
    loss, grad = mse_loss([1.0, 2.0], [1.0, 2.0])
    assert loss == 0.0 and np.all(grad == 0)


def test_mse_closed_form():
    loss, grad = mse_loss([1.0, 3.0], [0.0, 0.0])
    assert loss == 5.0
    np.testing.assert_array_equal(grad, [1.0, 3.0])


def test_mse_gradient_fd(rng):
    pred, target = rng.normal(size=8), rng.normal(size=8)
    _, grad = mse_loss(pred, target)
    np.testing.assert_allclose(grad, _fd(lambda p: mse_loss(p, target)[0], pred), atol=1e-8)


def test_mse_empty():
    with pytest.raises(ValueError):
        mse_loss([], [])


def test_pairs_b3():
    pairs = build_pairs([0.1, 0.2, 0.3], [5.0, 6.0, 4.0])
    assert pairs.pair_index.tolist() == [[0, 1], [0, 2], [1, 2]]
    np.testing.assert_array_equal(pairs.x1, [0.1, 0.1, 0.2])
    np.testing.assert_array_equal(pairs.x2, [0.2, 0.3, 0.3])
    np.testing.assert_array_equal(pairs.y, [-1, 1, 1])


def test_pairs_tie_is_positive():
    assert build_pairs([0.0, 0.0], [5.0, 5.0]).y.tolist() == [1.0]


def test_pairs_lower_first_is_negative():
    assert build_pairs([0.0, 0.0], [4.0, 6.0]).y.tolist() == [-1.0]


def test_pairs_exclude_ties():
    assert len(build_pairs([0.0, 1.0, 2.0], [5.0, 5.0, 6.0], exclude_ties=True).y) == 2


def test_pairs_need_two():
    with pytest.raises(ValueError):
        build_pairs([1.0], [1.0])


def test_pairs_count(rng):
    assert len(build_pairs(rng.normal(size=16), rng.normal(size=16)).y) == 120


@pytest.mark.parametrize(
    "x1, x2, expected",
    [(0.5, 0.3, 0.0), (0.3, 0.5, 0.22), (0.4, 0.4, 0.02)],
)
def test_hinge_hand_cases(x1, x2, expected):
    loss, _, _ = margin_ranking_loss(_single(x1, x2, 1.0))
    assert loss == pytest.approx(expected, abs=1e-15)


def test_hinge_gradient_signs():
    _, d1, d2 = margin_ranking_loss(_single(0.3, 0.5, 1.0))
    assert d1.tolist() == [-1.0] and d2.tolist() == [1.0]
    _, d1, d2 = margin_ranking_loss(_single(0.5, 0.3, 1.0))
    assert d1.tolist() == [0.0] and d2.tolist() == [0.0]


def test_hinge_kink_uses_zero_branch():
    # -y (x1 - x2) + m == 0 exactly
    _, d1, d2 = margin_ranking_loss(_single(0.5, 0.25, 1.0, m=0.25))
    assert d1[0] == 0.0 and d2[0] == 0.0


def test_hinge_gradient_fd(rng):
    b = 7
    pred, target = rng.normal(size=b), rng.normal(size=b)
    pairs = build_pairs(pred, target, 0.02)
    t = -pairs.y * (pairs.x1 - pairs.x2) + pairs.m
    assert np.all(np.abs(t) > 1e-6)
    _, d1, d2 = margin_ranking_loss(pairs)

    def loss_x1(x1):
        return margin_ranking_loss(RankingPairBatch(x1, pairs.x2, pairs.y, pairs.m, pairs.pair_index))[0]

    def loss_x2(x2):
        return margin_ranking_loss(RankingPairBatch(pairs.x1, x2, pairs.y, pairs.m, pairs.pair_index))[0]

    np.testing.assert_allclose(d1, _fd(loss_x1, pairs.x1.copy()), atol=1e-8)
    np.testing.assert_allclose(d2, _fd(loss_x2, pairs.x2.copy()), atol=1e-8)


def test_hinge_empty():
    with pytest.raises(ValueError):
        margin_ranking_loss(RankingPairBatch(np.zeros(0), np.zeros(0), np.zeros(0), 0.02, np.zeros((0, 2), int)))


def test_pair_batch_validation():
    with pytest.raises(ValueError):
        RankingPairBatch(np.zeros(1), np.zeros(1), np.array([0.0]), 0.02, np.array([[0, 1]]))
    with pytest.raises(ValueError):
        RankingPairBatch(np.zeros(1), np.zeros(1), np.array([1.0]), -0.1, np.array([[0, 1]]))


def test_composite_ablation_arm(rng):
    pred, target = rng.normal(size=5), rng.normal(size=5)
    out = composite_loss(pred, target, ranking_enabled=False)
    assert out.ranking == 0.0 and out.total == out.mse
    np.testing.assert_array_equal(out.grad_wrt_predictions, mse_loss(pred, target)[1])


def test_composite_perfect_prediction():
    target = np.array([4.0, 4.5, 5.25, 6.0, 6.9])
    out = composite_loss(target.copy(), target, m=0.02)
    assert out.total == 0.0 and out.mse == 0.0 and out.ranking == 0.0


def test_composite_gradient_fd(rng):
    pred, target = rng.normal(size=6), rng.normal(size=6)
    out = composite_loss(pred, target)
    pairs = build_pairs(pred, target)
    assert np.all(np.abs(-pairs.y * (pairs.x1 - pairs.x2) + pairs.m) > 1e-6)
    num = _fd(lambda p: composite_loss(p, target).total, pred)
    np.testing.assert_allclose(out.grad_wrt_predictions, num, atol=1e-7)


def test_composite_gradient_is_sum_of_parts(rng):
    pred, target = rng.normal(size=6), rng.normal(size=6)
    out = composite_loss(pred, target)
    _, g_mse = mse_loss(pred, target)
    pairs = build_pairs(pred, target)
    _, d1, d2 = margin_ranking_loss(pairs)
    g_rank = np.zeros(6)
    for (i, j), a, b in zip(pairs.pair_index, d1, d2):
        g_rank[i] += a
        g_rank[j] += b
    np.testing.assert_allclose(out.grad_wrt_predictions, g_mse + g_rank, atol=1e-15)


def test_zero_ranking_iff_separated():
    target = np.array([4.0, 5.0, 6.0])
    ok = composite_loss(np.array([1.0, 1.02, 1.04]), target, m=0.02)
    assert ok.ranking == 0.0
    bad = composite_loss(np.array([1.0, 1.019, 1.04]), target, m=0.02)
    assert bad.ranking > 0.0


def test_prediction_ordered_variant_ignores_targets(rng):
    pred = rng.normal(size=6)
    a = composite_loss(pred, rng.normal(size=6), label_source="pred")
    b = composite_loss(pred, rng.normal(size=6), label_source="pred")
    assert a.ranking == b.ranking
