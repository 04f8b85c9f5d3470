"""Randomised invariants, 200+ examples each."""

import tempfile
from pathlib import Path

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quakerank.dataset import SarTile, SarTilePair, read_tile, write_tile
from quakerank.losses import composite_loss
from quakerank.model import PARAM_SHAPES, load_checkpoint, save_checkpoint
from quakerank.preprocess import random_flips, stack_pair, to_decibels, unstack

N = 200
props = settings(max_examples=N, deadline=None, suppress_health_check=[HealthCheck.too_slow])

magnitudes = st.floats(0.0, 10.0, allow_nan=False)
preds = st.floats(-20.0, 20.0, allow_nan=False)
intensity = st.floats(0.0, 1e6, allow_nan=False, width=32)


@st.composite
def batches(draw, min_size=2, max_size=12):
    b = draw(st.integers(min_size, max_size))
    target = draw(st.lists(magnitudes, min_size=b, max_size=b, unique=True))
    pred = draw(st.lists(preds, min_size=b, max_size=b))
    perm = draw(st.permutations(range(b)))
    return np.array(pred), np.array(target), np.array(perm)


@st.composite
def tiles(draw, max_side=6):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    return draw(arrays(np.float32, (h, w, 2), elements=intensity))


@props
@given(batches(), st.floats(0.0, 0.5))
def test_composite_permutation_invariant(batch, margin):
    pred, target, perm = batch
    a = composite_loss(pred, target, margin)
    b = composite_loss(pred[perm], target[perm], margin)
    assert np.isclose(a.mse, b.mse, rtol=1e-12, atol=1e-12)
    assert np.isclose(a.ranking, b.ranking, rtol=1e-12, atol=1e-12)
    assert np.isclose(a.total, b.total, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.grad_wrt_predictions[perm], b.grad_wrt_predictions, rtol=1e-12, atol=1e-12)


@props
@given(batches(), st.floats(-10.0, 10.0, allow_nan=False), st.floats(0.0, 0.5))
def test_ranking_shift_invariant(batch, shift, margin):
    pred, target, _ = batch
    # dyadic shift keeps pred + c exact for these ranges
    shift = np.round(shift * 64) / 64
    a = composite_loss(pred, target, margin)
    b = composite_loss(pred + shift, target, margin)
    assert np.isclose(a.ranking, b.ranking, rtol=1e-9, atol=1e-9)
    assert a.mse >= 0 and a.ranking >= 0 and a.total >= 0


@props
@given(tiles(), tiles(), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_flip_involution_and_pixel_multiset(pre, post, u, v, p):
    if pre.shape != post.shape:
        post = np.resize(post, pre.shape)
    pair = SarTilePair(SarTile(pre), SarTile(post))
    once = random_flips(pair, (u, v), p)
    assert random_flips(once, (u, v), p) == pair
    assert np.array_equal(np.sort(once.pre.data, axis=None), np.sort(pair.pre.data, axis=None))
    # pre and post receive the same flip
    probe = SarTilePair(SarTile(pre), SarTile(pre))
    flipped = random_flips(probe, (u, v), p)
    assert flipped.pre == flipped.post


@props
@given(st.floats(0.0, 1e12, allow_nan=False), st.floats(0.0, 1e12, allow_nan=False))
def test_db_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert to_decibels(np.array(lo)) <= to_decibels(np.array(hi))


@props
@given(tiles(max_side=8))
def test_tile_roundtrip(data):
    tile = SarTile(data)
    with tempfile.TemporaryDirectory() as d:
        write_tile(tile, Path(d) / "t.sart")
        back = read_tile(Path(d) / "t.sart")
    assert back == tile


@props
@given(tiles(max_side=5))
def test_stack_unstack(data):
    pair = SarTilePair(SarTile(data), SarTile(data[::-1].copy()))
    assert unstack(stack_pair(pair)) == pair


@props
@given(st.integers(0, 2**32 - 1), st.dictionaries(st.text(max_size=8), st.integers() | st.floats(allow_nan=False) | st.text(max_size=8), max_size=4))
def test_checkpoint_roundtrip(seed, meta):
    rng = np.random.default_rng(seed)
    params = {k: rng.standard_normal(s).astype(np.float32) for k, s in PARAM_SHAPES.items()}
    with tempfile.TemporaryDirectory() as d:
        save_checkpoint(params, meta, Path(d) / "m.qrnk")
        back, meta2 = load_checkpoint(Path(d) / "m.qrnk")
    assert meta2 == meta
    assert all(back[k].tobytes() == params[k].tobytes() for k in params)
