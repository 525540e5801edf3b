import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clar.signal import (
    SignalError,
    crop_resize,
    dtw_cross,
    dtw_distance,
    dtw_pairwise,
    dtw_path,
    haar_analysis,
    path_cost,
    sliding_windows,
    warp_aggregate,
)
from oracles import brute_dtw, brute_dtw_batch, integer_grid

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
series = arrays(np.float64, st.integers(1, 12), elements=finite)


# ------------------------------------------------------------------- haar


def test_haar_constant():
    bands = haar_analysis([2.5, 2.5, 2.5, 2.5])
    np.testing.assert_array_equal(bands.high, [0, 0, 0, 0])
    np.testing.assert_array_equal(bands.low, [2.5, 2.5, 2.5, 2.5])


def test_haar_alternating():
    bands = haar_analysis([1, -1, 1, -1])
    np.testing.assert_array_equal(bands.low, [0, 0, 0, 0])
    np.testing.assert_array_equal(bands.high, [1, -1, 1, -1])


def test_haar_reconstruction_exact_length8():
    x = np.random.default_rng(0).normal(size=8)
    bands = haar_analysis(x)
    assert len(bands.high) == len(bands.low) == 8
    np.testing.assert_allclose(bands.high + bands.low, x, rtol=0, atol=1e-12)


def test_haar_reconstruction_bitwise_for_dyadic_values():
    x = np.array([0.5, -1.25, 3.0, 2.0, 7.75])
    bands = haar_analysis(x)
    assert np.array_equal(bands.high + bands.low, x)


def test_haar_too_short():
    with pytest.raises(SignalError):
        haar_analysis([1.0])


@given(arrays(np.float64, st.integers(2, 64), elements=finite))
def test_haar_reconstruction_property(x):
    b = haar_analysis(x)
    np.testing.assert_allclose(b.high + b.low, x, rtol=0, atol=1e-12)


# -------------------------------------------------------------------- dtw


def test_dtw_identity_and_scalar():
    assert dtw_distance([1, 2, 3], [1, 2, 3]) == 0
    assert dtw_distance([1], [3]) == 2


def test_dtw_hand_example():
    # oracle: exhaustive alignments
    assert brute_dtw([1, 2, 3], [2, 3]) == 1
    assert dtw_distance([1, 2, 3], [2, 3]) == 1


def test_dtw_empty_rejected():
    with pytest.raises(SignalError):
        dtw_distance([], [1.0])
    with pytest.raises(SignalError):
        dtw_path([1.0], [])


@pytest.mark.parametrize("n,m", [(n, m) for n in range(1, 5) for m in range(1, 5) if n + m <= 6])
def test_dtw_exhaustive_small_grid(n, m):
    A, B = integer_grid(n), integer_grid(m)
    ia, ib = np.meshgrid(np.arange(len(A)), np.arange(len(B)), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    expected = brute_dtw_batch(A[ia], B[ib])
    got = dtw_cross(A, B).ravel()
    assert np.array_equal(got, expected)


@settings(max_examples=200)
@given(
    arrays(np.float64, st.integers(1, 6), elements=st.integers(-3, 3).map(float)),
    arrays(np.float64, st.integers(1, 6), elements=st.integers(-3, 3).map(float)),
)
def test_dtw_matches_brute_force(a, b):
    assert dtw_distance(a, b) == brute_dtw(a, b)


@given(series, series)
def test_dtw_symmetric_and_zero_on_self(a, b):
    assert dtw_distance(a, b) == dtw_distance(b, a)
    assert dtw_distance(a, a) == 0


@given(series, series)
def test_dtw_path_valid_and_optimal(a, b):
    path = dtw_path(a, b)
    assert path[0] == (0, 0)
    assert path[-1] == (len(a) - 1, len(b) - 1)
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        assert (i1 - i0, j1 - j0) in {(1, 0), (0, 1), (1, 1)}
    assert abs(path_cost(a, b, path) - dtw_distance(a, b)) <= 1e-12 * max(1.0, dtw_distance(a, b))


def test_dtw_path_diagonal_on_identity():
    assert dtw_path([3, 1, 4, 1], [3, 1, 4, 1]) == [(0, 0), (1, 1), (2, 2), (3, 3)]


def test_dtw_path_single_element():
    assert dtw_path([1], [5, 5, 5]) == [(0, 0), (0, 1), (0, 2)]


def test_dtw_path_cost_hand_example():
    path = dtw_path([1, 2, 3], [2, 3])
    assert path_cost([1, 2, 3], [2, 3], path) == dtw_distance([1, 2, 3], [2, 3])


def test_dtw_path_tie_breaks_diagonal_first():
    # every alignment of constant sequences costs 0; diagonal is preferred
    assert dtw_path([0, 0, 0], [0, 0, 0]) == [(0, 0), (1, 1), (2, 2)]
    # at (1, 2) all three predecessors tie; the diagonal (0, 1) wins
    assert dtw_path([0, 0], [0, 0, 0]) == [(0, 0), (0, 1), (1, 2)]
    # at (2, 2) the diagonal is worse and (1, 2) ties (2, 1): i-predecessor wins
    assert dtw_path([0, 1, 0], [1, 0, 1]) == [(0, 0), (0, 1), (1, 2), (2, 2)]


def test_pairwise_matches_scalar():
    xs = np.random.default_rng(1).normal(size=(5, 7))
    D = dtw_pairwise(xs)
    for p in range(5):
        for q in range(5):
            assert D[p, q] == dtw_distance(xs[p], xs[q])


# --------------------------------------------------------- warp aggregate


def test_warp_aggregate_identity():
    a = np.array([0.3, -1.0, 2.0, 5.5])
    np.testing.assert_allclose(warp_aggregate(a, a), a, rtol=0, atol=1e-12)


def test_warp_aggregate_constant_average():
    np.testing.assert_array_equal(warp_aggregate([0, 0], [2, 2]), [1, 1])


def test_warp_aggregate_hand_traced():
    # cost |a_i - b_j|:       accumulated:
    #   4 2 0                   4 6 6
    #   2 0 2                   6 4 6
    #   0 2 4                   6 6 8
    # optimal path is the diagonal; merged means are (0+4)/2, (2+2)/2, (4+0)/2
    assert dtw_path([0, 2, 4], [4, 2, 0]) == [(0, 0), (1, 1), (2, 2)]
    np.testing.assert_array_equal(warp_aggregate([0, 2, 4], [4, 2, 0]), [2, 2, 2])


def test_warp_aggregate_follows_first_timeline():
    a = np.arange(10.0)
    b = np.array([0.0, 9.0])
    assert warp_aggregate(a, b).shape == (10,)
    assert warp_aggregate(b, a).shape == (2,)


@given(series)
def test_warp_aggregate_self_property(a):
    np.testing.assert_allclose(warp_aggregate(a, a), a, rtol=0, atol=1e-12)


# ---------------------------------------------------------------- windows


def test_sliding_windows_examples():
    x = np.arange(5.0)
    w = sliding_windows(x, 5)
    assert w.shape == (1, 5) and np.array_equal(w[0], x)
    assert sliding_windows(x, 1).shape == (5, 1)
    w = sliding_windows(np.arange(6.0), 3)
    assert len(w) == 4
    np.testing.assert_array_equal(w[2], [2, 3, 4])


def test_sliding_windows_too_long():
    with pytest.raises(SignalError):
        sliding_windows(np.arange(3.0), 4)


def test_sliding_windows_count_exhaustive():
    for L in range(1, 65):
        x = np.arange(float(L))
        for H in range(1, L + 1):
            w = sliding_windows(x, H)
            assert w.shape == (L - H + 1, H)
            assert w[-1, 0] == L - H


# ------------------------------------------------------------ crop resize


def test_crop_identity():
    x = np.random.default_rng(2).normal(size=16)
    np.testing.assert_array_equal(crop_resize(x, 16, crop_fraction=1.0, offset_fraction=0.0), x)


def test_crop_linear_interpolation():
    out = crop_resize([0, 1, 2, 3], 4, crop_fraction=0.5, offset_fraction=0.0)
    np.testing.assert_allclose(out, [0, 1 / 3, 2 / 3, 1], rtol=0, atol=1e-15)


def test_crop_offset_position():
    x = np.arange(10.0)
    # crop_len 5, start round(0.5 * 5) = 3 (half-up)
    out = crop_resize(x, 5, crop_fraction=0.5, offset_fraction=0.5)
    np.testing.assert_array_equal(out, [3, 4, 5, 6, 7])


def test_crop_random_constant():
    rng = np.random.default_rng(3)
    for _ in range(20):
        out = crop_resize(np.full(32, 1.5), 40, rng=rng)
        np.testing.assert_allclose(out, 1.5, rtol=0, atol=1e-15)


def test_crop_random_fraction_range():
    rng = np.random.default_rng(4)
    x = np.arange(100.0)
    for _ in range(50):
        out = crop_resize(x, 100, rng=rng)
        span = out[-1] - out[0] + 1
        assert 60 <= span <= 90


def test_crop_degenerate():
    with pytest.raises(SignalError):
        crop_resize([1.0, 2.0, 3.0], 4, crop_fraction=0.2, offset_fraction=0.0)
    with pytest.raises(SignalError):
        crop_resize([1.0, 2.0], 4, crop_fraction=1.5, offset_fraction=0.0)
