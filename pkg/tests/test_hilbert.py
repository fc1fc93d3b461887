import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from tilemil.errors import CoordinateRangeError, DimensionError, EmptyBagError
from tilemil.hilbert import (
    STRATEGIES, TileBag, contiguous_chunk, densify, grid_order, hilbert_index,
    locality_score, morton_index, order_bag, order_coords,
)


def full_grid(k):
    side = 1 << k
    ys, xs = np.mgrid[0:side, 0:side]
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def sparse_coords(seed, n=256, grid=64):
    rng = np.random.default_rng(seed)
    flat = rng.choice(grid * grid, size=n, replace=False)
    return np.stack([flat % grid, flat // grid], axis=1)


# -- densify -------------------------------------------------------------------

def test_densify_ranks():
    out = densify([(10, 5), (30, 5), (10, 7), (50, 9)])
    assert out[:, 0].tolist() == [0, 1, 0, 2]
    assert out[:, 1].tolist() == [0, 0, 1, 2]


def test_densify_dense_is_identity():
    c = full_grid(2)
    np.testing.assert_array_equal(densify(c), c)


def test_densify_single_tile():
    assert densify([(123, 456)]).tolist() == [[0, 0]]


def test_densify_empty():
    with pytest.raises(EmptyBagError):
        densify(np.zeros((0, 2)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-1000, 1000), st.integers(-1000, 1000)), min_size=1, max_size=40))
def test_densify_idempotent_and_order_preserving(coords):
    d = densify(coords)
    np.testing.assert_array_equal(densify(d), d)
    c = np.array(coords)
    for axis in range(2):
        for i, j in itertools.combinations(range(len(c)), 2):
            assert np.sign(c[i, axis] - c[j, axis]) == np.sign(d[i, axis] - d[j, axis])


def test_grid_order_covers_largest_coordinate():
    assert grid_order(np.array([[0, 0]])) == 0
    assert grid_order(np.array([[1, 0]])) == 1
    assert grid_order(np.array([[3, 2]])) == 2
    assert grid_order(np.array([[4, 0]])) == 3


# -- hilbert_index -------------------------------------------------------------

def test_hilbert_k0():
    assert hilbert_index(0, 0, 0) == 0


def test_hilbert_k1_is_admissible_labeling():
    # Brute force: the labelings of a 2x2 grid that start at (0,0) and step by unit
    # distance. The implementation's labeling must be one of them.
    cells = [(0, 0), (1, 0), (0, 1), (1, 1)]
    admissible = []
    for path in itertools.permutations(cells):
        if path[0] != (0, 0):
            continue
        if all(abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1 for a, b in zip(path, path[1:])):
            admissible.append(path)
    got = tuple(sorted(cells, key=lambda c: hilbert_index(c[0], c[1], 1)))
    assert got in admissible
    assert sorted(hilbert_index(x, y, 1) for x, y in cells) == [0, 1, 2, 3]


@pytest.mark.parametrize("k", range(1, 7))
def test_hilbert_bijection_and_unit_step(k):
    c = full_grid(k)
    h = hilbert_index(c[:, 0], c[:, 1], k)
    assert sorted(h.tolist()) == list(range(4 ** k))
    path = c[np.argsort(h)]
    assert np.all(np.abs(np.diff(path, axis=0)).sum(axis=1) == 1)


def test_hilbert_scalar_matches_array():
    c = full_grid(3)
    h = hilbert_index(c[:, 0], c[:, 1], 3)
    assert all(hilbert_index(int(x), int(y), 3) == v for (x, y), v in zip(c, h))


@pytest.mark.parametrize("x,y,k", [(4, 0, 2), (0, -1, 2), (1, 1, 0)])
def test_hilbert_out_of_range(x, y, k):
    with pytest.raises(CoordinateRangeError):
        hilbert_index(x, y, k)


def test_morton_interleaves_bits():
    assert morton_index(1, 0, 1) == 1
    assert morton_index(0, 1, 1) == 2
    assert morton_index(3, 1, 2) == 0b0111
    c = full_grid(3)
    assert sorted(morton_index(c[:, 0], c[:, 1], 3).tolist()) == list(range(64))


# -- order_bag -----------------------------------------------------------------

@pytest.mark.parametrize("strategy", STRATEGIES)
def test_single_tile_bag(strategy):
    bag = TileBag(np.ones((1, 3)), [(7, 9)])
    assert order_bag(bag, strategy).perm.tolist() == [0]


def test_hilbert_2x2_unit_path():
    o = order_coords(full_grid(1), "hilbert")
    path = o.dense_coords[o.perm]
    assert np.all(np.abs(np.diff(path, axis=0)).sum(axis=1) == 1)


def test_rowmajor_is_lexicographic():
    c = sparse_coords(3, n=40, grid=16)
    o = order_coords(c, "rowmajor")
    d = o.dense_coords
    np.testing.assert_array_equal(o.perm, np.lexsort((d[:, 0], d[:, 1])))


def test_random_is_seeded():
    c = sparse_coords(1, n=50)
    a = order_coords(c, "random", seed=5).perm
    np.testing.assert_array_equal(a, order_coords(c, "random", seed=5).perm)
    assert not np.array_equal(a, order_coords(c, "random", seed=6).perm)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 120), st.sampled_from(STRATEGIES))
def test_perm_is_permutation_and_indices_sorted(seed, n, strategy):
    o = order_coords(sparse_coords(seed, n=n), strategy, seed=seed)
    assert sorted(o.perm.tolist()) == list(range(n))
    assert np.all(np.diff(o.indices[o.perm]) > 0)
    assert np.all((o.indices >= 0) & (o.indices < 4 ** o.order_k))


def test_tilebag_validation():
    with pytest.raises(EmptyBagError):
        TileBag(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(DimensionError):
        TileBag(np.zeros((2, 2)), [(0, 0)])
    with pytest.raises(ValueError):
        TileBag(np.zeros((2, 2)), [(0, 0), (0, 0)])


# -- contiguous_chunk ----------------------------------------------------------

def test_chunk_n_equals_m_is_whole():
    o = order_coords(sparse_coords(0, n=8), "hilbert")
    np.testing.assert_array_equal(contiguous_chunk(o, 8, 0), o.perm)


def test_chunk_short_bag_is_whole():
    o = order_coords(sparse_coords(0, n=3), "hilbert")
    np.testing.assert_array_equal(contiguous_chunk(o, 8, 0), o.perm)


def test_chunk_start_is_uniform():
    o = order_coords(sparse_coords(2, n=10), "hilbert")
    pos = {int(t): i for i, t in enumerate(o.perm)}
    rng = np.random.default_rng(11)
    counts = np.zeros(7)
    for _ in range(10_000):
        w = contiguous_chunk(o, 4, rng)
        start = pos[int(w[0])]
        np.testing.assert_array_equal(w, o.perm[start:start + 4])
        counts[start] += 1
    expected = 10_000 / 7
    sigma = np.sqrt(expected * (1 - 1 / 7))
    assert np.all(np.abs(counts - expected) < 3 * sigma)
    assert chisquare(counts).pvalue > 1e-3


def test_chunk_bad_window():
    with pytest.raises(ValueError):
        contiguous_chunk(order_coords([(0, 0)]), 0, 0)


# -- locality ------------------------------------------------------------------

@pytest.mark.parametrize("k", range(1, 6))
def test_locality_full_grid(k):
    c = full_grid(k)
    assert locality_score(order_coords(c, "hilbert")) == 1.0
    w = 1 << k
    # Enumerate the row-major path directly.
    path = [(x, y) for y in range(w) for x in range(w)]
    oracle = np.mean([abs(a[0] - b[0]) + abs(a[1] - b[1]) for a, b in zip(path, path[1:])])
    got = locality_score(order_coords(c, "rowmajor"))
    assert got == pytest.approx(oracle, rel=1e-12)
    assert got == pytest.approx((w * (w - 1) + (w - 1) * w) / (w * w - 1), rel=1e-12)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_locality_two_tiles(strategy):
    o = order_coords([(3, 10), (9, 2)], strategy, seed=1)
    assert locality_score(o) == 2.0  # dense coords (0,1) and (1,0)


def test_locality_needs_two():
    with pytest.raises(ValueError):
        locality_score(order_coords([(0, 0)]))


def test_locality_ranking_on_sparse_bags():
    scores = {s: [] for s in STRATEGIES}
    for seed in range(100):
        c = sparse_coords(seed)
        for s in STRATEGIES:
            scores[s].append(locality_score(order_coords(c, s, seed=seed)))
    mean = {s: np.mean(v) for s, v in scores.items()}
    assert mean["hilbert"] < mean["rowmajor"] < mean["random"]
    assert mean["hilbert"] < mean["zorder"]
