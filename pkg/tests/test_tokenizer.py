import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvqsta.core import Codebook, FeatureSequence, ShapeError
from rvqsta.tokenizer import KMeansError, kmeans_assign, kmeans_fit


def brute_assign(x, c):
    out = []
    for p in x:
        best, best_d = 0, None
        for j, q in enumerate(c):
            d = sum((a - b) ** 2 for a, b in zip(p, q))
            if best_d is None or d < best_d:
                best, best_d = j, d
        out.append(best)
    return out


def exhaustive_two_means(x):
    """Lowest inertia over every split of the points into two non-empty groups."""
    n = len(x)
    best = np.inf
    for mask in itertools.product([0, 1], repeat=n - 1):
        lab = np.array((0,) + mask)
        if lab.min() == lab.max():
            continue
        total = 0.0
        for g in (0, 1):
            pts = x[lab == g]
            total += float(np.sum((pts - pts.mean(axis=0)) ** 2))
        best = min(best, total)
    return best


def test_four_point_example():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]])
    model = kmeans_fit(x, 2, seed=0)
    assert model.inertia == pytest.approx(1.0, abs=1e-12)
    assert model.inertia == pytest.approx(exhaustive_two_means(x), abs=1e-12)
    got = sorted(map(tuple, model.centroids.entries))
    assert got == [(0.0, 0.5), (10.0, 10.5)]
    toks = kmeans_assign(x, model).tokens
    assert toks[0] == toks[1] and toks[2] == toks[3] and toks[0] != toks[2]


def test_single_cluster_is_the_mean(rng):
    x = rng.normal(size=(40, 3))
    model = kmeans_fit(x, 1)
    np.testing.assert_allclose(model.centroids.entries[0], x.mean(axis=0), atol=1e-12)
    assert np.all(kmeans_assign(x, model).tokens == 0)


def test_duplicate_points_zero_inertia():
    x = np.repeat(np.array([[1.0, 2.0], [5.0, -1.0], [0.0, 0.0]]), 4, axis=0)
    model = kmeans_fit(x, 3, seed=5)
    assert model.inertia == 0.0


def test_assignment_tie_goes_to_lowest_index():
    c = np.zeros((6, 1))
    c[:, 0] = [100, 101, -1.0, 102, 103, 1.0]
    toks = kmeans_assign(np.array([[0.0]]), Codebook(c))
    assert toks.tokens.tolist() == [2]
    assert toks.vocab == 6


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30), st.integers(1, 8), st.integers(1, 4))
def test_assignment_matches_brute_force(seed, n, k, d):
    g = np.random.default_rng(seed)
    x = g.integers(-3, 4, size=(n, d)).astype(float)  # small integers produce many ties
    c = g.integers(-3, 4, size=(k, d)).astype(float)
    assert kmeans_assign(x, Codebook(c)).tokens.tolist() == brute_assign(x.tolist(), c.tolist())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40), st.integers(1, 6))
def test_inertia_never_increases(seed, n, k):
    g = np.random.default_rng(seed)
    x = g.normal(size=(n, 2))
    k = min(k, n)
    model = kmeans_fit(x, k, seed=seed)
    hist = np.array(model.inertia_history)
    assert np.all(np.diff(hist) <= 1e-12 * hist[:-1] + 1e-300)
    assert model.inertia == hist[-1]
    assert 1 <= model.iterations_run <= 100


def test_fit_is_deterministic(rng):
    x = rng.normal(size=(200, 4))
    a, b = kmeans_fit(x, 5, seed=11), kmeans_fit(x, 5, seed=11)
    assert a == b
    assert a.centroids.entries.tobytes() == b.centroids.entries.tobytes()


def test_max_iters_respected(rng):
    x = rng.normal(size=(300, 2))
    assert kmeans_fit(x, 8, max_iters=1).iterations_run == 1


def test_inertia_matches_assignment(rng):
    x = rng.normal(size=(60, 3))
    model = kmeans_fit(x, 4, seed=2)
    lab = kmeans_assign(x, model).tokens
    direct = float(np.sum((x - model.centroids.entries[lab]) ** 2))
    assert model.inertia == pytest.approx(direct, rel=1e-12)


def test_accepts_feature_sequence(rng):
    x = rng.normal(size=(20, 2))
    assert kmeans_fit(FeatureSequence(x), 3, seed=1) == kmeans_fit(x, 3, seed=1)


@pytest.mark.parametrize("k, kwargs", [(0, {}), (11, {}), (2, {"max_iters": 0}), (2, {"tol": -1.0}), (2, {"n_init": 0})])
def test_fit_errors(k, kwargs):
    with pytest.raises(KMeansError):
        kmeans_fit(np.zeros((10, 2)), k, **kwargs)


def test_assign_dimension_mismatch():
    with pytest.raises(ShapeError, match="dimension mismatch"):
        kmeans_assign(np.zeros((3, 2)), Codebook(np.zeros((2, 3))))


def test_restarts_never_worse_than_single_run(rng):
    for trial in range(20):
        x = rng.normal(size=(12, 2))
        single = kmeans_fit(x, 3, seed=trial, n_init=1)
        multi = kmeans_fit(x, 3, seed=trial, n_init=10)
        assert multi.inertia <= single.inertia  # the first restart is the single run


def test_restarts_reach_exhaustive_optimum_on_hard_case():
    # a dataset where one k-means++ run settles in a local minimum
    g = np.random.default_rng([2024, 1])
    n = int(g.integers(2, 13))
    x = g.normal(size=(n, 2))
    opt = exhaustive_two_means(x)
    assert kmeans_fit(x, 2, seed=1, n_init=1).inertia > opt + 1e-6
    assert kmeans_fit(x, 2, seed=1).inertia == pytest.approx(opt, abs=1e-9)
