import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from tube_rmpc.exceptions import Degenerate, Infeasible, Unbounded
from tube_rmpc.geometry import (
    HPolytope,
    VPolytope,
    canonicalize,
    clean_rows,
    contains_set,
    facet_enum,
    from_dict,
    intersect,
    linear_map,
    min_scale_containment,
    minkowski_sum,
    pontryagin_diff,
    remove_redundancy,
    scaled_diff,
    set_equal,
    support,
    support_offsets,
    sum_of_maps,
    vertex_enum,
    volume,
)

from .conftest import random_polytope

seeds = st.integers(0, 2**31 - 1)
dims = st.sampled_from([2, 3])


def _poly(seed, d, scale=1.0):
    rng = np.random.default_rng(seed)
    return canonicalize(random_polytope(rng, d, scale=scale))


def test_box_support_and_volume():
    B = HPolytope.box([-1, -2], [3, 4])
    assert support(B, [1, 0]) == pytest.approx(3)
    assert support(B, [0, -1]) == pytest.approx(2)
    assert volume(B) == pytest.approx(24)


def test_unbounded_and_empty_support():
    slab = HPolytope(np.array([[0.0, 1.0], [0.0, -1.0]]), np.array([1.0, 1.0]))
    with pytest.raises(Unbounded):
        support(slab, [1, 0])
    assert not slab.is_bounded
    empty = HPolytope(np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
    assert empty.is_empty
    with pytest.raises(Infeasible):
        support(empty, [1.0])
    with pytest.raises(Infeasible):
        vertex_enum(empty)


def test_zero_rows_rejected_and_cleaned():
    with pytest.raises(ValueError):
        HPolytope(np.array([[0.0, 0.0]]), np.array([1.0]))
    H, h = clean_rows(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([1.0, 2.0]))
    assert H.shape == (1, 2)
    H, h = clean_rows(np.array([[0.0, 0.0]]), np.array([-1.0]))
    assert HPolytope(H, h).is_empty


def test_canonicalize_degenerate_and_duplicate():
    seg = canonicalize([[0, 0], [1, 1], [0.5, 0.5], [1, 1]])
    assert seg.n_vertices == 2
    pt = canonicalize([[2.0, 3.0]] * 5)
    assert pt.n_vertices == 1
    sq = canonicalize([[0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0.5], [1 + 1e-12, 1]])
    assert sq.n_vertices == 4
    with pytest.raises(Degenerate):
        facet_enum(seg)
    assert volume(seg) == 0.0
    with pytest.raises(Degenerate):
        volume(seg, strict=True)


def test_one_dimensional_round_trip():
    P = canonicalize([[-2.0], [0.5], [3.0]])
    H = facet_enum(P)
    assert set_equal(P, H)
    assert volume(H) == pytest.approx(5.0)


def test_dict_round_trip():
    B = HPolytope.box([-1, -1], [1, 2])
    assert set_equal(from_dict(B.to_dict()), B)
    V = B.vertices
    assert set_equal(from_dict(V.to_dict()), B)


def test_contains_set_flat_container():
    seg = canonicalize([[0, 0], [2, 2]])
    assert contains_set(seg, VPolytope.point([1, 1]))
    assert not contains_set(seg, VPolytope.point([1, 1.1]))


def test_min_scale_requires_origin_interior():
    X = HPolytope.box([0, 0], [1, 1])
    with pytest.raises(ValueError):
        min_scale_containment(VPolytope.point([0.5, 0.5]), X)


def test_scaled_diff_rejects_negative():
    A = HPolytope.box([-1, -1], [1, 1])
    with pytest.raises(ValueError):
        scaled_diff(A, -1.0, A, 1.0)


@settings(max_examples=40, deadline=None)
@given(seeds, dims)
def test_volume_matches_qhull(seed, d):
    P = _poly(seed, d)
    assert volume(P) == pytest.approx(ConvexHull(P.V).volume, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds, dims)
def test_h_v_round_trip(seed, d):
    P = _poly(seed, d)
    H = facet_enum(P)
    V = vertex_enum(H)
    assert set_equal(P, V)
    assert V.n_vertices == P.n_vertices


@settings(max_examples=40, deadline=None)
@given(seeds, dims)
def test_minkowski_support_additive(seed, d):
    rng = np.random.default_rng(seed)
    A = canonicalize(random_polytope(rng, d))
    B = canonicalize(random_polytope(rng, d, scale=0.3))
    S = minkowski_sum(A, B)
    D = rng.normal(size=(20, d))
    # brute force over all pairwise sums, no hull involved
    brute = np.max((A.V[:, None, :] + B.V[None, :, :]).reshape(-1, d) @ D.T, axis=0)
    assert np.allclose(support_offsets(S, D), brute, atol=1e-10)
    assert np.allclose(support_offsets(S, D), support_offsets(A, D) + support_offsets(B, D), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seeds, dims)
def test_pontryagin_pointwise(seed, d):
    rng = np.random.default_rng(seed)
    A = facet_enum(canonicalize(random_polytope(rng, d, scale=2.0)))
    B = canonicalize(random_polytope(rng, d, scale=0.2))
    C = pontryagin_diff(A, B)
    for x in rng.uniform(-3, 3, size=(40, d)):
        inside = bool(np.all(A.H @ (x + B.V).T <= A.h[:, None] + 1e-9))
        if C.contains_point(x, 1e-10) != inside:
            # only allowed on the boundary
            assert np.min(np.abs(C.H @ x - C.h)) < 1e-8
    if not C.is_empty:
        assert contains_set(A, minkowski_sum(C.vertices, B), 1e-8)


@settings(max_examples=30, deadline=None)
@given(seeds, dims, st.floats(0.5, 3.0), st.floats(0.0, 1.0))
def test_scaled_diff_definition(seed, d, l1, l2):
    rng = np.random.default_rng(seed)
    A = facet_enum(canonicalize(random_polytope(rng, d)))
    B = canonicalize(random_polytope(rng, d, scale=0.1))
    C = scaled_diff(A, l1, B, l2)
    ref = pontryagin_diff(A.scale(l1), B.scale(l2))
    assert np.allclose(C.h, ref.h, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds, dims)
def test_redundancy_removal_preserves_set(seed, d):
    rng = np.random.default_rng(seed)
    P = facet_enum(canonicalize(random_polytope(rng, d)))
    extra = rng.normal(size=(10, d))
    Hx = np.vstack([P.H, extra])
    hx = np.r_[P.h, support_offsets(P, extra) + rng.uniform(0, 1, 10)]
    Q = remove_redundancy(HPolytope(Hx, hx))
    assert set_equal(P, Q)
    assert Q.n_facets == P.n_facets


@settings(max_examples=30, deadline=None)
@given(seeds, dims, st.floats(0.1, 5.0))
def test_min_scale_containment_tight(seed, d, alpha):
    rng = np.random.default_rng(seed)
    X = facet_enum(canonicalize(random_polytope(rng, d)))
    S = canonicalize(random_polytope(rng, d, scale=alpha))
    g = min_scale_containment(S, X)
    assert contains_set(X.scale(g), S, 1e-8)
    assert not contains_set(X.scale(g * (1 - 1e-6)), S, 1e-12)


@settings(max_examples=20, deadline=None)
@given(seeds, dims)
def test_linear_map_and_sum_of_maps(seed, d):
    rng = np.random.default_rng(seed)
    P = _poly(seed, d)
    M1, M2 = rng.normal(size=(d, d)), rng.normal(size=(d, d))
    S = sum_of_maps([M1, M2], P)
    D = rng.normal(size=(10, d))
    expect = support_offsets(linear_map(M1, P), D) + support_offsets(linear_map(M2, P), D)
    assert np.allclose(support_offsets(S, D), expect, atol=1e-9)


def test_intersect_boxes():
    A = HPolytope.box([-1, -1], [1, 1])
    B = HPolytope.box([0, 0], [2, 2])
    assert volume(intersect(A, B)) == pytest.approx(1.0)
    C = HPolytope.box([5, 5], [6, 6])
    assert intersect(A, C).is_empty
