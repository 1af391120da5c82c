import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regionscope.data import load_dataset
from regionscope.errors import DataError, DegenerateError, ShapeError
from regionscope.net import Layer, MlpNetwork, embed, init_mlp
from regionscope.plane import (
    PlaneEmbedding,
    anchor_pick,
    circumcenter,
    make_plane,
    orthobasis,
    plane_for_dataset,
    restrict_to_plane,
)


def test_right_triangle():
    C = circumcenter(np.array([0.0, 0.0]), np.array([2.0, 0.0]), np.array([0.0, 2.0]))
    np.testing.assert_allclose(C, [1.0, 1.0], atol=1e-15)


def test_equilateral_basis_vectors():
    e = np.eye(6)
    np.testing.assert_allclose(circumcenter(e[0], e[1], e[2]), [1 / 3, 1 / 3, 1 / 3, 0, 0, 0], atol=1e-15)


def test_high_dim_equidistance():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(0, 1, size=(3, 784))
        C = circumcenter(*x)
        d = np.linalg.norm(x - C, axis=1)
        worst = max(worst, d.max() - d.min())
    assert worst < 1e-6


def test_degenerate_anchors():
    x = np.array([0.0, 0.0, 0.0])
    with pytest.raises(DegenerateError):
        circumcenter(x, x, x)
    with pytest.raises(DegenerateError):
        circumcenter(np.array([0.0, 0.0]), np.array([1.0, 1.0]), np.array([2.0, 2.0]))


def test_basis_fixture():
    u1, u2 = orthobasis(None, np.array([3.0, 0.0]), np.array([1.0, 1.0]), np.zeros(2))
    np.testing.assert_allclose(u1, [1, 0], atol=1e-15)
    np.testing.assert_allclose(u2, [0, 1], atol=1e-15)


def test_swapped_anchors_same_projector():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 20))
    C = circumcenter(*x)
    a1, a2 = orthobasis(x[0], x[1], x[2], C)
    b1, b2 = orthobasis(x[0], x[2], x[1], C)
    P = np.outer(a1, a1) + np.outer(a2, a2)
    Q = np.outer(b1, b1) + np.outer(b2, b2)
    np.testing.assert_allclose(P, Q, atol=1e-9)
    for xi in x:
        np.testing.assert_allclose(P @ (xi - C), xi - C, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.integers(3, 50))
def test_basis_orthonormal_and_lift_round_trip(seed, dim):
    rng = np.random.default_rng(seed)
    emb = make_plane(*rng.normal(size=(3, dim)))
    G = np.array([[emb.u1 @ emb.u1, emb.u1 @ emb.u2], [emb.u2 @ emb.u1, emb.u2 @ emb.u2]])
    assert np.abs(G - np.eye(2)).max() < 1e-9
    ab = rng.normal(size=2)
    np.testing.assert_allclose(emb.plane_coords(emb.lift(*ab)), ab, atol=1e-9)
    for xi in emb.anchors:
        np.testing.assert_allclose(emb.lift(*emb.plane_coords(xi)), xi, atol=1e-9)
    np.testing.assert_array_equal(emb.lift(0.0, 0.0), emb.center)


def test_extent_encloses_anchors():
    emb = make_plane(*np.random.default_rng(2).normal(size=(3, 10)))
    assert emb.extent == pytest.approx(1.25 * emb.circumradius)
    assert np.abs(emb.plane_coords(emb.anchors)).max() < emb.extent


def test_transform_matrix():
    emb = make_plane(*np.random.default_rng(3).normal(size=(3, 7)))
    np.testing.assert_allclose(emb.transform() @ np.array([0.3, -0.2, 1.0]), emb.lift(0.3, -0.2), atol=1e-14)


def test_restrict_equivalence_on_probe_grid():
    rng = np.random.default_rng(4)
    emb = make_plane(*rng.uniform(0, 1, size=(3, 784)))
    net = init_mlp([784, 64, 128, 64], rng)
    planar = restrict_to_plane(net, emb)
    g = np.linspace(-emb.extent, emb.extent, 32)
    A, B = np.meshgrid(g, g)
    ab = np.column_stack([A.ravel(), B.ravel()])
    lifted = emb.lift(ab[:, 0], ab[:, 1])
    assert np.abs(embed(planar, ab) - embed(net, lifted)).max() < 1e-9


def test_restrict_selection_and_zero_net():
    emb = make_plane(*np.random.default_rng(5).normal(size=(3, 4)))
    sel = MlpNetwork([Layer(np.eye(4)[:2], np.zeros(2), relu=False)])
    planar = restrict_to_plane(sel, emb)
    np.testing.assert_allclose(planar.layers[0].weights, np.column_stack([emb.u1, emb.u2])[:2], atol=1e-15)
    zero = MlpNetwork([Layer(np.zeros((3, 4)), np.array([1.0, 2.0, 3.0]), relu=False)])
    out = embed(restrict_to_plane(zero, emb), np.random.default_rng(6).normal(size=(5, 2)))
    np.testing.assert_array_equal(out, np.tile([1.0, 2.0, 3.0], (5, 1)))
    with pytest.raises(ShapeError):
        restrict_to_plane(init_mlp([3, 2], np.random.default_rng(0)), emb)


def test_anchor_pick_mnist(mnist_root):
    ds = load_dataset("mnist", "train", mnist_root)
    idx, anchors = anchor_pick(ds.images, ds.labels, (0, 1, 2), seed=0)
    assert ds.labels[idx].tolist() == [0, 1, 2]
    assert anchor_pick(ds.images, ds.labels, (0, 1, 2), seed=0)[0] == idx
    with pytest.raises(DataError):
        anchor_pick(ds.images, ds.labels, (0, 1, 37), seed=0)


def test_plane_resamples_after_degenerate_draw():
    images = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    labels = np.array([0, 1, 1, 2])
    emb = plane_for_dataset(images, labels, (0, 1, 2), seed=0)
    d = np.linalg.norm(emb.anchors - emb.center, axis=1)
    assert d.max() - d.min() < 1e-12
    with pytest.raises(DegenerateError):
        plane_for_dataset(np.zeros((3, 2)), np.array([0, 1, 2]), (0, 1, 2), max_tries=3)


def test_json_round_trip(tmp_path):
    emb = make_plane(*np.random.default_rng(7).normal(size=(3, 9)), anchor_indices=[4, 5, 6])
    emb.dump(tmp_path / "plane.json")
    back = PlaneEmbedding.load(tmp_path / "plane.json")
    for name in ("anchors", "center", "u1", "u2"):
        assert np.array_equal(getattr(emb, name), getattr(back, name))
    assert back.extent == emb.extent and back.anchor_indices == [4, 5, 6]


def test_right_angle_at_first_anchor():
    x = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    emb = make_plane(*x)
    P = np.outer(emb.u1, emb.u1) + np.outer(emb.u2, emb.u2)
    for xi in x:
        np.testing.assert_allclose(P @ (xi - emb.center), xi - emb.center, atol=1e-12)
