import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import plane_patch, random_rotation, seeds
from spdf.core import InsufficientPointsError, Label, PointCloud, SpectralDecomp, eigendecompose_sym3
from spdf.voting import (
    DegeneratePairError,
    VoteConfig,
    cftv_vote,
    first_pass,
    interpret,
    neighborhoods,
    remove_ball,
    saliency_field,
    second_pass,
)


def literal_vote(x_i, x_j, K, sigma):
    """The vote written out term by term, before symmetrisation."""
    d = x_i - x_j
    r = d / np.linalg.norm(d)
    c = np.exp(-(d @ d) / sigma)
    R = np.eye(3) - 2 * np.outer(r, r)
    Rp = (np.eye(3) - 0.5 * np.outer(r, r)) @ R.T
    S = c * R @ K @ Rp
    return 0.5 * (S + S.T)


def test_vote_config_validation():
    with pytest.raises(ValueError):
        VoteConfig(sigma=0.0)
    with pytest.raises(ValueError):
        VoteConfig(k=3)


def test_unit_ball_vote_along_x():
    sigma, d = 0.2, 0.3
    S = cftv_vote([d, 0, 0], [0, 0, 0], np.eye(3), sigma)
    c = np.exp(-d * d / sigma)
    assert np.allclose(S, c * np.diag([0.5, 1, 1]), atol=1e-15)


def test_far_vote_vanishes():
    S = cftv_vote([100.0, 0, 0], [0, 0, 0], np.eye(3), 0.2)
    assert np.abs(S).max() < 1e-12


def test_stick_perpendicular_passes_unchanged():
    n = np.array([0.0, 0.0, 1.0])
    S = cftv_vote([0.4, 0.1, 0], [0, 0, 0], np.outer(n, n), 0.5)
    c = np.exp(-(0.16 + 0.01) / 0.5)
    assert np.allclose(S, c * np.outer(n, n), atol=1e-15)


def test_coincident_pair_rejected():
    with pytest.raises(DegeneratePairError):
        cftv_vote([1.0, 2, 3], [1.0, 2, 3], np.eye(3), 0.2)


@given(seeds)
def test_unit_ball_vote_closed_form(seed):
    r = np.random.default_rng(seed)
    x_i, x_j = r.normal(size=3), r.normal(size=3)
    sigma = r.uniform(0.05, 5.0)
    S = cftv_vote(x_i, x_j, np.eye(3), sigma)
    d = x_i - x_j
    rhat = d / np.linalg.norm(d)
    c = np.exp(-(d @ d) / sigma)
    assert np.abs(S - c * (np.eye(3) - 0.5 * np.outer(rhat, rhat))).max() < 1e-12


@given(seeds)
def test_vote_matches_literal_product(seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(3, 3))
    K = A @ A.T
    x_i, x_j = r.normal(size=3), r.normal(size=3)
    S = cftv_vote(x_i, x_j, K, 2.0)
    assert np.allclose(S, literal_vote(x_i, x_j, K, 2.0), atol=1e-12)
    assert np.allclose(S, S.T)


def test_neighborhoods_exclude_self_and_flag_duplicates():
    pts = np.array([[0.0, 0, 0], [0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0]])
    nb = neighborhoods(pts, 4)
    assert not np.any(nb.indices == np.arange(6)[:, None])
    assert nb.duplicate_count == 2
    assert not nb.valid[0, 0] and nb.indices[0, 0] == 1


def test_first_pass_needs_more_than_k_points():
    with pytest.raises(InsufficientPointsError):
        first_pass(np.zeros((4, 3)), VoteConfig(k=4))


def test_isolated_pair():
    # two close points, the rest far enough that their votes underflow
    pts = np.array([[0.0, 0, 0], [0.1, 0, 0], [100, 0, 0], [200, 0, 0], [300, 0, 0], [400, 0, 0]])
    cfg = VoteConfig(sigma=0.2, k=4)
    field = first_pass(pts, cfg)
    c = np.exp(-0.01 / 0.2)
    assert np.allclose(field.tensors[0], c / 4 * np.diag([0.5, 1, 1]), atol=1e-15)
    assert np.allclose(field.decompose().values[0], np.array([c, c, c / 2]) / 4)


def test_plane_first_pass_normal():
    pts = plane_patch(4000, size=2.0)
    field = first_pass(pts, VoteConfig(sigma=0.05, k=30))
    dec = field.decompose()
    interior = np.all((pts[:, :2] > 0.3) & (pts[:, :2] < 1.7), axis=1)
    cos = np.abs(dec.vectors[interior, 2, 0])
    assert np.all(cos > np.cos(np.radians(5)))


@given(seeds, st.integers(4, 10))
def test_first_pass_eigenvalues_in_unit_interval(seed, k):
    pts = np.random.default_rng(seed).normal(size=(40, 3)) * 0.3
    vals = first_pass(pts, VoteConfig(sigma=0.2, k=k)).decompose().values
    assert vals.min() >= -1e-12 and vals.max() <= 1 + 1e-12


@given(seeds, st.integers(4, 10))
def test_saliency_field_bounds(seed, k):
    pts = np.random.default_rng(seed).normal(size=(40, 3)) * 0.3
    sal = saliency_field(first_pass(pts, VoteConfig(sigma=0.2, k=k)).decompose())
    s = sal.stacked()
    assert s.min() >= -1e-9
    assert np.all(s.sum(axis=1) <= 1 + 1e-9)


@given(seeds)
def test_rotation_equivariance(seed):
    r = np.random.default_rng(seed)
    pts = r.normal(size=(50, 3)) * 0.4
    R = random_rotation(r)
    cfg = VoteConfig(sigma=0.3, k=6)
    a = first_pass(pts, cfg)
    b = first_pass(pts @ R.T, cfg)
    assert np.array_equal(a.neighborhoods.indices, b.neighborhoods.indices) or np.allclose(
        a.neighborhoods.distances, b.neighborhoods.distances, atol=1e-12
    )
    assert np.allclose(b.tensors, R @ a.tensors @ R.T, atol=1e-9)
    sa = second_pass(pts, a, cfg)
    sb = second_pass(pts @ R.T, b, cfg)
    assert np.allclose(sa.stacked(), sb.stacked(), atol=1e-9)


@given(seeds)
def test_translation_invariance(seed):
    r = np.random.default_rng(seed)
    pts = r.normal(size=(50, 3)) * 0.4
    shift = r.uniform(-5, 5, 3)
    cfg = VoteConfig(sigma=0.3, k=6)
    sa = second_pass(pts, first_pass(pts, cfg), cfg)
    sb = second_pass(pts + shift, first_pass(pts + shift, cfg), cfg)
    assert np.allclose(sa.stacked(), sb.stacked(), atol=1e-9)


@given(seeds)
def test_passes_deterministic(seed):
    pts = np.random.default_rng(seed).normal(size=(30, 3))
    cfg = VoteConfig(sigma=0.5, k=5)
    a = second_pass(pts, first_pass(pts, cfg), cfg)
    b = second_pass(pts, first_pass(pts, cfg), cfg)
    assert np.array_equal(a.stacked(), b.stacked())


def test_isotropic_voters_give_zero_field():
    pts = np.random.default_rng(1).normal(size=(20, 3))
    field = second_pass(pts, np.tile(np.eye(3) * 0.3, (20, 1, 1)), VoteConfig(k=5))
    assert np.abs(field.stacked()).max() < 1e-15
    assert np.abs(remove_ball(np.eye(3)[None] * 2)).max() < 1e-15


def test_second_pass_length_mismatch():
    pts = np.random.default_rng(1).normal(size=(20, 3))
    with pytest.raises(ValueError):
        second_pass(pts, np.zeros((19, 3, 3)), VoteConfig(k=5))


def test_plane_labels_surface():
    pts = plane_patch(3000, size=2.0)
    cfg = VoteConfig(sigma=0.05, k=30)
    field = second_pass(pts, first_pass(pts, cfg), cfg)
    interior = np.all((pts[:, :2] > 0.3) & (pts[:, :2] < 1.7), axis=1)
    assert np.mean(field.labels()[interior] == Label.SURFACE) >= 0.95


def test_line_labels_curve_with_tangent():
    r = np.random.default_rng(3)
    t = np.sort(r.random(1500)) * 3.0
    direction = np.array([1.0, 2.0, 2.0]) / 3.0
    pts = t[:, None] * direction
    cfg = VoteConfig(sigma=0.05, k=20)
    field = second_pass(pts, first_pass(pts, cfg), cfg)
    interior = (t > 0.3) & (t < 2.7)
    assert np.mean(field.labels()[interior] == Label.CURVE) >= 0.95
    cos = np.abs(field.directions[interior, :, 2] @ direction)
    assert np.all(cos > np.cos(np.radians(5)))


@pytest.mark.parametrize(
    "values,expected",
    [((1, 0, 0), ((1, 0, 0), Label.SURFACE)), ((1, 1, 0), ((0, 1, 0), Label.CURVE)), ((1, 1, 1), ((0, 0, 1), Label.JUNCTION))],
)
def test_interpret(values, expected):
    s, c, p, lab = interpret(SpectralDecomp(np.array(values, float), np.eye(3)))
    assert (s, c, p) == expected[0] and lab == expected[1]


def test_interpret_ties_prefer_surface_then_curve():
    assert interpret(SpectralDecomp(np.array([2.0, 1, 0]), np.eye(3)))[3] == Label.SURFACE
    assert interpret(SpectralDecomp(np.array([2.0, 2, 1]), np.eye(3)))[3] == Label.CURVE
    assert interpret(SpectralDecomp(np.array([2.0, 1, 1]), np.eye(3)))[3] == Label.SURFACE
