import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbm_lab.errors import GeometryError
from rbm_lab.geometry import (DomainGeometry, canonicalize, geodesic_dist, inward_normal, min_image_diff,
                              shape_apply, tangent_project)

T2 = DomainGeometry.torus(2.0)
coord = st.floats(-50, 50, allow_nan=False)
vec = st.tuples(coord, coord, coord).map(np.array)
rhos = st.floats(1.01, 20.0)
unit = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda t: np.linalg.norm(t) > 1e-3).map(lambda t: np.array(t) / np.linalg.norm(t))


@pytest.mark.parametrize("raw, expect", [
    ((2.05, 0, 0), (-1.95, 0, 0)),
    ((0.5, -2.0, 3.9), (0.5, -2.0, -0.1)),
    ((1.0, 1.0, 1.0), (1.0, 1.0, 1.0)),
])
def test_canonicalize_examples(raw, expect):
    np.testing.assert_allclose(canonicalize(raw, T2), expect, atol=1e-12)


def test_canonicalize_rejects_nonfinite():
    with pytest.raises(GeometryError):
        canonicalize([np.nan, 0, 0], T2)
    with pytest.raises(GeometryError):
        canonicalize([np.inf, 0, 0], DomainGeometry.exterior())


def test_exterior_never_wraps():
    p = np.array([100.0, -3.0, 7.5])
    np.testing.assert_array_equal(canonicalize(p, DomainGeometry.exterior()), p)


def test_rho_must_exceed_one():
    with pytest.raises(GeometryError):
        DomainGeometry.torus(1.0)


@pytest.mark.parametrize("x, y, d, n", [
    ((1.9, 0, 0), (-1.9, 0, 0), (-0.2, 0, 0), 0.2),
    ((0.3, 0.2, -1.0), (0.3, 0.2, -1.0), (0, 0, 0), 0.0),
    ((0, 0, 1.5), (0, 0, -1.5), (0, 0, -1.0), 1.0),
])
def test_min_image_examples(x, y, d, n):
    np.testing.assert_allclose(min_image_diff(x, y, T2), d, atol=1e-12)
    assert geodesic_dist(x, y, T2) == pytest.approx(n, abs=1e-12)


def test_min_image_tie_goes_to_lower_end():
    d = min_image_diff([1.0, 0, 0], [-1.0, 0, 0], T2)
    assert d[0] == -2.0


@given(vec, rhos)
def test_canonicalize_idempotent_and_in_cell(p, rho):
    g = DomainGeometry.torus(rho)
    c = canonicalize(p, g)
    assert np.all(c >= -rho) and np.all(c < rho)
    np.testing.assert_array_equal(canonicalize(c, g), c)
    k = (p - c) / (2 * rho)
    np.testing.assert_allclose(k, np.round(k), atol=1e-9)


@given(vec, vec, rhos)
def test_min_image_beats_all_27_images(x, y, rho):
    g = DomainGeometry.torus(rho)
    x, y = canonicalize(x, g), canonicalize(y, g)
    d = np.linalg.norm(min_image_diff(x, y, g))
    assert d <= rho * math.sqrt(3) + 1e-9
    for shift in itertools.product((-1, 0, 1), repeat=3):
        assert d <= np.linalg.norm(x - y + 2 * rho * np.array(shift)) + 1e-9


@given(vec, vec, vec, rhos)
def test_geodesic_metric_axioms(x, y, z, rho):
    g = DomainGeometry.torus(rho)
    x, y, z = (canonicalize(p, g) for p in (x, y, z))
    dxy = geodesic_dist(x, y, g)
    assert dxy == geodesic_dist(y, x, g)
    assert geodesic_dist(x, x, g) == 0.0
    assert dxy <= geodesic_dist(x, z, g) + geodesic_dist(z, y, g) + 1e-12


@pytest.mark.parametrize("x", [(1, 0, 0), (0, 0, -1)])
def test_inward_normal_radial(x):
    np.testing.assert_allclose(inward_normal(x), x)


def test_inward_normal_off_sphere():
    with pytest.raises(GeometryError):
        inward_normal([0.5, 0, 0])


@pytest.mark.parametrize("v, expect", [((0, 0, 1), (0, 0, 0)), ((1, 0, 0), (1, 0, 0)), ((1, 0, 1), (1, 0, 0))])
def test_tangent_project_examples(v, expect):
    np.testing.assert_allclose(tangent_project([0, 0, 1.0], v), expect, atol=1e-15)


@given(unit, vec)
def test_tangent_project_idempotent_and_orthogonal(x, v):
    p = tangent_project(x, v)
    scale = max(1.0, np.linalg.norm(v))
    np.testing.assert_allclose(tangent_project(x, p), p, atol=1e-12 * scale)
    assert abs(p @ inward_normal(x)) <= 1e-12 * scale


def test_shape_operator_identity(rng):
    x = np.array([0.0, 1.0, 0.0])
    for _ in range(3):
        v = tangent_project(x, rng.standard_normal(3))
        np.testing.assert_array_equal(shape_apply(x, v), v)
