import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divcurl import (
    DimensionMismatchError,
    EllipticConstraintError,
    SystemDefinitionError,
    certify_ellipticity,
    cr_system,
    gradient_system,
    laplacian_symbol,
    load_system,
    new_system,
    save_system,
    symbol,
)
from divcurl.elliptic import sphere_points, system_from_dict, system_to_dict

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_gradient_system_has_no_coefficients():
    s = new_system(2, 2)
    assert s.m == 0 and s.a.shape == (2, 0)
    assert s == gradient_system(2)


def test_cr_system_layout():
    s = new_system(2, 3, [[1j], [0]])
    assert s.m == 1
    assert s.a[0, 0] == 1j and s.a[1, 0] == 0
    assert str(s) == "L1 = d1 + (0+1j) d3; L2 = d2"


@pytest.mark.parametrize(
    "n, N, coeffs, err",
    [
        (1, 2, [[0]], SystemDefinitionError),
        (3, 2, None, EllipticConstraintError),
        (2, 5, np.zeros((2, 3)), EllipticConstraintError),
        (2, 3, np.zeros((2, 2)), DimensionMismatchError),
        (2, 3, [[np.inf], [0]], SystemDefinitionError),
    ],
)
def test_new_system_rejects(n, N, coeffs, err):
    with pytest.raises(err):
        new_system(n, N, coeffs)


def test_constraint_error_is_distinct():
    assert not issubclass(EllipticConstraintError, DimensionMismatchError)


@pytest.mark.parametrize(
    "sys, xi, expected",
    [
        (gradient_system(2), [3, 4], [3, 4]),
        (cr_system(), [1, 0, 2], [1 + 2j, 0]),
        (cr_system(), [0, 0, 0], [0, 0]),
    ],
)
def test_symbol_examples(sys, xi, expected):
    np.testing.assert_allclose(symbol(sys, xi), expected, atol=0)


def test_symbol_length_mismatch():
    with pytest.raises(DimensionMismatchError):
        symbol(cr_system(), [1.0, 2.0])


def test_laplacian_symbol_examples():
    assert laplacian_symbol(cr_system(), [1, 0, 2]) == 5.0
    assert laplacian_symbol(gradient_system(2), [3, 4]) == 25.0
    degenerate = new_system(2, 3, [[0], [0]])
    assert laplacian_symbol(degenerate, [0, 0, 1]) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.floats(-50, 50, allow_nan=False))
def test_laplacian_symbol_homogeneous(xi, t):
    s = new_system(2, 3, [[0.3 + 1.1j], [-0.7j]])
    lhs = laplacian_symbol(s, t * np.array(xi))
    rhs = t * t * laplacian_symbol(s, xi)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(rhs), 1e-300) + 1e-300


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3),
       st.floats(-50, 50, allow_nan=False))
def test_symbol_linear(x, y, t):
    s = cr_system()
    x, y = np.array(x), np.array(y)
    lhs = symbol(s, x + t * y)
    rhs = symbol(s, x) + t * symbol(s, y)
    scale = np.abs(symbol(s, x)).max() + abs(t) * np.abs(symbol(s, y)).max() + 1e-300
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


@pytest.mark.parametrize("sys", [gradient_system(2), gradient_system(3), cr_system()])
def test_certificate_constant_one(sys):
    cert = certify_ellipticity(sys)
    assert cert.elliptic
    assert abs(cert.constant - 1.0) <= 1e-6
    assert np.isclose(np.linalg.norm(cert.witness_direction), 1.0)


def test_degenerate_system_not_elliptic():
    cert = certify_ellipticity(new_system(2, 3, [[0], [0]]))
    assert not cert.elliptic
    assert cert.constant <= 1e-9
    np.testing.assert_allclose(np.abs(cert.witness_direction), [0, 0, 1], atol=1e-6)


def test_certificate_is_deterministic():
    s = new_system(2, 3, [[0.5 + 0.5j], [1j]])
    assert certify_ellipticity(s, 2000) == certify_ellipticity(s, 2000)


def test_certificate_lower_bound_holds():
    s = new_system(2, 3, [[0.5 + 0.5j], [1j]])
    cert = certify_ellipticity(s)
    rng = np.random.default_rng(0)
    xi = rng.standard_normal((3, 5000))
    vals = laplacian_symbol(s, xi) / np.sum(xi**2, axis=0)
    assert vals.min() >= cert.constant * (1 - 1e-6)


def test_certificate_rejects_tiny_sample():
    with pytest.raises(ValueError):
        certify_ellipticity(cr_system(), sphere_resolution=1)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_sphere_points_unit(N):
    pts = sphere_points(N, 500)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, rtol=1e-12)


def test_json_round_trip(tmp_path):
    s = new_system(2, 3, [[0.25 - 1j], [2j]])
    path = tmp_path / "sys.json"
    save_system(s, path)
    data = json.loads(path.read_text())
    assert data == {"n": 2, "N": 3, "coeffs": [[0.25, -1.0], [0.0, 2.0]]}
    assert load_system(path) == s
    assert system_from_dict(system_to_dict(gradient_system(2))) == gradient_system(2)


@pytest.mark.parametrize(
    "data, err",
    [
        ({"n": 2}, SystemDefinitionError),
        ({"n": 2, "N": 3, "coeffs": [[1, 0]]}, DimensionMismatchError),
        ({"n": 2, "N": 3, "coeffs": [["a", 0], [0, 0]]}, SystemDefinitionError),
        ({"n": 1, "N": 2, "coeffs": []}, SystemDefinitionError),
    ],
)
def test_json_rejects_malformed(data, err):
    with pytest.raises(err):
        system_from_dict(data)
