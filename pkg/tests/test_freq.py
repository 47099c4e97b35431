import csv
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import lambertw

import oracles
from conftest import random_stable_retarded
from delaymargin import freq
from delaymargin.errors import CharacteristicRootError, HypothesisHViolation, UnstableSystemError, UnsupportedError
from delaymargin.model import DelaySystem, Distributed


def scalar(a, b, h):
    return DelaySystem([[a]], [[1.0]], discrete=[(h, [[b]])])


def lambert_roots(a, b, h, branches=60):
    """Roots of s - a - b e^{-hs}: s = a + W_k(b h e^{-a h}) / h."""
    z = b * h * math.exp(-a * h)
    return np.array([a + complex(lambertw(z, k)) / h for k in range(-branches, branches + 1)])


def test_transfer_matches_closed_form():
    sys = scalar(-0.3, -1.0, 0.7)
    s = np.array([0.1 + 2j, 1.5 - 0.3j, 3j])
    got = freq.transfer(sys, s, "u->v")[:, 0, 0]
    assert np.allclose(got, oracles.scalar_transfer(-0.3, -1.0, 0.7, s), rtol=1e-13)
    gd = freq.transfer(sys, s, "u->vdot")[:, 0, 0]
    assert np.allclose(gd, s * oracles.scalar_transfer(-0.3, -1.0, 0.7, s), rtol=1e-13)


def test_transfer_derivative_matches_closed_form():
    s = np.array([0.2 + 1j, 2.0 + 0.5j])
    got = freq.transfer_derivative(scalar(0.0, -1.0, 1.0), s, "u->v")[:, 0, 0]
    assert np.allclose(got, oracles.scalar_transfer_derivative(0.0, -1.0, 1.0, s), rtol=1e-12)


@given(st.integers(0, 10_000))
def test_transfer_derivative_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    sys = random_stable_retarded(rng)
    for which in ("u->v", "w->zdot"):
        s = complex(rng.uniform(0, 2), rng.uniform(-10, 10))
        step = 1e-5 * (1 + abs(s))
        fd = (freq.transfer(sys, s + step, which) - freq.transfer(sys, s - step, which)) / (2 * step)
        an = freq.transfer_derivative(sys, s, which)
        assert np.linalg.norm(an - fd) <= 1e-6 * max(np.linalg.norm(an), 1e-12)


def test_transfer_raises_at_characteristic_root():
    # s = i solves s + e^{-pi s / 2} = 0
    with pytest.raises(CharacteristicRootError):
        freq.transfer(scalar(0.0, -1.0, math.pi / 2), 1j)


def test_unknown_channel():
    with pytest.raises(ValueError):
        freq.transfer(scalar(0.0, -1.0, 1.0), 1j, "x->y")


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=3), st.floats(0.2, 3.0),
       st.complex_numbers(max_magnitude=20, allow_nan=False, allow_infinity=False))
def test_kernel_transform_matches_quadrature(coeffs, D, s):
    h = np.polynomial.polynomial.Polynomial(coeffs)
    re = integrate.quad(lambda t: h(t) * (np.exp(-s * t)).real, 0, D, limit=200)[0]
    im = integrate.quad(lambda t: h(t) * (np.exp(-s * t)).imag, 0, D, limit=200)[0]
    got = freq.kernel_transform(coeffs, D, s)
    scale = sum(abs(c) * D ** (k + 1) for k, c in enumerate(coeffs)) * math.exp(max(0.0, -s.real) * D)
    assert abs(got - complex(re, im)) <= 1e-8 * (1 + scale)


@given(st.floats(-2.0, 0.5), st.floats(-3.0, 3.0), st.floats(0.1, 3.0))
def test_root_bound_contains_every_rhp_root(a, b, h):
    sys = scalar(a, b, h)
    bound = freq.rhp_root_bound(sys, 0.5)
    for r in lambert_roots(a, b, h):
        if r.real >= -0.5:
            assert abs(r) <= bound * (1 + 1e-9)


@given(st.floats(-1.5, 0.8), st.floats(-3.0, 1.0), st.floats(0.1, 3.0))
def test_certificate_counts_lambert_roots(a, b, h):
    roots = lambert_roots(a, b, h)
    # stay away from roots on (or next to) the boundary
    assume(np.min(np.abs(roots.real)) > 0.02)
    assume(a * h < 0.95 or a > 0)
    cert = freq.certify_stability(scalar(a, b, h))
    assert cert.verdict in ("stable", "unstable")
    assert cert.winding == int(np.sum(roots.real > 0))
    assert cert.stable == oracles.hayes_stable(a, b, h)


def test_certificate_boundary_pair():
    assert freq.certify_stability(scalar(0.0, -1.0, 1.55)).verdict == "stable"
    cert = freq.certify_stability(scalar(0.0, -1.0, 1.60))
    assert cert.verdict == "unstable"
    assert cert.winding == 2


def test_certificate_delay_free():
    assert freq.certify_stability(DelaySystem(np.diag([-1.0, -2.0]), np.eye(2))).stable
    assert freq.certify_stability(DelaySystem(np.diag([-1.0, 0.3]), np.eye(2))).winding == 1


def test_certificate_with_distributed_term():
    # x' = -x + int_0^1 c x(t - theta) dtheta, c = 0.5: delay-independent stable
    sys = DelaySystem([[-1.0]], [[1.0]], distributed=Distributed(1.0, (0.5,)))
    assert freq.certify_stability(sys).stable
    # x' = int_0^1 x(t - theta) dtheta has a real root s > 0 with (1 - e^{-s}) / s = s
    assert not freq.certify_stability(DelaySystem([[0.0]], [[1.0]], distributed=Distributed(1.0, (1.0,)))).stable


def test_certificate_neutral_scalar():
    # x' + 0.5 x'(t - 1) = -x: |0.5| < 1 and the retarded part is delay-independent stable
    sys = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[0.5]])])
    assert freq.certify_stability(sys).stable
    with pytest.raises(HypothesisHViolation):
        freq.rhp_root_bound(DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[1.2]])]))


def test_hinf_first_order():
    g = freq.hinf_norm(DelaySystem([[-2.0]], [[1.0]]), "u->v")
    assert g.value == pytest.approx(0.5, rel=1e-9)
    assert g.upper >= 0.5
    gd = freq.hinf_norm(DelaySystem([[-2.0]], [[1.0]]), "u->vdot")
    assert gd.value == pytest.approx(1.0, rel=1e-4)


@pytest.mark.parametrize("h", [0.5, 1.0, 1.5])
def test_hinf_matches_dense_grid(h):
    g = freq.hinf_norm(scalar(0.0, -1.0, h), "u->v")
    ref, _ = oracles.grid_sup(lambda s: oracles.scalar_transfer(0.0, -1.0, h, s), omega_max=50.0)
    assert g.value >= ref * (1 - 1e-12)
    assert g.value <= ref * (1 + 1e-6)
    assert g.error <= 1e-3 * g.value


def test_hinf_requires_stability():
    with pytest.raises(UnstableSystemError):
        freq.hinf_norm(scalar(0.0, -1.0, 2.0))


@given(st.integers(0, 10_000))
def test_hinf_upper_dominates_samples(seed):
    rng = np.random.default_rng(seed)
    sys = random_stable_retarded(rng)
    g = freq.hinf_norm(sys, "u->v")
    w = rng.uniform(0, 30, 200)
    vals = np.linalg.norm(freq.transfer(sys, 1j * w), 2, axis=(-2, -1))
    assert vals.max() <= g.upper * (1 + 1e-9)


def test_commensurate_base():
    sys = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[0.2]]), (1.5, [[0.1]])])
    H, ks = freq.commensurate_base(sys)
    assert H == pytest.approx(0.5)
    assert ks == [2, 3]
    incommensurate = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[0.2]]), (math.sqrt(2), [[0.1]])])
    assert freq.commensurate_base(incommensurate) is None
    with pytest.raises(UnsupportedError):
        freq.chain_location(incommensurate)


def test_chain_location_scalar_polynomial():
    sys = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[0.3]]), (2.0, [[0.2]])])
    # det(1 + 0.3 z + 0.2 z^2)
    ref = np.sort(np.abs(np.roots([0.2, 0.3, 1.0])))
    assert np.allclose(freq.chain_location(sys), ref)


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(0.05, 0.95))
def test_chain_moduli_exceed_one_under_h(entries, size):
    M = np.array(entries).reshape(2, 2)
    nrm = np.linalg.norm(M, 2)
    assume(nrm > 1e-6)
    sys = DelaySystem(-np.eye(2), np.eye(2), neutral=[(1.0, M * size / nrm)])
    assert freq.chain_location(sys).min() > 1.0


def test_frequency_response_csv(tmp_path):
    fr = freq.frequency_response(scalar(0.0, -1.0, 1.0), np.linspace(0, 5, 11))
    path = tmp_path / "fr.csv"
    fr.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["omega", "re_1_1", "im_1_1", "spectral_norm"]
    assert len(rows) == 12
    assert float(rows[3][3]) == pytest.approx(abs(fr.values[2, 0, 0]))
    with pytest.raises(ValueError):
        freq.frequency_response(scalar(0.0, -1.0, 1.0), [1.0, 0.5])
