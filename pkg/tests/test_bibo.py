import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_stable_retarded
from delaymargin import bibo, freq, simulate
from delaymargin.errors import NoCertificateError, UnstableSystemError
from delaymargin.model import Controller, DelaySystem


def G(h):
    if h == 0:
        return DelaySystem([[-1.0]], [[1.0]])
    return DelaySystem([[0.0]], [[1.0]], discrete=[(h, [[-1.0]])])


@pytest.mark.parametrize("h", [0.5, 1.0, 1.5])
def test_impulse_response_matches_exact_series(h):
    ir = bibo.impulse_response(G(h), "u->v", T_end=8.0, adapt=False)
    t = ir.t[::10]
    ref = oracles.scalar_impulse(0.0, -1.0, h, t)
    assert np.max(np.abs(ir.right[::10, 0, 0] - ref)) < 1e-7


def test_first_order_gains_exact():
    g = bibo.linf_gains(G(0))
    assert g.Minf_nom.value == pytest.approx(1.0, abs=1e-3)
    assert g.Minf_nom.upper >= 1.0 - 1e-12
    # u -> v': delta - e^{-t}, A-norm 1 + 1
    assert g.Minf_nomd.value == pytest.approx(2.0, abs=2e-3)


def test_derivative_channel_carries_unit_mass():
    ir = bibo.impulse_response(G(1.0), "w->zdot", T_end=10.0, adapt=False)
    assert ir.deltas[0, 0, 0] == pytest.approx(1.0)
    assert np.sum(np.abs(ir.deltas[1:])) == 0


@pytest.mark.parametrize("h", [0.5, 1.0])
def test_l1_bounds_exact_series(h):
    ref = oracles.scalar_impulse_l1(0.0, -1.0, h, 40.0, points=8001)
    gain = bibo.certified_l1(G(h), "u->v")
    assert gain.upper >= ref * (1 - 1e-4)
    assert gain.value == pytest.approx(ref, rel=5e-3)


@pytest.mark.parametrize("h", [0.5, 1.0, 1.5])
def test_hardy_littlewood_matches_quadrature(h):
    ref = oracles.half_line_abs_integral(lambda s: oracles.scalar_transfer_derivative(0.0, -1.0, h, s))
    got = bibo.hardy_littlewood_bound(G(h), "u->v")
    assert got.value == pytest.approx(ref, rel=2e-4)
    # a bound on the BIBO gain must dominate the impulse L1 norm
    assert got.upper >= bibo.certified_l1(G(h), "u->v").value * (1 - 1e-3)


def test_hardy_littlewood_refuses_non_integrable_cases():
    with pytest.raises(NoCertificateError):
        bibo.hardy_littlewood_bound(G(1.0), "u->vdot")
    neutral = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[0.3]])])
    with pytest.raises(NoCertificateError):
        bibo.hardy_littlewood_bound(neutral, "u->v")


def test_neutral_impulse_propagates_jumps():
    c = 0.4
    sys = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[c]])])
    ir = bibo.impulse_response(sys, "w->zdot", T_end=6.0, adapt=False)
    k = np.rint(np.arange(4) / ir.dt).astype(int)
    assert ir.deltas[k, 0, 0] == pytest.approx([1.0, -c, c**2, -(c**3)], rel=1e-9)
    g = bibo.linf_gains(sys)
    assert g.Minfd.upper >= 1.0 / (1.0 - c) - 1e-9


def test_unstable_system_rejected():
    with pytest.raises(UnstableSystemError):
        bibo.linf_gains(G(2.0))


def test_matrix_l1_dominates_simulation():
    sys = DelaySystem([[-1.0, 0.5], [-0.2, -0.8]], [[1.0, 0.0], [0.3, 1.0]], discrete=[(0.7, [[0.1, -0.2], [0.3, 0.0]])])
    g = bibo.certified_l1(sys, "u->v")
    emp = simulate.empirical_linf_gain(sys, T_end=30.0, inputs=[simulate.RandomSwitching(1.0, d, s)
                                                                for d in (0.5, 2.0) for s in range(4)])
    assert emp <= g.upper


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_l2_gain_never_exceeds_bibo_bound(seed):
    sys = random_stable_retarded(np.random.default_rng(seed))
    cert = freq.certify_stability(sys)
    assert cert.stable
    l2 = bibo.l2_gains(sys, certificate=cert)
    li = bibo.linf_gains(sys, certificate=cert)
    assert l2.M2_nom.value <= li.Minf_nom.upper * (1 + 1e-9)
    assert l2.M2.value <= li.Minf.upper * (1 + 1e-9)


def test_closed_loop_printed_map():
    plant = G(2.0)
    _, cert, g = bibo.closed_loop_gains(plant, Controller.static([[-1.0]]))
    assert cert.stable
    printed = lambda s: (s + np.exp(-2 * s)) / (s + 1 + np.exp(-2 * s))  # noqa: E731
    ref, _ = oracles.grid_sup(printed, omega_max=60.0)
    assert g.M2_u.value == pytest.approx(ref, rel=1e-6)
    # r -> u is delta - g with g the impulse response of x' = -x - x(t - 2)
    a_norm = 1.0 + oracles.scalar_impulse_l1(-1.0, -1.0, 2.0, 80.0, points=16001)
    assert g.Minf_u.value == pytest.approx(a_norm, rel=5e-3)
    assert g.Minf_u.upper >= a_norm * (1 - 1e-3)


def test_tail_fit_recovers_exponential():
    t = np.linspace(0, 20, 2001)
    vals = (3.0 * np.exp(-0.7 * t) * np.abs(np.cos(2 * t)))[:, None, None]
    rate, amp, resid = bibo.fit_tail(t, vals, 0.2)
    assert rate == pytest.approx(0.7, rel=2e-2)
    assert amp == pytest.approx(3.0, rel=0.1)
    assert resid < 0.05
