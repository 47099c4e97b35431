import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from delaymargin import bibo, margins
from delaymargin.errors import HypothesisHViolation, PreconditionError, UnsupportedError
from delaymargin.model import Controller, DelaySystem, Distributed, Gain, GainSet, PerturbationBounds

ONE_SIDED = PerturbationBounds(mu=(1.0,), one_sided=True)


def G(h):
    return DelaySystem([[0.0]], [[1.0]], discrete=[(h, [[-1.0]])])


def synthetic(M2=1.0, M2d=2.0, Minf=1.5, Minfd=3.0):
    return GainSet(M2=Gain(M2), M2d=Gain(M2d), Minf=Gain(Minf), Minfd=Gain(Minfd))


@pytest.fixture(scope="module")
def gains_h1():
    return bibo.compute_gains(G(1.0))


def test_hinf_margin_is_reciprocal_of_m2d(gains_h1):
    alpha = margins.max_scaling("thm31_hinf", G(1.0), ONE_SIDED, gains_h1)
    assert alpha == pytest.approx(1.0 / gains_h1.M2d.upper, rel=2e-4)
    assert alpha <= 1.0 / gains_h1.M2d.upper


def test_bibo_margin_is_reciprocal_of_minfd(gains_h1):
    alpha = margins.max_scaling("thm31_bibo", G(1.0), ONE_SIDED, gains_h1)
    assert alpha == pytest.approx(1.0 / gains_h1.Minfd.upper, rel=2e-4)


def test_two_sided_band_costs_sqrt_two():
    sys = G(1.5)
    g = synthetic(M2d=26.0)
    one = margins.max_scaling("thm31_hinf", sys, ONE_SIDED, g)
    two = margins.max_scaling("thm31_hinf", sys, PerturbationBounds(mu=(1.0,)), g)
    assert two == pytest.approx(one / math.sqrt(2), rel=2e-4)


def test_two_sided_margin_capped_by_band_nonnegativity():
    sys = G(0.1)
    g = synthetic(M2d=0.5)
    alpha = margins.max_scaling("thm31_hinf", sys, PerturbationBounds(mu=(1.0,)), g)
    assert alpha == pytest.approx(0.1)


@given(st.floats(0.1, 10.0), st.floats(0.5, 50.0))
def test_margin_scales_inversely_with_template(scale, minfd):
    g = synthetic(Minfd=minfd)
    base = margins.max_scaling("thm31_bibo", G(1.0), ONE_SIDED, g)
    scaled = margins.max_scaling("thm31_bibo", G(1.0), PerturbationBounds(mu=(scale,), one_sided=True), g)
    assert scaled == pytest.approx(base / scale, rel=3e-4)


@given(st.floats(0.5, 20.0), st.floats(0.01, 2.0))
def test_conditions_hold_below_margin_and_fail_above(minfd, eps):
    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(1.0, [[-1.0]])], distributed=Distributed(0.5, (0.3,)))
    pert = PerturbationBounds(mu=(1.0,), eps=eps, one_sided=True)
    g = synthetic(Minfd=minfd, Minf=minfd / 2)
    alpha = margins.max_scaling("thm31_bibo", sys, pert, g)
    assert 0 < alpha < math.inf
    below = margins.thm31_bibo(sys, pert.scaled(alpha * 0.999), g)
    above = margins.thm31_bibo(sys, pert.scaled(alpha * 1.01), g)
    assert below.passed
    assert not above.passed


def test_coupling_term_vanishes_without_distributed_radius():
    rep = margins.thm31_bibo(G(1.0), ONE_SIDED.scaled(0.1), synthetic())
    assert rep.conditions["M_tilde"] == 0
    assert rep.conditions["M"] == pytest.approx(0.3)


def test_no_varying_delay_gives_unbounded_margin():
    sys = DelaySystem([[-1.0]], [[1.0]])
    assert margins.max_scaling("thm31_hinf", sys, PerturbationBounds(), synthetic()) == math.inf


def test_retarded_theorems_reject_neutral_systems():
    sys = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[0.2]])])
    with pytest.raises(PreconditionError):
        margins.thm31_bibo(sys, PerturbationBounds(), synthetic())
    with pytest.raises(PreconditionError):
        margins.thm41_hinf(sys, PerturbationBounds(), Controller.static([[-1.0]]), synthetic())


def test_neutral_theorem_checks_hypothesis_h():
    sys = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[1.1]])])
    with pytest.raises(HypothesisHViolation):
        margins.thm32_neutral_bibo(sys, PerturbationBounds(), synthetic())


def test_neutral_load_doubles_norm_sum():
    sys = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[0.1]])], discrete=[(0.5, [[0.2]])])
    rep = margins.thm32_neutral_bibo(sys, PerturbationBounds(mu=(0.5,)), synthetic(Minfd=2.0))
    assert rep.conditions["M_double_prime"] == pytest.approx(2.0 * (0.5 * 0.2 + 2 * 0.1))


def test_thm32_on_retarded_system_reduces_to_thm31():
    g = synthetic()
    a = margins.thm32_neutral_bibo(G(1.0), ONE_SIDED, g)
    b = margins.thm31_bibo(G(1.0), ONE_SIDED, g)
    assert a.notes
    assert a.alpha_star == pytest.approx(b.alpha_star)


def test_prop42_records_literal_variant():
    sys = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[0.1]])])
    rep = margins.prop42_neutral_stab(sys, PerturbationBounds(), Controller.static([[-0.5]]), synthetic(Minfd=2.0))
    assert rep.conditions["M_cl"] == pytest.approx(0.4)
    assert rep.variants["statement[2 + sum]"]["conditions"]["M_cl"] == pytest.approx(4.2)


def test_thm41_hinf_uses_r_to_u_gain():
    g = synthetic().merged(GainSet(M2_u=Gain(1.25)))
    rep = margins.thm41_hinf(G(2.0), ONE_SIDED, Controller.static([[-1.0]]), g)
    assert rep.alpha_star == pytest.approx(0.8, rel=2e-4)
    assert rep.variants["proof[M2d]"]["conditions"]["M_cl"] == pytest.approx(2.0)


def test_dispatch_needs_controller_for_closed_loop():
    with pytest.raises(PreconditionError):
        margins.check("thm41_bibo", G(2.0), ONE_SIDED, synthetic())
    with pytest.raises(PreconditionError):
        margins.check("nonsense", G(2.0), ONE_SIDED, synthetic())


def test_missing_gain_is_reported():
    with pytest.raises(Exception, match="Minfd"):
        margins.thm31_bibo(G(1.0), ONE_SIDED, GainSet(Minf=Gain(1.0)))


def test_prop43_chain_abscissa():
    c = 0.5
    sys = DelaySystem([[-1.0]], [[1.0]], neutral=[(2.0, [[c]])])
    chk = margins.prop43_check(sys)
    assert chk.finite_poles
    assert chk.min_modulus == pytest.approx(1 / c)
    assert chk.abscissa == pytest.approx(math.log(c) / 2.0)
    with pytest.raises(UnsupportedError):
        margins.prop43_check(G(1.0))


def test_report_json_round_trip(gains_h1):
    rep = margins.thm31_hinf(G(1.0), ONE_SIDED, gains_h1)
    doc = json.loads(rep.to_json())
    assert doc["theorem"] == "thm31_hinf"
    assert doc["verdict"] == rep.verdict
    assert set(doc["conditions"]) == {"M_prime", "M_tilde"}
    assert "M2d" in doc["provenance"]
    assert rep.recheck()
    inf_rep = margins.thm31_hinf(DelaySystem([[-1.0]], [[1.0]]), PerturbationBounds(), synthetic())
    assert json.loads(inf_rep.to_json())["alpha_star"] == "inf"


def test_verdict_matches_conditions():
    rep = margins.thm31_bibo(G(1.0), ONE_SIDED.scaled(0.2), synthetic(Minfd=3.0))
    assert rep.passed == all(v < 1 for v in rep.conditions.values())
    assert rep.verdict == "certified"
    rep = margins.thm31_bibo(G(1.0), ONE_SIDED.scaled(0.5), synthetic(Minfd=3.0))
    assert rep.verdict == "not certified"
