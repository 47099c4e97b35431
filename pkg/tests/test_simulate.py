import csv
import math

import numpy as np
import pytest

import oracles
from delaymargin import simulate
from delaymargin.errors import HypothesisHViolation, PreconditionError, SchemaError
from delaymargin.model import (
    Constant,
    Controller,
    DelayRealization,
    DelaySystem,
    Distributed,
    PerturbationBounds,
    Sinusoid,
    close_loop,
)


class Forcing:
    """Arbitrary scalar forcing f(t), zero for t < 0."""

    def __init__(self, f):
        self.f = f

    def __call__(self, t, p):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.f(np.maximum(t, 0.0)), 0.0)[..., None] * np.ones(p)


def rk4_error(dt, T=2.0):
    # x' = -2 x + sin(3 t), x(0) = 0
    sys = DelaySystem([[-2.0]], [[1.0]])
    ts = simulate.integrate(sys, input=simulate.SineInput(1.0, 3.0), T_end=T, dt=dt)
    exact = (2 * math.sin(3 * T) - 3 * math.cos(3 * T) + 3 * math.exp(-2 * T)) / 13
    return abs(ts.x[-1, 0] - exact)


def test_delay_free_step_response():
    ts = simulate.integrate(DelaySystem([[-1.0]], [[1.0]]), input=simulate.Step(), T_end=5.0, dt=0.01)
    assert np.allclose(ts.x[:, 0], 1 - np.exp(-ts.t), atol=1e-9)


def test_rk4_order_ratio():
    ratio = rk4_error(0.02) / rk4_error(0.01)
    assert 12 <= ratio <= 20


def test_unit_delay_step_matches_method_of_steps():
    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(1.0, [[-1.0]])])
    ts = simulate.integrate(sys, input=simulate.Step(), T_end=3.0, dt=0.05)
    assert np.allclose(ts.x[:, 0], oracles.step_response_unit_delay(ts.t), atol=1e-10)


def test_variable_delay_manufactured_solution():
    # x = t^3 solves x' = -x(t - tau(t)) + u with the forcing below; t - tau(t) is not monotone
    tau = Sinusoid(0.5, 0.25, 8.0)
    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(0.5, [[-1.0]])])

    def u(t):
        lag = np.maximum(t - tau(t), 0.0)
        return 3 * t**2 + lag**3

    ts = simulate.integrate(sys, DelayRealization(discrete=(tau,)), Forcing(u), T_end=4.0, dt=0.01)
    assert np.allclose(ts.x[:, 0], ts.t**3, rtol=1e-9, atol=1e-9)


def neutral_error(dt):
    # x = t^3 solves x' + 0.5 x'(t - 1) = -x + u
    sys = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[0.5]])])

    def u(t):
        return 3 * t**2 + 0.5 * 3 * np.maximum(t - 1, 0.0) ** 2 + t**3

    ts = simulate.integrate(sys, input=Forcing(u), T_end=4.0, dt=dt)
    return np.abs(ts.x[:, 0] - ts.t**3).max()


def test_neutral_manufactured_solution_second_order():
    # delayed derivatives are interpolated linearly, which caps the order at 2
    e1, e2 = neutral_error(0.02), neutral_error(0.01)
    assert e2 < 5e-5
    assert 3.5 <= e1 / e2 <= 4.5


def distributed_error(dt):
    # x = t^2 solves x' = int_0^1 x(t - theta) d theta + u
    sys = DelaySystem([[0.0]], [[1.0]], distributed=Distributed(1.0, (1.0,)))

    def u(t):
        m = np.minimum(t, 1.0)
        return 2 * t - (t**3 - (t - m) ** 3) / 3

    ts = simulate.integrate(sys, input=Forcing(u), T_end=3.0, dt=dt)
    return np.abs(ts.x[:, 0] - ts.t**2).max()


def test_distributed_manufactured_solution():
    e1, e2 = distributed_error(0.02), distributed_error(0.01)
    assert e2 < 1e-6
    assert e1 / e2 >= 7.5


def test_constant_delay_order_at_least_eight():
    sys = DelaySystem([[-0.5]], [[1.0]], discrete=[(0.7, [[-0.8]])])
    sig = simulate.SineInput(1.0, 2.0)
    ref = simulate.integrate(sys, input=sig, T_end=6.0, dt=0.7 / 1024).x[::32, 0]
    coarse = simulate.integrate(sys, input=sig, T_end=6.0, dt=0.7 / 32).x[:, 0]
    fine = simulate.integrate(sys, input=sig, T_end=6.0, dt=0.7 / 64).x[::2, 0]
    n = min(len(ref), len(coarse), len(fine))
    e1 = np.abs(coarse[:n] - ref[:n]).max()
    e2 = np.abs(fine[:n] - ref[:n]).max()
    assert e1 / e2 >= 8


def test_input_delay_shifts_response():
    base = DelaySystem([[-1.0]], [[1.0]])
    delayed = DelaySystem([[-1.0]], [[0.0]], input_delays=[(0.5, [[1.0]])])
    a = simulate.integrate(base, input=simulate.Step(), T_end=3.0, dt=0.01)
    b = simulate.integrate(delayed, input=simulate.Step(), T_end=3.0, dt=0.01)
    assert np.allclose(b.x[50:, 0], a.x[:-50, 0], atol=1e-9)
    assert np.all(b.x[:50, 0] == 0)


def test_closed_loop_matches_absorbed_system():
    plant = DelaySystem([[0.0]], [[1.0]], discrete=[(2.0, [[-1.0]])])
    ctrl = Controller(((0.0, [[-1.0]]), (0.5, [[0.2]])))
    sig = simulate.SineInput(1.0, 0.7)
    a = simulate.integrate_closed_loop(plant, ctrl, input=sig, T_end=10.0, dt=0.01)
    b = simulate.integrate(close_loop(plant, ctrl), input=sig, T_end=10.0, dt=0.01)
    assert np.allclose(a.x, b.x, atol=1e-12)


def test_divergence_flagged_for_unstable_delay():
    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(2.0, [[-1.0]])])
    ts = simulate.integrate(sys, input=simulate.Step(), T_end=400.0)
    assert ts.diverged
    assert ts.blowup_time is not None and ts.blowup_time < 400.0
    assert ts.linf() == math.inf


def test_growth_ratio_separates_boundary():
    slow = DelaySystem([[0.0]], [[1.0]], discrete=[(1.6, [[-1.0]])])
    fast = DelaySystem([[0.0]], [[1.0]], discrete=[(1.5, [[-1.0]])])
    assert simulate.integrate(slow, input=simulate.Step(), T_end=400.0).growth_ratio() > 1.2
    assert simulate.integrate(fast, input=simulate.Step(), T_end=400.0).growth_ratio() < 1.0


def test_zero_input_gives_zero_trajectory(tmp_path):
    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(1.0, [[-1.0]])])
    ts = simulate.integrate(sys, T_end=2.0, dt=0.1)
    assert not ts.x.any()
    path = tmp_path / "z.csv"
    ts.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "x_1", "dx_1", "u_1"]
    assert all(float(v) == 0.0 for row in rows[1:] for v in row[1:])


def test_step_too_large_for_delay():
    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(0.1, [[-1.0]])])
    with pytest.raises(PreconditionError):
        simulate.integrate(sys, T_end=1.0, dt=0.05)


def test_neutral_hypothesis_enforced():
    sys = DelaySystem([[-1.0]], [[1.0]], neutral=[(1.0, [[1.5]])])
    with pytest.raises(HypothesisHViolation):
        simulate.integrate(sys, T_end=1.0, dt=0.01)


def test_realization_must_match_system():
    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(1.0, [[-1.0]])])
    with pytest.raises(SchemaError):
        simulate.integrate(sys, DelayRealization(discrete=(Constant(1.0), Constant(2.0))), T_end=1.0)


def test_empirical_gains_below_certified_bounds():
    from delaymargin import bibo

    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(1.0, [[-1.0]])])
    g = bibo.compute_gains(sys)
    assert simulate.empirical_linf_gain(sys, T_end=40.0) <= g.Minf_nom.upper
    assert simulate.empirical_l2_gain(sys, T_end=80.0, omegas=[0.5, 0.86, 1.2]) <= g.M2_nom.upper


def test_random_realization_stays_in_bands():
    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(1.0, [[-1.0]]), (0.3, [[0.1]])])
    pert = PerturbationBounds(mu=(0.4, 0.2))
    rng = np.random.default_rng(3)
    for _ in range(20):
        simulate.random_realization(sys, pert, rng, 30.0).check(sys, pert, 30.0)


def test_falsification_is_seed_deterministic():
    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(1.0, [[-1.0]])])
    pert = PerturbationBounds(mu=(1.0,), one_sided=True)
    a = simulate.falsify_margin(None, sys, pert, trials=3, seed=7, scaling=0.3, T_end=20.0)
    b = simulate.falsify_margin(None, sys, pert, trials=3, seed=7, scaling=0.3, T_end=20.0)
    assert a.to_dict() == b.to_dict()
    assert a.counterexamples == 0


def test_falsifier_flags_growth_below_blowup_threshold():
    # delays in [1.5, 3] include unstable constant delays; growth over T = 60 stays far below 1e6
    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(1.5, [[-1.0]])])
    pert = PerturbationBounds(mu=(1.0,), one_sided=True)
    s = simulate.falsify_margin(None, sys, pert, trials=5, seed=0, scaling=1.5)
    assert s.counterexamples == 5
    assert {d["kind"] for d in s.divergences} == {"growth"}


def test_gated_input_switches_off():
    sig = simulate.Gated(simulate.Step(2.0), 1.0)
    assert sig(np.array([0.5, 0.999, 1.0, 3.0]), 1)[:, 0].tolist() == [2.0, 2.0, 0.0, 0.0]
