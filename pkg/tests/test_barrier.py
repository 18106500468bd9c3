import numpy as np
import pytest

from cbflearn import (BallOnBeam, DistanceFunctions, DoubleIntegrator,
                      HandcraftedBarrier, LearnedBarrier,
                      LinearClassK, ballbeam_constraints, init_network,
                      integrator_constraints, lie_derivatives,
                      make_hand_barrier)

from conftest import central_jacobian


def hand_only(kind, **kw):
    return LearnedBarrier(make_hand_barrier(kind, **kw), None)


def test_integrator_hand_values():
    bar = hand_only("integrator_vel")
    assert bar.value([0.0, 0.0]) == 2.0
    assert bar.value([0.0, 2.0]) == 0.0


def test_ballbeam_hand_value():
    bar = hand_only("ballbeam_angle", gamma0=1.0, beta_bar=0.5)
    assert bar.value([0.0, 0.5, 0.0, -1.0]) == pytest.approx(1.0)


def test_hand_gradients():
    np.testing.assert_allclose(hand_only("integrator_vel").gradient([4.0, 1.0]),
                               [0.0, -1.0])
    np.testing.assert_allclose(
        hand_only("ballbeam_angle", gamma0=1.0).gradient([0.1, 0.2, 0.3, 0.4]),
        [0.0, -1.0, 0.0, -1.0])


def test_learned_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    for seed, kind, n in ((0, "integrator_vel", 2), (1, "ballbeam_angle", 4)):
        net = init_network(seed, [n, 16, 16, 1])
        bar = LearnedBarrier(make_hand_barrier(kind), net)
        for _ in range(50):
            x = rng.normal(size=n)
            fd = central_jacobian(lambda xx: np.array([bar.value(xx)]), x)[0]
            ana = bar.gradient(x)
            scale = np.maximum(np.abs(fd), 1e-3)
            assert np.max(np.abs(ana - fd) / scale) < 1e-6


def test_value_and_gradient_consistent():
    net = init_network(2, [2, 8, 8, 1])
    bar = LearnedBarrier(make_hand_barrier("integrator_vel"), net)
    x = np.array([-3.0, 1.4])
    v, g = bar.value_and_gradient(x)
    assert v == pytest.approx(bar.value(x), abs=1e-15)
    np.testing.assert_allclose(g, bar.gradient(x), atol=1e-15)


def test_lie_derivatives_integrator():
    bar = hand_only("integrator_vel")
    sys = DoubleIntegrator()
    lie = lie_derivatives(bar, sys, [0.0, 1.0])
    assert lie.lf == 0.0
    np.testing.assert_allclose(lie.lg, [-1.0])


def test_lie_derivatives_zero_gradient():
    flat = HandcraftedBarrier("flat", lambda x: 0.0,
                              lambda x: np.zeros(2), {})
    sys = DoubleIntegrator()
    lie = lie_derivatives(LearnedBarrier(flat, None), sys, [0.0, 0.0])
    assert lie.lf == 0.0
    np.testing.assert_allclose(lie.lg, [0.0])


def test_lie_derivatives_ballbeam_origin():
    bob = BallOnBeam(i_beam=0.5)
    bar = hand_only("ballbeam_angle", gamma0=1.0)
    lie = lie_derivatives(bar, bob, np.zeros(4))
    np.testing.assert_allclose(lie.lg, [-1.0 / 0.5])


def test_lie_derivatives_linear_in_gradient():
    sys = DoubleIntegrator()
    g = np.array([0.7, -1.3])
    for scale in (2.0, -0.5, 10.0):
        base = HandcraftedBarrier("a", lambda x: 1.0, lambda x: g.copy(), {})
        scaled = HandcraftedBarrier("b", lambda x: 1.0,
                                    lambda x, s=scale: s * g, {})
        x = np.array([1.2, -0.4])
        l0 = lie_derivatives(LearnedBarrier(base, None), sys, x)
        l1 = lie_derivatives(LearnedBarrier(scaled, None), sys, x)
        assert l1.lf == pytest.approx(scale * l0.lf, abs=1e-14)
        np.testing.assert_allclose(l1.lg, scale * l0.lg, atol=1e-14)


def test_is_safe_examples():
    con = integrator_constraints()
    assert con.is_safe([0.0, 2.9])
    assert not con.is_safe([0.0, 3.1])
    assert con.is_safe([0.0, 3.0])    # exact boundary counts as safe
    bob_con = ballbeam_constraints()
    assert not bob_con.is_safe([0.0, 0.7, 0.0, -2.6])
    assert bob_con.is_safe([0.0, 0.7, 0.0, -2.4])


def test_near_boundary_examples():
    con = integrator_constraints()
    assert con.near_boundary([0.0, 2.95], 0.1)
    assert not con.near_boundary([0.0, 0.0], 0.1)
    assert con.near_boundary([0.0, 3.0], 1e-9)
    with pytest.raises(ValueError):
        con.near_boundary([0.0, 0.0], 0.0)


def test_conservative_premise_integrator():
    # handcrafted superlevel set is inside the true safe set on a wide grid
    bar = hand_only("integrator_vel")
    con = integrator_constraints()
    for x in np.linspace(-20, 5, 26):
        for v in np.linspace(-5, 5, 41):
            state = [x, v]
            if bar.value(state) >= 0.0:
                assert con.is_safe(state)


def test_conservative_premise_ballbeam_domain():
    # the angle barrier is declared on beta <= beta_bar; over that domain
    # and the rate range the filter maintains, its superlevel set stays safe
    bar = hand_only("ballbeam_angle", gamma0=1.0, beta_bar=0.5)
    con = ballbeam_constraints()
    for beta in np.linspace(-0.75, 0.5, 11):
        for betadot in np.linspace(-2.5, 3.0, 23):
            state = [0.3, beta, -0.2, betadot]
            if bar.value(state) >= 0.0:
                assert con.is_safe(state)


def test_distance_functions_integrator():
    dist = DistanceFunctions(integrator_constraints())
    assert dist.d_plus([0.0, 2.5]) == pytest.approx(0.5)
    assert dist.d_minus([0.0, 2.5]) == pytest.approx(0.5)
    assert dist.d_plus([0.0, 3.5]) == pytest.approx(-0.5)


def test_distance_functions_ballbeam():
    dist = DistanceFunctions(ballbeam_constraints())
    x = [0.0, 0.6, 0.0, -1.0]
    assert dist.d_plus(x) == pytest.approx(min(0.75 - 0.6, -1.0 + 2.5))
    assert dist.d_minus(x) == pytest.approx(max(0.75 - 0.6, -1.0 + 2.5))


def test_distance_signs_and_boundary_agreement():
    con = ballbeam_constraints()
    dist = DistanceFunctions(con)
    rng = np.random.default_rng(11)
    for _ in range(200):
        x = np.array([rng.uniform(-1, 1), rng.uniform(-1.5, 1.5),
                      rng.uniform(-2, 2), rng.uniform(-4, 4)])
        if con.is_safe(x):
            assert dist.d_plus(x) >= 0.0
        if np.all(con.margins(x) > 0.0):   # every constraint violated
            assert dist.d_minus(x) < 0.0
    # both distances vanish together where every constraint is tight
    corner = [0.0, 0.75, 0.0, -2.5]
    assert dist.d_plus(corner) == 0.0
    assert dist.d_minus(corner) == 0.0
    int_dist = DistanceFunctions(integrator_constraints())
    assert int_dist.d_plus([0.0, 3.0]) == int_dist.d_minus([0.0, 3.0]) == 0.0


def test_class_k():
    alpha = LinearClassK(5.0)
    assert alpha(0.0) == 0.0
    assert alpha(2.0) == 10.0
    assert alpha(3.0) > alpha(2.0)
    with pytest.raises(ValueError):
        LinearClassK(0.0)


def test_hand_barrier_unknown():
    with pytest.raises(ValueError):
        make_hand_barrier("circle")
    with pytest.raises(ValueError):
        make_hand_barrier("integrator_vel", radius=2.0)
