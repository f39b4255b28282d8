import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svreg.optimize import NumericalFailure, minimise, solve_trust_region
from svreg.pointset import (
    RigidTransform,
    quat_from_axis_angle,
    rotation_error,
    translation_error,
)
from svreg.registration import (
    RegistrationConfig,
    RegistrationError,
    gamma_auto,
    l2_objective,
    objective_gradient,
    optimise_rigid,
    reduced_objective_gradient,
    svr,
)
from svreg.svgm import Svgm
from svreg.synthetic import generate


def single(mean, variance=1.0, weight=1.0):
    return Svgm(np.atleast_2d(np.asarray(mean, dtype=float)), variance, np.array([weight]))


def random_pair(rng, dim, m=4, n=5, variance=None):
    variance = variance or float(rng.uniform(0.2, 1.0))
    gx = Svgm(rng.normal(size=(m, dim)), variance, rng.uniform(0.2, 2.0, m))
    gy = Svgm(rng.normal(size=(n, dim)), variance, rng.uniform(0.2, 2.0, n))
    return gx, gy


def random_transform(rng, dim):
    if dim == 2:
        return RigidTransform(rng.uniform(-math.pi, math.pi), rng.normal(size=2))
    q = rng.normal(size=4)
    return RigidTransform(q / np.linalg.norm(q), rng.normal(size=3))


def moved(g, T):
    return Svgm(T.apply(g.means), g.variance, g.weights)


def oracle_objective(gx, gy, T):
    mpmath.mp.dps = 40
    R, t = T.matrix, T.translation
    var2 = mpmath.mpf(2 * gx.variance)
    norm = (2 * mpmath.pi * var2) ** (-mpmath.mpf(gx.dim) / 2)
    total = mpmath.mpf(0)
    for mu, a in zip(gx.means, gx.weights):
        m = [mpmath.fsum(mpmath.mpf(R[k, l]) * mpmath.mpf(mu[l]) for l in range(gx.dim))
             + mpmath.mpf(t[k]) for k in range(gx.dim)]
        for nu, b in zip(gy.means, gy.weights):
            d2 = mpmath.fsum((m[k] - mpmath.mpf(nu[k])) ** 2 for k in range(gx.dim))
            total += mpmath.mpf(a) * mpmath.mpf(b) * norm * mpmath.exp(-d2 / (2 * var2))
    return -float(total)


def central_difference(fun, x, h=1e-6):
    out = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


# objective


def test_identical_single_components():
    g = single([0.3, -0.2])
    f = l2_objective(g, g, RigidTransform.identity(2))
    assert f == pytest.approx(-1 / (4 * math.pi), rel=1e-14)
    assert f == pytest.approx(-0.07958, abs=1e-5)


@pytest.mark.parametrize("dim", [2, 3])
def test_objective_matches_double_loop_oracle(dim):
    rng = np.random.default_rng(dim)
    gx, gy = random_pair(rng, dim, m=3, n=4)
    for _ in range(5):
        T = random_transform(rng, dim)
        assert l2_objective(gx, gy, T) == pytest.approx(oracle_objective(gx, gy, T), rel=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_objective_rigid_invariance(dim):
    rng = np.random.default_rng(10 + dim)
    gx, gy = random_pair(rng, dim)
    for _ in range(10):
        T, S = random_transform(rng, dim), random_transform(rng, dim)
        # move both sets by S and conjugate theta accordingly
        lhs = l2_objective(moved(gx, S), moved(gy, S), S.compose(T).compose(S.inverse()))
        assert lhs == pytest.approx(l2_objective(gx, gy, T), rel=1e-10)


@pytest.mark.parametrize("dim", [2, 3])
def test_swap_and_invert_symmetry(dim):
    rng = np.random.default_rng(20 + dim)
    gx, gy = random_pair(rng, dim)
    for _ in range(10):
        T = random_transform(rng, dim)
        assert l2_objective(gx, gy, T) == pytest.approx(
            l2_objective(gy, gx, T.inverse()), abs=1e-10, rel=1e-10)


def test_objective_rejects_mismatch():
    rng = np.random.default_rng(0)
    gx, gy = random_pair(rng, 2)
    other = Svgm(gy.means, gy.variance * 2, gy.weights)
    with pytest.raises(ValueError):
        l2_objective(gx, other, RigidTransform.identity(2))
    g3, _ = random_pair(rng, 3)
    with pytest.raises(ValueError):
        l2_objective(g3, gy, RigidTransform.identity(3))


# gradient


def test_gradient_zero_at_symmetric_optimum():
    g = single([0.0, 0.0])
    _, grad = objective_gradient(g, g, RigidTransform.identity(2))
    assert np.all(np.abs(grad) < 1e-10)
    g3 = single([0.0, 0.0, 0.0])
    _, grad = objective_gradient(g3, g3, RigidTransform.identity(3))
    # only the quaternion scale direction is non-zero for a raw quaternion
    assert np.all(np.abs(grad[1:]) < 1e-10)


@pytest.mark.parametrize("dim", [2, 3])
def test_gradient_matches_central_differences(dim):
    rng = np.random.default_rng(30 + dim)
    for _ in range(100):
        gx, gy = random_pair(rng, dim, m=int(rng.integers(1, 6)), n=int(rng.integers(1, 6)))
        p = random_transform(rng, dim).params
        if dim == 3:
            # raw quaternions off the unit sphere exercise the quadratic form
            p[:4] *= rng.uniform(0.7, 1.3)
        f, grad = objective_gradient(gx, gy, p)
        fd = central_difference(lambda v: l2_objective(gx, gy, v), p)
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-8)


def test_reduced_gradient_matches_central_differences():
    rng = np.random.default_rng(40)
    for _ in range(30):
        gx, gy = random_pair(rng, 3)
        p = random_transform(rng, 3).params
        p[:4] *= rng.uniform(0.5, 2.0)
        _, grad = reduced_objective_gradient(gx, gy, p)
        fd = central_difference(lambda v: reduced_objective_gradient(gx, gy, v)[0], p)
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-8)
        # scale invariance: no gradient along the quaternion itself
        assert abs(grad[:4] @ p[:4]) < 1e-12


@pytest.mark.parametrize("d", [-2.0, -0.5, 0.7, 1.5])
def test_translation_gradient_single_pair(d):
    gx, gy = single([0.0, 0.0]), single([-d, 0.0])
    f, grad = objective_gradient(gx, gy, RigidTransform.identity(2))
    assert grad[1] == pytest.approx(-f * d / 2, rel=1e-12)
    assert grad[2] == 0.0


# optimiser


def test_trust_region_subproblem_brute_force():
    rng = np.random.default_rng(50)
    for _ in range(20):
        A = rng.normal(size=(2, 2))
        B = 0.5 * (A + A.T)
        g = rng.normal(size=2)
        r = rng.uniform(0.1, 2.0)
        p = solve_trust_region(g, B, r)
        assert np.linalg.norm(p) <= r * (1 + 1e-9)
        q = lambda v: g @ v + 0.5 * v @ B @ v
        # dense sample of the disc
        rad, ang = np.meshgrid(np.linspace(0, r, 400), np.linspace(0, 2 * math.pi, 800))
        pts = np.column_stack([(rad * np.cos(ang)).ravel(), (rad * np.sin(ang)).ravel()])
        vals = pts @ g + 0.5 * np.einsum("ij,jk,ik->i", pts, B, pts)
        assert q(p) <= vals.min() + 1e-9


def test_trust_region_hard_case():
    B = np.diag([-1.0, 2.0])
    g = np.array([0.0, 1.0])
    p = solve_trust_region(g, B, 2.0)
    assert np.linalg.norm(p) == pytest.approx(2.0)
    assert p[1] == pytest.approx(-1 / 3)


def test_minimise_quadratic():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    res = minimise(lambda x: (0.5 * x @ A @ x - b @ x - 10.0, A @ x - b), [5.0, 5.0])
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-8)
    assert res.converged
    assert all(a >= b for a, b in zip(res.trace, res.trace[1:]))


def test_minimise_reports_non_finite():
    def fg(x):
        if x[0] > 0.5:
            return float("nan"), np.array([np.nan])
        return float((x[0] - 2) ** 2), np.array([2 * (x[0] - 2)])

    with pytest.raises(NumericalFailure) as info:
        minimise(fg, [0.0], radius=1.0)
    assert info.value.last_x[0] <= 0.5


def test_optimise_identity_stays_put():
    rng = np.random.default_rng(60)
    for dim in (2, 3):
        g, _ = random_pair(rng, dim)
        out = optimise_rigid(g, g)
        assert rotation_error(out.theta, RigidTransform.identity(dim)) < 1e-8
        assert np.linalg.norm(out.theta.translation) < 1e-8
        assert len(out.trace) == 1


def test_optimise_recovers_unit_translation():
    gx, gy = single([0.0, 0.0]), single([1.0, 0.0])
    out = optimise_rigid(gx, gy)
    np.testing.assert_allclose(out.theta.translation, [1.0, 0.0], atol=1e-6)
    assert out.converged


@pytest.mark.parametrize("dim", [2, 3])
def test_optimise_trace_contract(dim):
    rng = np.random.default_rng(70 + dim)
    for _ in range(5):
        gx, gy = random_pair(rng, dim, m=8, n=8)
        theta0 = random_transform(rng, dim)
        out = optimise_rigid(gx, gy, theta0, max_iter=30)
        assert len(out.trace) <= 31
        assert out.iterations <= 30
        assert all(b <= a for a, b in zip(out.trace, out.trace[1:]))
        if dim == 3:
            assert abs(np.linalg.norm(out.theta.rotation) - 1) < 1e-9


def test_optimise_recovers_known_motion():
    rng = np.random.default_rng(80)
    pts = rng.normal(size=(15, 3))
    T = RigidTransform(quat_from_axis_angle([1.0, 2.0, 0.5], 0.4), [0.3, -0.2, 0.1])
    gx = Svgm(pts, 0.2, np.ones(15))
    gy = moved(gx, T)
    out = optimise_rigid(gx, gy)
    assert rotation_error(out.theta, T) < 1e-6
    assert translation_error(out.theta, T) < 1e-6


def test_rigid_consistency_of_trajectory():
    rng = np.random.default_rng(90)
    gx, gy = random_pair(rng, 2, m=10, n=10)
    S = RigidTransform(0.7, [0.0, 0.0])
    theta0 = RigidTransform(0.3, [0.2, -0.1])
    a = optimise_rigid(gx, gy, theta0)
    b = optimise_rigid(moved(gx, S), gy, theta0.compose(S.inverse()))
    assert len(a.trace) == len(b.trace)
    np.testing.assert_allclose(a.trace, b.trace, rtol=0, atol=1e-9)


# annealed registration


def test_svr_self_registration():
    X = generate("fish", seed=0)
    res = svr(X, X)
    assert rotation_error(res.theta_star, RigidTransform.identity(2)) < 1e-3
    assert res.converged


def test_svr_fish_one_radian():
    Y = generate("fish")
    R = RigidTransform(1.0, [0.0, 0.0])
    X = R.apply(np.asarray(Y))
    res = svr(X, Y, RegistrationConfig(nu=0.01, anneal=10))
    assert math.degrees(rotation_error(res.theta_star, R.inverse())) <= 1.0
    for rec in res.rounds:
        assert all(b <= a for a, b in zip(rec.trace, rec.trace[1:]))
    gammas = [rec.gamma for rec in res.rounds]
    np.testing.assert_allclose(np.diff(np.log10(gammas)), 1.0)


def test_svr_single_round_without_annealing():
    Y = generate("fish")
    res = svr(Y, Y, RegistrationConfig(anneal=1.0, max_rounds=5))
    assert len(res.rounds) == 1


def test_svr_propagates_round_index():
    Y = generate("fish", n=50)
    with pytest.raises(RegistrationError) as info:
        svr(Y, Y, RegistrationConfig(nu=0.001))
    assert info.value.round_index == 0


def test_config_validation():
    with pytest.raises(ValueError):
        RegistrationConfig(anneal=0.5)
    with pytest.raises(ValueError):
        RegistrationConfig(max_rounds=0)
    with pytest.raises(ValueError):
        RegistrationConfig(gtol=0.0)
    assert RegistrationConfig().anneal_for(2) == 10.0
    assert RegistrationConfig().anneal_for(3) == 2.0


def test_gamma_auto_unit_scale():
    rng = np.random.default_rng(100)
    Y = rng.normal(size=(400, 2))
    # whiten so the determinant-based scale is exactly one
    Y = (Y - Y.mean(0)) @ np.linalg.inv(np.linalg.cholesky(np.cov(Y.T)).T)
    assert gamma_auto(Y + 5.0, Y) == pytest.approx(0.5, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_gamma_auto_scaling(s, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(30, 3)), rng.normal(size=(40, 3))
    assert gamma_auto(s * X, s * Y) == pytest.approx(gamma_auto(X, Y) / s ** 2, rel=1e-9)
