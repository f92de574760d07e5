import math

import numpy as np
import pytest

from poisson_srk import (
    ChartDomainError,
    PoissonSystemDef,
    StepContext,
    StructureMatrix,
    TransformedStepper,
    build_dirk,
    explicit_euler_tableau,
    integrate_with,
    rigid_body_chart,
    rigid_body_system,
    sample_wiener_path,
    srk_step,
    transformed_srk_step,
    truncated_increment,
)
from poisson_srk.systems import RIGID_Y0, QuadraticForm, RigidBodyParams
from poisson_srk.transform import identity_chart

DIRK2 = build_dirk([[0.25, 0.75], [0.5, 0.5]])
P = RigidBodyParams()


def test_chart_at_initial_value():
    chart = rigid_body_chart()
    ybar = chart.forward(np.array(RIGID_Y0))
    np.testing.assert_allclose(ybar, [1 / math.sqrt(2), 0.0, 0.5], rtol=0, atol=1e-15)
    np.testing.assert_allclose(chart.inverse(ybar), RIGID_Y0, rtol=0, atol=1e-15)


def test_canonical_fields_at_initial_value():
    chart = rigid_body_chart()
    gK = chart.transformed_gradients[0](np.array([1 / math.sqrt(2), 0.0]), np.array([0.5]))
    # J^{-1} grad K = (-gK[1], gK[0]) = (f, g)
    f, g = -gK[1], gK[0]
    assert f == 0.0
    assert g == pytest.approx((1 / P.I2 - 1 / P.I1) / math.sqrt(2), abs=1e-12)
    assert g == pytest.approx(0.5790, abs=1e-4)  # quoted to four decimals


def test_round_trip():
    chart = rigid_body_chart()
    rng = np.random.default_rng(0)
    Y = rng.uniform(-2, 2, size=(4000, 3))
    Y = Y[Y[:, 0] ** 2 + Y[:, 2] ** 2 > 1e-6][:1000]
    assert len(Y) == 1000
    assert np.max(np.abs(chart.inverse(chart.forward(Y)) - Y)) <= 1e-12


def test_K_of_forward_equals_H():
    chart = rigid_body_chart()
    H = rigid_body_system().hamiltonians
    rng = np.random.default_rng(1)
    for y in rng.uniform(-2, 2, size=(200, 3)):
        ybar = chart.forward(y)
        for l in range(2):
            assert chart.transformed_hamiltonians[l](ybar[:2], ybar[2:]) == pytest.approx(H[l](y), abs=1e-12)


def test_grad_K_matches_finite_differences():
    chart = rigid_body_chart()
    K, gradK = chart.transformed_hamiltonians[0], chart.transformed_gradients[0]
    rng = np.random.default_rng(2)
    for _ in range(50):
        cas = np.array([rng.uniform(0.5, 2.0)])
        Z = np.array([rng.uniform(-0.9, 0.9) * math.sqrt(2 * cas[0]), rng.uniform(-math.pi, math.pi)])
        eps = 1e-6
        fd = np.array([(K(Z + e, cas) - K(Z - e, cas)) / (2 * eps) for e in np.eye(2) * eps])
        np.testing.assert_allclose(gradK(Z, cas), fd, rtol=0, atol=1e-7)


def test_chart_vector_field_matches_pushforward():
    # d(theta)(y) . B(y) grad H(y) must equal (f, g, 0)
    chart = rigid_body_chart()
    sys_ = rigid_body_system()
    y = np.array([0.4, -0.3, 0.8])
    eps = 1e-6
    v = sys_.field(0, y)
    push = (chart.forward(y + eps * v) - chart.forward(y - eps * v)) / (2 * eps)
    ybar = chart.forward(y)
    gK = chart.transformed_gradients[0](ybar[:2], ybar[2:])
    np.testing.assert_allclose(push, [-gK[1], gK[0], 0.0], atol=1e-8)


def test_domain_guard():
    chart = rigid_body_chart()
    with pytest.raises(ChartDomainError):
        chart.check_domain(chart.forward(np.array([0.0, 1.0, 0.0])))
    stepper = TransformedStepper(rigid_body_system(), chart, DIRK2)
    with pytest.raises(ChartDomainError):
        stepper.step(np.array([0.0, 1.0, 0.0]), StepContext(0.01), [0.0])


def test_chart_level_argument():
    with pytest.raises(ValueError):
        rigid_body_chart(0.0)
    chart = rigid_body_chart(0.5)
    canon = chart.canonical_system()
    np.testing.assert_allclose(
        canon.hamiltonians[0].gradient(np.array([0.3, 0.2])),
        chart.transformed_gradients[0](np.array([0.3, 0.2]), np.array([0.5])),
    )
    with pytest.raises(ValueError):
        rigid_body_chart().canonical_system()


def test_requires_symplectic_tableau():
    with pytest.raises(ValueError):
        TransformedStepper(rigid_body_system(), rigid_body_chart(), explicit_euler_tableau(1))
    with pytest.raises(ValueError):
        transformed_srk_step(rigid_body_chart(), explicit_euler_tableau(1), np.array(RIGID_Y0), StepContext(0.01), [0])


def test_casimir_exact_along_trajectory():
    sys_ = rigid_body_system()
    stepper = TransformedStepper(sys_, rigid_body_chart(), DIRK2)
    path = sample_wiener_path(1, 1000, 0.01, seed=4)
    traj = integrate_with(stepper, RIGID_Y0, 0.0, 10.0, StepContext(0.01), path)
    C = 0.5 * np.sum(traj.states**2, axis=1)
    assert np.max(np.abs(C - C[0])) <= 1e-13 * C[0]


def test_step_and_run_agree():
    sys_ = rigid_body_system()
    stepper = TransformedStepper(sys_, rigid_body_chart(), DIRK2)
    path = sample_wiener_path(1, 20, 0.01, seed=8)
    ctx = StepContext(0.01)
    traj = integrate_with(stepper, RIGID_Y0, 0.0, 0.2, ctx, path)
    y = np.array(RIGID_Y0)
    for n in range(20):
        y = transformed_srk_step(rigid_body_chart(), DIRK2, y, ctx, truncated_increment(path.increments[n], 0.01))
    np.testing.assert_allclose(y, traj.states[-1], rtol=0, atol=1e-13)


def test_identity_chart_reduces_to_plain_srk():
    # stochastic harmonic oscillator in canonical form
    Jinv = np.array([[0.0, -1.0], [1.0, 0.0]])
    sys_ = PoissonSystemDef(
        d=2,
        m=1,
        structure=StructureMatrix.constant(Jinv),
        hamiltonians=[QuadraticForm(np.diag([1.0, 2.0])).spec("H0"), QuadraticForm(np.eye(2), 0.3).spec("H1")],
    )
    chart = identity_chart(sys_)
    ctx = StepContext(0.05)
    rng = np.random.default_rng(3)
    for _ in range(20):
        y, J = rng.normal(size=2), rng.normal(size=1) * 0.2
        a = transformed_srk_step(chart, DIRK2, y, ctx, J)
        b = srk_step(sys_, DIRK2, y, ctx, J)
        np.testing.assert_array_equal(a, b)
    stepper = TransformedStepper(sys_, chart, DIRK2)
    assert stepper.step(np.array([1.0, 0.0]), ctx, [0.1]).shape == (2,)


def test_cas_frozen_not_recomputed():
    # the canonical system only sees the Casimir level passed in
    chart = rigid_body_chart()
    canon = chart.canonical_system(np.array([[0.5], [2.0]]))
    Z = np.array([[0.1, 0.2], [0.1, 0.2]])
    g = canon.hamiltonians[0].gradient(Z)
    assert not np.allclose(g[0], g[1])


def test_batch_rows_are_independent():
    stepper = TransformedStepper(rigid_body_system(), rigid_body_chart(), DIRK2)
    rng = np.random.default_rng(6)
    Y, J = rng.normal(size=(9, 3)), rng.normal(size=(9, 1)) * 0.1
    ctx = StepContext(0.02)
    batch, _ = stepper.step_batch(Y, ctx, J)
    for i in range(9):
        np.testing.assert_array_equal(batch[i], stepper.step(Y[i], ctx, J[i]))
