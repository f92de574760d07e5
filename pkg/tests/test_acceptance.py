"""Acceptance suite.

Each test runs one criterion at its stated tolerance and runtime budget and
prints a single ``PASS``/``FAIL`` line.  Run with ``pytest -v tests/test_acceptance.py``
or directly with ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest

from poisson_srk import (
    SrkStepper,
    StepContext,
    TransformedStepper,
    build_dirk,
    check_poisson_structure,
    check_symplectic_conditions,
    explicit_euler_tableau,
    integrate_with,
    invariant_drift,
    linear_exact_solution,
    linear_sps_system,
    mean_square_order,
    midpoint_tableau,
    rigid_body_chart,
    rigid_body_system,
    sample_wiener_path,
    srk_step,
    truncated_increment,
)
from poisson_srk.systems import LINEAR_DEF, RIGID_Y0, RigidBodyParams

# pinned tolerances and budgets
TOL_TABLEAU = 1e-14
TOL_NEWTON_DRIFT = 1e-10
TOL_POISSON = 1e-6
EULER_CONTROL_MIN = 1e-3
TOL_CHART_CASIMIR = 1e-12
SLOPE_BAND = (0.8, 1.2)
TOL_LINEAR_ORACLE = 1e-11
TOL_EXACT_INVARIANTS = 1e-10
NEWTON_TOL = 1e-12

BUDGET = {1: 1.0, 2: 1.0, 3: 1.0, 4: 5.0, 5: 2.0, 6: 60.0, 7: 120.0, 8: 1.0, 9: 1.0, 10: 5.0}

DEFAULT_WEIGHTS = [[0.25, 0.75], [0.5, 0.5]]
LINEAR_Y0 = np.array([1.0, 1.0, 2.0])


def report(label, passed, detail, elapsed, budget):
    in_time = elapsed < budget
    status = "PASS" if passed and in_time else "FAIL"
    limit = f"budget {budget:g}s" if math.isfinite(budget) else "no budget"
    line = f"{status}  criterion {label}: {detail}; runtime {elapsed:.2f}s ({limit})"
    capture = _CAPTURE.get("capsys")
    if capture is not None:
        with capture.disabled():
            print("\n" + line)
    else:
        print(line)
    assert passed, line
    assert in_time, line


_CAPTURE = {}


@pytest.fixture(autouse=True)
def _expose_capsys(capsys):
    _CAPTURE["capsys"] = capsys
    yield
    _CAPTURE.pop("capsys", None)


def _linear_run():
    sys_ = linear_sps_system()
    path = sample_wiener_path(1, 100, 0.1, seed=0)
    traj = integrate_with(SrkStepper(sys_, build_dirk(DEFAULT_WEIGHTS)), LINEAR_Y0, 0.0, 10.0, StepContext(0.1), path)
    return sys_, traj


# -- 1 ------------------------------------------------------------------------


def test_criterion_1_tableau_algebra():
    t0 = time.perf_counter()
    worst = 0.0
    cases = [[[1.0], [1.0]], DEFAULT_WEIGHTS]
    rng = np.random.default_rng(1)
    for _ in range(1000):
        s, m = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        w = rng.uniform(0.05, 1.0, size=(m + 1, s))
        w /= w.sum(axis=1, keepdims=True)
        w[:, -1] = 1.0 - w[:, :-1].sum(axis=1)
        cases.append(w)
    for w in cases:
        rep = check_symplectic_conditions(build_dirk(w), TOL_TABLEAU)
        worst = max(worst, rep.residual_00, rep.residual_0r, rep.residual_rz)
    t = build_dirk(DEFAULT_WEIGHTS)
    exact = np.array_equal(t.A0, [[1 / 8, 0], [1 / 4, 3 / 8]]) and np.array_equal(t.Ar[0], [[1 / 4, 0], [1 / 2, 1 / 4]])
    elapsed = time.perf_counter() - t0
    report(1, worst <= TOL_TABLEAU and exact, f"max residual {worst:.2e} <= {TOL_TABLEAU:g}, two-stage exact={exact}",
           elapsed, BUDGET[1])


# -- 2, 3 ---------------------------------------------------------------------


def test_criterion_2_casimir_preservation():
    t0 = time.perf_counter()
    sys_, traj = _linear_run()
    drift = invariant_drift(traj, sys_.casimirs[0])
    elapsed = time.perf_counter() - t0
    report(2, drift <= TOL_NEWTON_DRIFT, f"Casimir drift {drift:.2e} <= {TOL_NEWTON_DRIFT:g}", elapsed, BUDGET[2])


def test_criterion_3_quadratic_invariants():
    t0 = time.perf_counter()
    sys_, traj = _linear_run()
    d1, d2 = (invariant_drift(traj, H) for H in sys_.invariants)
    elapsed = time.perf_counter() - t0
    report(3, max(d1, d2) <= TOL_NEWTON_DRIFT, f"H1 drift {d1:.2e}, H2 drift {d2:.2e} <= {TOL_NEWTON_DRIFT:g}",
           elapsed, BUDGET[3])


# -- 4 ------------------------------------------------------------------------


def _poisson_residuals(stepper, states, h, seed):
    rng = np.random.default_rng(seed)
    ctx = StepContext(h)
    out = []
    for y in states:
        J = truncated_increment(math.sqrt(h) * rng.standard_normal(1), h)
        out.append(check_poisson_structure(stepper, y, ctx, J, TOL_POISSON).residual)
    return np.array(out)


def test_criterion_4_poisson_structure():
    t0 = time.perf_counter()
    h = 0.01
    rng = np.random.default_rng(4)
    lin_states = rng.uniform(-2, 2, size=(20, 3))
    rig_states = rng.uniform(-2, 2, size=(20, 3))
    lin = _poisson_residuals(SrkStepper(linear_sps_system(), build_dirk(DEFAULT_WEIGHTS)), lin_states, h, 40)
    rig = _poisson_residuals(
        TransformedStepper(rigid_body_system(), rigid_body_chart(), build_dirk(DEFAULT_WEIGHTS)), rig_states, h, 41
    )
    euler = _poisson_residuals(SrkStepper(linear_sps_system(), explicit_euler_tableau(1)), lin_states, h, 40)
    elapsed = time.perf_counter() - t0
    ok = lin.max() <= TOL_POISSON and rig.max() <= TOL_POISSON and euler.max() > EULER_CONTROL_MIN
    report(4, ok, f"DIRK/linear {lin.max():.2e}, transformed/rigid {rig.max():.2e} <= {TOL_POISSON:g}; "
           f"explicit-Euler control {euler.max():.2e} > {EULER_CONTROL_MIN:g}", elapsed, BUDGET[4])


# -- 5 ------------------------------------------------------------------------


def test_criterion_5_chart_exactness():
    t0 = time.perf_counter()
    sys_ = rigid_body_system()
    stepper = TransformedStepper(sys_, rigid_body_chart(), build_dirk(DEFAULT_WEIGHTS))
    traj = integrate_with(stepper, RIGID_Y0, 0.0, 10.0, StepContext(0.01), sample_wiener_path(1, 1000, 0.01, 5))
    drift = invariant_drift(traj, sys_.casimirs[0])
    elapsed = time.perf_counter() - t0
    report(5, drift <= TOL_CHART_CASIMIR, f"Casimir drift {drift:.2e} <= {TOL_CHART_CASIMIR:g}", elapsed, BUDGET[5])


# -- 6, 7 ---------------------------------------------------------------------


def _order(label, stepper, y0, h_list, samples, T, reference, budget):
    t0 = time.perf_counter()
    est = mean_square_order(stepper, y0, T, h_list, samples, seed=0, reference=reference)
    elapsed = time.perf_counter() - t0
    lo, hi = SLOPE_BAND
    errs = ", ".join(f"{e:.2e}" for e in est.errors)
    report(label, lo <= est.slope <= hi, f"slope {est.slope:.3f} in [{lo}, {hi}] (M={samples}, T={T}, "
           f"reference={reference}, e(h)=[{errs}])", elapsed, budget)


def test_criterion_6_linear_order_desk():
    stepper = SrkStepper(linear_sps_system(), build_dirk(DEFAULT_WEIGHTS))
    _order(6, stepper, [1.0, 0.0, -1.0], [0.005, 0.01, 0.02, 0.025, 0.05], 200, 1.0, "exact", BUDGET[6])


@pytest.mark.slow
def test_criterion_6_linear_order_full_scale():
    stepper = SrkStepper(linear_sps_system(), build_dirk(DEFAULT_WEIGHTS))
    _order("6 (full scale)", stepper, [1.0, 0.0, -1.0], [0.005, 0.01, 0.02, 0.025, 0.05], 1000, 1.0, "exact",
           math.inf)


def test_criterion_7_rigid_order_desk():
    stepper = TransformedStepper(rigid_body_system(), rigid_body_chart(), build_dirk(DEFAULT_WEIGHTS))
    _order(7, stepper, RIGID_Y0, [0.005, 0.01, 0.02, 0.04], 100, 1.0, "fine", BUDGET[7])


@pytest.mark.slow
def test_criterion_7_rigid_order_full_scale():
    stepper = TransformedStepper(rigid_body_system(), rigid_body_chart(), build_dirk(DEFAULT_WEIGHTS))
    _order("7 (full scale)", stepper, RIGID_Y0, [0.005, 0.01, 0.02, 0.04], 500, 1.0, "fine", math.inf)


# -- 8 ------------------------------------------------------------------------


def _two_stage_linear_update(y, h, J):
    A0, A1, I = LINEAR_DEF.A0, LINEAR_DEF.A1, np.eye(3)
    Y1 = np.linalg.solve(I - h / 8 * A0 - J / 4 * A1, y)
    Y2 = np.linalg.solve(I - 3 * h / 8 * A0 - J / 4 * A1, y + (h / 4 * A0 + J / 2 * A1) @ Y1)
    return y + (h / 4 * A0 + J / 2 * A1) @ Y1 + (3 * h / 4 * A0 + J / 2 * A1) @ Y2


def test_criterion_8_linear_oracle():
    t0 = time.perf_counter()
    sys_, tab = linear_sps_system(), build_dirk(DEFAULT_WEIGHTS)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        y, h = rng.uniform(-2, 2, size=3), rng.uniform(1e-3, 0.05)
        J = truncated_increment(math.sqrt(h) * rng.standard_normal(), h)
        got = srk_step(sys_, tab, y, StepContext(h), [J])
        worst = max(worst, np.max(np.abs(got - _two_stage_linear_update(y, h, J))))
    elapsed = time.perf_counter() - t0
    report(8, worst <= TOL_LINEAR_ORACLE, f"max deviation {worst:.2e} <= {TOL_LINEAR_ORACLE:g}", elapsed, BUDGET[8])


# -- 9 ------------------------------------------------------------------------


def test_criterion_9_midpoint_consistency():
    t0 = time.perf_counter()
    p = RigidBodyParams()
    sys_, tab = rigid_body_system(p), midpoint_tableau(1)
    inertia = np.array([p.I1, p.I2, p.I3])
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        y0, h = rng.uniform(-2, 2, size=3), rng.uniform(1e-3, 0.05)
        J = truncated_increment(math.sqrt(h) * rng.standard_normal(), h)
        y1 = srk_step(sys_, tab, y0, StepContext(h, newton_tol=NEWTON_TOL), [J])
        mid = 0.5 * (y0 + y1)
        residual = y1 - y0 - (h + p.c * J) * np.cross(mid, mid / inertia)
        worst = max(worst, np.max(np.abs(residual)))
    elapsed = time.perf_counter() - t0
    report(9, worst <= NEWTON_TOL, f"max midpoint residual {worst:.2e} <= newton_tol {NEWTON_TOL:g}", elapsed,
           BUDGET[9])


# -- 10 -----------------------------------------------------------------------


def test_criterion_10_exact_solution():
    t0 = time.perf_counter()
    sys_ = linear_sps_system()
    funcs = list(sys_.casimirs) + list(sys_.invariants)
    ref = [f(LINEAR_Y0) for f in funcs]
    worst = 0.0
    for seed in range(10):
        W = sample_wiener_path(1, 1000, 0.01, seed).W()
        for n in range(1, 1001):
            y = linear_exact_solution(n * 0.01, W[n], LINEAR_Y0)
            worst = max(worst, max(abs(f(y) - r) for f, r in zip(funcs, ref)))
    elapsed = time.perf_counter() - t0
    report(10, worst <= TOL_EXACT_INVARIANTS, f"max drift of C, H1, H2 {worst:.2e} <= {TOL_EXACT_INVARIANTS:g}",
           elapsed, BUDGET[10])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
