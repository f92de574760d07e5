"""Numerical checks of structure preservation and mean-square order estimation."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TextIO

import numpy as np

from .core import HamiltonianSpec, StructureMatrix
from .solver import (
    SrkStepper,
    StepContext,
    Trajectory,
    coarsen_increments,
    format_float,
    truncated_increment,
    wiener_increments,
    write_csv,
)
from .tableau import SymplecticReport, midpoint_tableau

_EPS = np.finfo(float).eps


def step_jacobian(stepper, y_k, ctx: StepContext, J_k, scheme: str = "central") -> np.ndarray:
    """Finite-difference Jacobian ``d y_{k+1} / d y_k`` of one step.

    All perturbed states share the increments ``J_k`` and are advanced in a
    single batched call.
    """
    y = np.asarray(y_k, dtype=float)
    d = y.size
    J = np.atleast_1d(np.asarray(J_k, dtype=float))
    if scheme == "central":
        eps = _EPS ** (1 / 3) * np.maximum(1.0, np.abs(y))
        probes = np.concatenate([y + np.diag(eps), y - np.diag(eps)])
        out, _ = stepper.step_batch(probes, ctx, np.tile(J, (2 * d, 1)))
        width = probes[:d].diagonal() - probes[d:].diagonal()
        return ((out[:d] - out[d:]) / width[:, None]).T
    if scheme == "forward":
        eps = math.sqrt(_EPS) * np.maximum(1.0, np.abs(y))
        probes = np.concatenate([y[None, :], y + np.diag(eps)])
        out, _ = stepper.step_batch(probes, ctx, np.tile(J, (d + 1, 1)))
        width = probes[1:].diagonal() - y
        return ((out[1:] - out[0]) / width[:, None]).T
    raise ValueError(f"unknown finite-difference scheme {scheme!r}")


@dataclass(frozen=True)
class PoissonCheck:
    residual: float
    tol: float

    @property
    def passes(self) -> bool:
        return self.residual <= self.tol


def check_poisson_structure(
    stepper, y_k, ctx: StepContext, J_k, tol: float = 1e-6, structure: Optional[StructureMatrix] = None
) -> PoissonCheck:
    """Max-entry residual of ``Js B(y_k) Js^T - B(y_{k+1})`` for one step."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    structure = structure or stepper.system.structure
    y = np.asarray(y_k, dtype=float)
    Js = step_jacobian(stepper, y, ctx, J_k)
    y_next = stepper.step(y, ctx, J_k)
    residual = np.max(np.abs(Js @ structure(y) @ Js.T - structure(y_next)))
    return PoissonCheck(float(residual), tol)


def invariant_drift(traj: Trajectory, f) -> float:
    """``max_n |f(y_n) - f(y_0)|`` along a trajectory."""
    fn = f.value if isinstance(f, HamiltonianSpec) else f
    vals = np.array([fn(y) for y in traj.states], dtype=float)
    return float(np.max(np.abs(vals - vals[0])))


@dataclass
class StructureReport:
    poisson_residual: float
    casimir_drift: dict[str, float]
    hamiltonian_drift: dict[str, float]
    tol_poisson: float = 1e-6
    tol_drift: float = 1e-10
    symplectic: Optional[SymplecticReport] = None

    @property
    def poisson_passes(self) -> bool:
        return self.poisson_residual <= self.tol_poisson

    @property
    def drift_passes(self) -> bool:
        drifts = list(self.casimir_drift.values()) + list(self.hamiltonian_drift.values())
        return all(v <= self.tol_drift for v in drifts)

    @property
    def passes(self) -> bool:
        ok = self.poisson_passes and self.drift_passes
        return ok and (self.symplectic is None or self.symplectic.passes)

    def items(self) -> list[tuple[str, str]]:
        rows = [("poisson_residual", format_float(self.poisson_residual))]
        rows += [(f"casimir_drift.{k}", format_float(v)) for k, v in self.casimir_drift.items()]
        rows += [(f"hamiltonian_drift.{k}", format_float(v)) for k, v in self.hamiltonian_drift.items()]
        if self.symplectic is not None:
            rows += [
                ("symplectic.residual_00", format_float(self.symplectic.residual_00)),
                ("symplectic.residual_0r", format_float(self.symplectic.residual_0r)),
                ("symplectic.residual_rz", format_float(self.symplectic.residual_rz)),
                ("symplectic.passes", str(self.symplectic.passes).lower()),
            ]
        rows += [
            ("tol_poisson", format_float(self.tol_poisson)),
            ("tol_drift", format_float(self.tol_drift)),
            ("poisson_passes", str(self.poisson_passes).lower()),
            ("drift_passes", str(self.drift_passes).lower()),
            ("passes", str(self.passes).lower()),
        ]
        return rows

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def to_csv(self) -> str:
        return "key,value\n" + "".join(f"{k},{v}\n" for k, v in self.items())


def structure_report(
    stepper,
    traj: Trajectory,
    ctx: StepContext,
    raw_increments: np.ndarray,
    points: int = 20,
    tol_poisson: float = 1e-6,
    tol_drift: float = 1e-10,
    symplectic: Optional[SymplecticReport] = None,
) -> StructureReport:
    """Poisson residual at up to ``points`` steps of ``traj`` plus invariant drifts."""
    system = stepper.system
    N = len(traj.states) - 1
    residual = 0.0
    if N:
        J = np.asarray(raw_increments, dtype=float)
        if ctx.h > 0 and math.isfinite(ctx.truncation_k):
            J = truncated_increment(J, ctx.h, ctx.truncation_k)
        for n in np.unique(np.linspace(0, N - 1, min(points, N)).astype(int)):
            check = check_poisson_structure(stepper, traj.states[n], ctx, J[n], tol_poisson)
            residual = max(residual, check.residual)
    cas = {(C.name or f"C{k + 1}"): invariant_drift(traj, C) for k, C in enumerate(system.casimirs)}
    ham = {(H.name or f"H{k + 1}"): invariant_drift(traj, H) for k, H in enumerate(system.invariants)}
    return StructureReport(residual, cas, ham, tol_poisson, tol_drift, symplectic)


# ---------------------------------------------------------------------------
# mean-square order


@dataclass
class OrderEstimate:
    h_list: np.ndarray
    errors: np.ndarray
    stderr: np.ndarray
    slope: float
    samples: int
    seed: int
    T: float = 1.0
    reference: str = ""
    squared_errors: Optional[np.ndarray] = field(default=None, repr=False)

    def to_csv(self, fh: Optional[TextIO] = None) -> str:
        rows = zip(self.h_list, self.errors, self.stderr)
        return write_csv(["h", "rms_error", "stderr"], rows, fh)


def fit_slope(h_list: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log e`` against ``log h``."""
    h = np.asarray(h_list, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 2:
        raise ValueError("slope undefined: need at least two step sizes")
    if np.any(e <= 0):
        raise ValueError("errors must be positive to fit a log-log slope")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def _ratio(a: float, b: float, what: str) -> int:
    q = a / b
    k = int(round(q))
    if k < 1 or abs(q - k) > 1e-9 * max(1.0, q):
        raise ValueError(f"{what}: {a!r} is not an integer multiple of {b!r}")
    return k


@dataclass(frozen=True)
class _OrderJob:
    stepper: object
    reference_stepper: object
    y0: np.ndarray
    T: float
    h_base: float
    n_base: int
    factors: tuple
    seed: int
    use_exact: bool
    zero_noise: bool
    k: float
    newton_tol: float
    newton_max_iter: int

    def ctx(self, h):
        return StepContext(h, self.k, self.newton_tol, self.newton_max_iter)

    def run(self, start: int, stop: int) -> np.ndarray:
        m = self.stepper.system.m
        count = stop - start
        if self.zero_noise:
            raw = np.zeros((count, self.n_base, m))
        else:
            raw = np.stack([wiener_increments(m, self.n_base, self.h_base, self.seed + i) for i in range(start, stop)])
        Y0 = np.tile(self.y0, (count, 1))
        if self.use_exact:
            exact = self.stepper.system.exact_solution
            ref = np.stack([exact(self.T, raw[i].sum(axis=0), self.y0) for i in range(count)])
        else:
            ref, _ = self.reference_stepper.run_batch(Y0, raw, self.ctx(self.h_base), record=False)
        sq = np.empty((count, len(self.factors)))
        for k, q in enumerate(self.factors):
            Yh, _ = self.stepper.run_batch(Y0, coarsen_increments(raw, q), self.ctx(self.h_base * q), record=False)
            sq[:, k] = np.sum((Yh - ref) ** 2, axis=1)
        return sq


def _run_job(args):
    job, start, stop = args
    return job.run(start, stop)


def mean_square_order(
    stepper,
    y0,
    T: float,
    h_list: Sequence[float],
    samples: int,
    seed: int = 0,
    reference: str = "auto",
    refine: int = 16,
    reference_h: float = 1e-5,
    truncation_k: float = 4.0,
    newton_tol: float = 1e-12,
    newton_max_iter: int = 50,
    zero_noise: bool = False,
    workers: Optional[int] = None,
    chunk_size: int = 100,
    min_samples: int = 100,
) -> OrderEstimate:
    """Estimate the strong (mean-square) order of ``stepper``.

    Each sample draws one Brownian path on the finest grid (stream
    ``seed + sample``), coarsens it to every step size and compares terminal
    states against the reference on the same path:

    * ``"exact"``: the system's closed-form solution at ``W(T)``;
    * ``"fine"``: the same method on a grid ``refine`` times finer than ``min(h_list)``;
    * ``"midpoint"``: the midpoint rule at step ``reference_h``;
    * ``"auto"``: ``"exact"`` when available, else ``"fine"``.

    Per-sample squared errors are reduced with ``math.fsum``, so the result
    does not depend on ``workers`` or ``chunk_size``.
    """
    hs = np.asarray(sorted(h_list), dtype=float)
    if hs.size < 2:
        raise ValueError("slope undefined: need at least two step sizes")
    if np.any(np.diff(hs) <= 0) or hs[0] <= 0:
        raise ValueError("step sizes must be positive and distinct")
    if samples < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {samples}")
    system = stepper.system
    if reference == "auto":
        reference = "exact" if system.exact_solution is not None else "fine"
    if reference == "exact":
        if system.exact_solution is None:
            raise ValueError("system has no exact solution; use reference='fine' or 'midpoint'")
        h_base, ref_stepper = hs[0], None
    elif reference == "fine":
        h_base, ref_stepper = hs[0] / refine, stepper
    elif reference == "midpoint":
        h_base = reference_h
        ref_stepper = SrkStepper(system, midpoint_tableau(system.m), label="midpoint")
    else:
        raise ValueError(f"unknown reference {reference!r}")
    for h in hs:
        _ratio(T, h, "final time")
    factors = tuple(_ratio(h, h_base, "step size") for h in hs)
    n_base = _ratio(T, h_base, "final time")

    job = _OrderJob(
        stepper, ref_stepper, np.asarray(y0, dtype=float), T, float(h_base), n_base, factors,
        seed, reference == "exact", zero_noise, truncation_k, newton_tol, newton_max_iter,
    )
    chunks = [(job, a, min(a + chunk_size, samples)) for a in range(0, samples, chunk_size)]
    if workers and workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_job, chunks))
    else:
        parts = [_run_job(c) for c in chunks]
    sq = np.concatenate(parts)

    mean_sq = np.array([math.fsum(sq[:, k]) / samples for k in range(hs.size)])
    errors = np.sqrt(mean_sq)
    se_sq = np.std(sq, axis=0, ddof=1) / math.sqrt(samples)
    stderr = se_sq / (2 * errors)
    return OrderEstimate(
        hs, errors, stderr, fit_slope(hs, errors), samples, seed, T, reference, squared_errors=sq
    )
