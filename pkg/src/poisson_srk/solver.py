"""Implicit stochastic Runge-Kutta stepping for stochastic Poisson systems.

Every stepping routine works on a batch of independent paths: states have
shape ``(B, d)`` and increments ``(B, m)``.  Rows never interact, so a path
integrated inside a batch gives the same numbers as the path on its own.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, TextIO

import numpy as np

from .core import PoissonSystemDef
from .tableau import SrkTableau

_SQRT_EPS = math.sqrt(np.finfo(float).eps)
_MAX_HALVINGS = 8


class ConvergenceError(RuntimeError):
    """Newton failed on a stage system (or produced a non-finite state)."""

    def __init__(self, message: str, step_index: Optional[int] = None):
        self.step_index = step_index
        if step_index is not None:
            message = f"step {step_index}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class StepContext:
    h: float
    truncation_k: float = 4.0
    newton_tol: float = 1e-12
    newton_max_iter: int = 50

    def __post_init__(self):
        if not self.h >= 0:
            raise ValueError(f"step size must be non-negative, got {self.h}")
        if not self.truncation_k >= 1:
            raise ValueError(f"truncation parameter k must be >= 1, got {self.truncation_k}")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")


def truncation_bound(h: float, k: float) -> float:
    """``A_h = sqrt(2 k |ln h|)``."""
    if not 0 < h < 1:
        raise ValueError(f"truncation needs 0 < h < 1, got h={h}")
    if k < 1:
        raise ValueError(f"truncation needs k >= 1, got k={k}")
    return math.sqrt(2.0 * k * abs(math.log(h)))


def truncated_increment(raw, h: float, k: float = 4.0):
    """Clamp ``raw = sqrt(h) xi`` so that ``|xi| <= A_h``."""
    sh = math.sqrt(h)
    bound = truncation_bound(h, k)
    out = sh * np.clip(np.asarray(raw, dtype=float) / sh, -bound, bound)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Raw (untruncated) Brownian increments on a uniform grid."""

    increments: np.ndarray  # (N, m)
    h: float
    seed: Optional[int] = None

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.ndim != 2:
            raise ValueError("increments must have shape (N, m)")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def N(self) -> int:
        return self.increments.shape[0]

    @property
    def m(self) -> int:
        return self.increments.shape[1]

    @property
    def T(self) -> float:
        return self.N * self.h

    def W(self) -> np.ndarray:
        """Brownian path values ``W(t_n)``, shape ``(N + 1, m)``."""
        return np.vstack([np.zeros((1, self.m)), np.cumsum(self.increments, axis=0)])

    def coarsen(self, q: int) -> "WienerPath":
        return coarsen(self, q)


def sample_wiener_path(m: int, N: int, h: float, seed: int) -> WienerPath:
    """Draw ``N x m`` i.i.d. ``N(0, h)`` increments from a Philox stream."""
    if m < 1 or N < 0 or h < 0:
        raise ValueError("need m >= 1, N >= 0, h >= 0")
    return WienerPath(wiener_increments(m, N, h, seed), h, seed)


def wiener_increments(m: int, N: int, h: float, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=seed))
    return math.sqrt(h) * rng.standard_normal((N, m))


def coarsen_increments(increments: np.ndarray, q: int) -> np.ndarray:
    """Sum blocks of ``q`` consecutive rows along the step axis (axis -2)."""
    N = increments.shape[-2]
    if q < 1 or N % q:
        raise ValueError(f"coarsening factor {q} does not divide step count {N}")
    if q == 1:
        return increments
    shape = increments.shape[:-2] + (N // q, q, increments.shape[-1])
    return increments.reshape(shape).sum(axis=-2)


def coarsen(path: WienerPath, q: int) -> WienerPath:
    return WienerPath(coarsen_increments(path.increments, q), path.h * q, path.seed)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    label: str = ""
    newton_iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def to_csv(self, fh: Optional[TextIO] = None) -> str:
        return write_trajectory_csv(self, fh)


def format_float(x: float) -> str:
    return f"{x:.17g}"


def write_csv(header: list[str], rows, fh: Optional[TextIO] = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(float(x)) for x in row])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def write_trajectory_csv(traj: Trajectory, fh: Optional[TextIO] = None) -> str:
    d = traj.states.shape[1]
    header = ["t"] + [f"y{i + 1}" for i in range(d)]
    rows = (np.concatenate([[t], y]) for t, y in zip(traj.times, traj.states))
    return write_csv(header, rows, fh)


# ---------------------------------------------------------------------------
# vector fields and Newton


def _field_evaluators(system: PoissonSystemDef) -> list[Callable[[np.ndarray], np.ndarray]]:
    """Unchecked ``f_l`` evaluators for the inner Newton loop."""
    structure = system.structure
    out = []
    for H in system.hamiltonians:
        if structure.is_constant:
            BT = np.asarray(structure.constant_value).T

            # einsum, not matmul: BLAS kernels vary with batch size
            def f(y, grad=H.gradient, BT=BT):
                return np.einsum("...j,ji->...i", grad(y), BT)

        else:

            def f(y, grad=H.gradient, B=structure.evaluate):
                return np.einsum("...ij,...j->...i", B(y), grad(y))

        out.append(f)
    return out


def _fd_jacobian(residual: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    n = x.shape[1]
    jac = np.empty(x.shape + (n,))
    for c in range(n):
        step = _SQRT_EPS * np.maximum(1.0, np.abs(x[:, c]))
        xp = x.copy()
        xm = x.copy()
        xp[:, c] += step
        xm[:, c] -= step
        jac[:, :, c] = (residual(xp) - residual(xm)) / (xp[:, c] - xm[:, c])[:, None]
    return jac


def _newton(residual, jacobian, x0: np.ndarray, tol: float, max_iter: int):
    """Damped Newton on each row of ``x0``; converged rows are frozen."""
    x = x0.copy()
    r = residual(x)
    rnorm = np.max(np.abs(r), axis=1)
    iters = np.zeros(x.shape[0], dtype=int)
    active = ~(rnorm <= tol)
    for _ in range(max_iter):
        if not active.any():
            return x, iters
        jac = jacobian(x)
        try:
            dx = np.linalg.solve(jac[active], -r[active][..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular Newton matrix") from None
        rows = np.flatnonzero(active)
        lam = np.ones(rows.size)
        pending = np.ones(rows.size, dtype=bool)
        for halving in range(_MAX_HALVINGS + 1):
            trial = x.copy()
            trial[rows] = x[rows] + lam[:, None] * dx
            with np.errstate(all="ignore"):
                rt = residual(trial)
            tnorm = np.max(np.abs(rt[rows]), axis=1)
            ok = (tnorm < rnorm[rows]) | (tnorm <= tol)
            if halving == _MAX_HALVINGS:
                ok = np.isfinite(tnorm)
                if not ok[pending].all():
                    raise ConvergenceError("Newton produced non-finite residual")
            take = pending & ok
            sel = rows[take]
            x[sel] = trial[sel]
            r[sel] = rt[sel]
            rnorm[sel] = tnorm[take]
            iters[sel] += 1
            pending &= ~ok
            if not pending.any():
                break
            lam[pending] *= 0.5
        active = ~(rnorm <= tol)
    if active.any():
        raise ConvergenceError(
            f"Newton did not converge in {max_iter} iterations "
            f"(residual {float(np.max(rnorm[active])):.3e} > {tol:.1e})"
        )
    return x, iters


# ---------------------------------------------------------------------------
# one step


def _as_batch(y, J, m):
    y = np.asarray(y, dtype=float)
    J = np.asarray(J, dtype=float)
    single = y.ndim == 1
    Y = np.atleast_2d(y)
    if J.ndim == 0:
        J = J.reshape(1)
    Jb = np.broadcast_to(J if J.ndim == 2 else J[None, :], (Y.shape[0], J.shape[-1]))
    if Jb.shape[1] != m:
        raise ValueError(f"expected {m} increments per step, got {Jb.shape[1]}")
    return Y, np.ascontiguousarray(Jb), single


def srk_step_batch(
    system: PoissonSystemDef, tableau: SrkTableau, Y: np.ndarray, ctx: StepContext, J: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One step for a batch ``Y`` (B, d) with increments ``J`` (B, m).

    Returns the new states and the Newton iteration count per row (summed
    over stages).
    """
    if tableau.m != system.m:
        raise ValueError(f"tableau has m={tableau.m} but system has m={system.m}")
    fields = _field_evaluators(system)
    h = ctx.h
    A, b = tableau.A, tableau.b
    m, s = tableau.m, tableau.s
    # coefficient of f_l in the step: h for the drift, J_r for noise r
    scale = np.empty((Y.shape[0], m + 1))
    scale[:, 0] = h
    scale[:, 1:] = J
    jac_hook = system.field_jacobian

    if tableau.is_lower_triangular:
        F = np.empty((s, m + 1) + Y.shape)
        iters = np.zeros(Y.shape[0], dtype=int)
        d = Y.shape[1]
        eye = np.eye(d)
        for i in range(s):
            known = Y.copy()
            for j in range(i):
                for l in range(m + 1):
                    if A[l, i, j] != 0.0:
                        known += (A[l, i, j] * scale[:, l])[:, None] * F[j, l]
            diag = A[:, i, i][None, :] * scale  # (B, m+1)
            live = [l for l in range(m + 1) if A[l, i, i] != 0.0]
            if live and np.any(diag[:, live] != 0.0):

                def residual(Z, known=known, diag=diag, live=live):
                    out = Z - known
                    for l in live:
                        out = out - diag[:, l, None] * fields[l](Z)
                    return out

                if jac_hook is not None:

                    def jacobian(Z, diag=diag, live=live):
                        jac = np.broadcast_to(eye, Z.shape + (d,)).copy()
                        for l in live:
                            jac -= diag[:, l, None, None] * np.broadcast_to(
                                jac_hook(l, Z), Z.shape + (d,)
                            )
                        return jac

                else:

                    def jacobian(Z, residual=residual):
                        return _fd_jacobian(residual, Z)

                Yi, it = _newton(residual, jacobian, Y, ctx.newton_tol, ctx.newton_max_iter)
                iters += it
            else:
                Yi = known
            for l in range(m + 1):
                F[i, l] = fields[l](Yi)
        stage_fields = F
    else:
        stage_fields, iters = _solve_coupled(fields, jac_hook, A, scale, Y, ctx)

    out = Y.copy()
    for i in range(s):
        for l in range(m + 1):
            if b[l, i] != 0.0:
                out += (b[l, i] * scale[:, l])[:, None] * stage_fields[i, l]
    if not np.all(np.isfinite(out)):
        raise ConvergenceError("non-finite state after step")
    return out, iters


def _solve_coupled(fields, jac_hook, A, scale, Y, ctx):
    """Solve all ``s * d`` stage unknowns at once (non-triangular tableaus)."""
    L, s, _ = A.shape
    Bn, d = Y.shape
    # coef[b, l, i, j] = a^l_ij * scale_l
    coef = A[None, :, :, :] * scale[:, :, None, None]

    def stage_eval(X):
        Z = X.reshape(Bn, s, d)
        return np.stack([np.stack([fields[l](Z[:, j]) for l in range(L)], axis=1) for j in range(s)], axis=1)

    def residual(X):
        Z = X.reshape(Bn, s, d)
        Fz = stage_eval(X)  # (B, s, L, d)
        out = Z - Y[:, None, :] - np.einsum("blij,bjld->bid", coef, Fz)
        return out.reshape(Bn, s * d)

    if jac_hook is not None:

        def jacobian(X):
            Z = X.reshape(Bn, s, d)
            jac = np.zeros((Bn, s, d, s, d))
            for j in range(s):
                for l in range(L):
                    Dj = np.broadcast_to(jac_hook(l, Z[:, j]), (Bn, d, d))
                    jac[:, :, :, j, :] -= coef[:, l, :, j, None, None] * Dj[:, None]
            idx = np.arange(s)
            jac[:, idx, :, idx, :] += np.eye(d)
            return jac.reshape(Bn, s * d, s * d)

    else:

        def jacobian(X):
            return _fd_jacobian(residual, X)

    X0 = np.tile(Y, (1, s))
    X, iters = _newton(residual, jacobian, X0, ctx.newton_tol, ctx.newton_max_iter)
    Fz = stage_eval(X)  # (B, s, L, d)
    return np.transpose(Fz, (1, 2, 0, 3)), iters


def srk_step(system: PoissonSystemDef, tableau: SrkTableau, y_k, ctx: StepContext, J_k) -> np.ndarray:
    """Advance ``y_k`` by one step of size ``ctx.h`` with (already truncated) increments ``J_k``."""
    Y, J, single = _as_batch(y_k, J_k, system.m)
    if not np.all(np.isfinite(Y)):
        raise ValueError("non-finite state")
    out, _ = srk_step_batch(system, tableau, Y, ctx, J)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# whole paths


class SrkStepper:
    """An SRK method bound to a system; the common stepping interface."""

    def __init__(self, system: PoissonSystemDef, tableau: SrkTableau, label: Optional[str] = None):
        if tableau.m != system.m:
            raise ValueError(f"tableau has m={tableau.m} but system has m={system.m}")
        self.system = system
        self.tableau = tableau
        self.label = label or tableau.label

    def step_batch(self, Y, ctx, J):
        return srk_step_batch(self.system, self.tableau, Y, ctx, J)

    def step(self, y, ctx, J):
        Y, Jb, single = _as_batch(y, J, self.system.m)
        out, _ = self.step_batch(Y, ctx, Jb)
        return out[0] if single else out

    def run_batch(self, Y0, raw, ctx, record=True):
        return run_batch(self.step_batch, Y0, raw, ctx, record)


def run_batch(step_batch, Y0: np.ndarray, raw: np.ndarray, ctx: StepContext, record: bool = True):
    """Integrate ``B`` paths with raw increments ``raw`` of shape (B, N, m).

    Increments are truncated at ``ctx.h`` before use.  Returns
    ``(states, iterations)`` where ``states`` is (B, N+1, d) when ``record``
    and the terminal states (B, d) otherwise.
    """
    Y = np.array(Y0, dtype=float)
    Bn, N = raw.shape[0], raw.shape[1]
    if N and ctx.h > 0 and math.isfinite(ctx.truncation_k):
        J = truncated_increment(raw, ctx.h, ctx.truncation_k)
    else:
        J = np.asarray(raw, dtype=float)
    iters = np.zeros((Bn, N), dtype=int)
    states = np.empty((Bn, N + 1, Y.shape[1])) if record else None
    if record:
        states[:, 0] = Y
    for n in range(N):
        try:
            Y, iters[:, n] = step_batch(Y, ctx, np.ascontiguousarray(J[:, n]))
        except ConvergenceError as exc:
            raise ConvergenceError(str(exc), step_index=n) from exc
        if record:
            states[:, n + 1] = Y
    return (states if record else Y), iters


def _check_grid(t0, T, ctx, path, m):
    if path.m != m:
        raise ValueError(f"path has {path.m} noises, system has {m}")
    if abs(path.h * path.N - (T - t0)) > 1e-12:
        raise ValueError(f"path covers {path.h * path.N}, expected T - t0 = {T - t0}")
    if path.N and abs(ctx.h - path.h) > 1e-12 * max(1.0, path.h):
        raise ValueError(f"context step {ctx.h} differs from path step {path.h}")


def integrate_with(stepper, y0, t0: float, T: float, ctx: StepContext, path: WienerPath) -> Trajectory:
    y0 = np.asarray(y0, dtype=float)
    _check_grid(t0, T, ctx, path, stepper.system.m)
    states, iters = stepper.run_batch(y0[None, :], path.increments[None], ctx, record=True)
    times = t0 + path.h * np.arange(path.N + 1)
    return Trajectory(times, states[0], stepper.label, iters[0])


def integrate_path(
    system: PoissonSystemDef,
    tableau: SrkTableau,
    y0,
    t0: float,
    T: float,
    ctx: StepContext,
    path: WienerPath,
) -> Trajectory:
    return integrate_with(SrkStepper(system, tableau), y0, t0, T, ctx, path)
