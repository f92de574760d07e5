"""Transformed Runge-Kutta methods.

A chart ``theta: y -> (Z, Cas)`` puts the Poisson system in canonical form
``dZ = J^{-1} grad_Z K_l(Z, Cas) (dt, o dW_r)`` with the Casimir coordinates
``Cas`` frozen.  A symplectic SRK method steps ``Z``; the result is mapped
back through ``theta^{-1}``.  The Casimir coordinates are copied, never
integrated, so Casimirs are conserved up to the round-off of the inverse map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import HamiltonianSpec, PoissonSystemDef, StructureMatrix
from .solver import StepContext, _as_batch, run_batch, srk_step_batch
from .systems import RigidBodyParams
from .tableau import SrkTableau, check_symplectic_conditions

EPS_DOMAIN = 1e-10


class ChartDomainError(ValueError):
    pass


@dataclass(frozen=True)
class CoordinateChart:
    """Darboux-Lie coordinates for a ``d = 2n + l`` dimensional system.

    ``forward`` maps ``y`` (..., d) to ``ybar = (Z, Cas)``; ``inverse`` maps
    back.  ``transformed_gradients[l](Z, Cas)`` returns ``grad_Z K_l``.
    ``domain_guard(ybar)`` is a boolean array marking where the chart is valid.
    """

    d: int
    n: int
    l: int
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    transformed_gradients: Sequence[Callable[[np.ndarray, np.ndarray], np.ndarray]]
    transformed_hamiltonians: Optional[Sequence[Callable[[np.ndarray, np.ndarray], np.ndarray]]] = None
    domain_guard: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""
    casimir_level: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.d != 2 * self.n + self.l:
            raise ValueError(f"chart dimensions inconsistent: d={self.d}, n={self.n}, l={self.l}")

    @property
    def m(self) -> int:
        return len(self.transformed_gradients) - 1

    def split(self, ybar):
        ybar = np.asarray(ybar, dtype=float)
        return ybar[..., : 2 * self.n], ybar[..., 2 * self.n :]

    def check_domain(self, ybar, where: str = "") -> None:
        if self.domain_guard is None:
            return
        ok = np.asarray(self.domain_guard(ybar))
        if not np.all(ok):
            raise ChartDomainError(f"state outside chart domain{(' ' + where) if where else ''}")

    def canonical_system(self, casimir_values=None) -> PoissonSystemDef:
        """The canonical SHS for fixed Casimir coordinates (one row per path).

        Falls back to ``casimir_level`` when no values are given.
        """
        if casimir_values is None:
            if self.casimir_level is None:
                raise ValueError("no Casimir values given and the chart has no default level")
            casimir_values = self.casimir_level
        n = self.n
        Jinv = np.zeros((2 * n, 2 * n))
        Jinv[:n, n:] = -np.eye(n)
        Jinv[n:, :n] = np.eye(n)
        cas = np.asarray(casimir_values, dtype=float)
        hams = []
        for k, grad in enumerate(self.transformed_gradients):
            value = None
            if self.transformed_hamiltonians is not None:
                value = _Frozen(self.transformed_hamiltonians[k], cas)
            hams.append(HamiltonianSpec(value, _Frozen(grad, cas), f"K{k}"))
        return PoissonSystemDef(
            d=2 * n,
            m=self.m,
            structure=StructureMatrix.constant(Jinv),
            hamiltonians=hams,
            name=f"{self.name}-canonical",
            validate=False,
        )


class _Frozen:
    def __init__(self, fn, cas):
        self.fn = fn
        self.cas = cas

    def __call__(self, Z):
        return self.fn(Z, self.cas)


# ---------------------------------------------------------------------------
# rigid body chart


class _RigidChartFunctions:
    """Chart ``(y1, y2, y3) -> (P, Q, Cas) = (y2, atan2(y3, y1), |y|^2 / 2)``."""

    def __init__(self, p: RigidBodyParams):
        self.p = p

    def forward(self, y):
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        out[..., 0] = y[..., 1]
        out[..., 1] = np.arctan2(y[..., 2], y[..., 0])
        out[..., 2] = 0.5 * (y[..., 0] ** 2 + y[..., 1] ** 2 + y[..., 2] ** 2)
        return out

    def inverse(self, ybar):
        ybar = np.asarray(ybar, dtype=float)
        P, Q, cas = ybar[..., 0], ybar[..., 1], ybar[..., 2]
        r = np.sqrt(2 * cas - P**2)
        out = np.empty_like(ybar)
        out[..., 0] = r * np.cos(Q)
        out[..., 1] = P
        out[..., 2] = r * np.sin(Q)
        return out

    def guard(self, ybar):
        ybar = np.asarray(ybar, dtype=float)
        return 2 * ybar[..., 2] - ybar[..., 0] ** 2 > EPS_DOMAIN

    # canonical vector fields: dP = f (dt + c o dW), dQ = g (dt + c o dW)
    def f(self, P, Q, cas):
        p = self.p
        return -(1 / (2 * p.I3) - 1 / (2 * p.I1)) * (2 * cas - P**2) * np.sin(2 * Q)

    def g(self, P, Q, cas):
        p = self.p
        return (1 / p.I2 - np.cos(Q) ** 2 / p.I1 - np.sin(Q) ** 2 / p.I3) * P

    def K(self, Z, cas):
        p = self.p
        P, Q, c0 = _unpack(Z, cas)
        return (
            (2 * c0 - P**2) * np.cos(Q) ** 2 / (2 * p.I1)
            + P**2 / (2 * p.I2)
            + (2 * c0 - P**2) * np.sin(Q) ** 2 / (2 * p.I3)
        )

    def grad_K(self, Z, cas):
        P, Q, c0 = _unpack(Z, cas)
        # J^{-1} grad K = (f, g)  =>  grad K = (g, -f)
        out = np.empty(np.shape(P) + (2,))
        out[..., 0] = self.g(P, Q, c0)
        out[..., 1] = -self.f(P, Q, c0)
        return out


def _unpack(Z, cas):
    Z = np.asarray(Z, dtype=float)
    P, Q = Z[..., 0], Z[..., 1]
    c0 = np.asarray(cas, dtype=float)[..., 0]
    c0 = c0.reshape(c0.shape + (1,) * (P.ndim - c0.ndim))
    return P, Q, c0


class _Scaled:
    def __init__(self, fn, scale):
        self.fn = fn
        self.scale = scale

    def __call__(self, Z, cas):
        return self.scale * self.fn(Z, cas)


def rigid_body_chart(
    C_value: Optional[float] = None, params: Optional[RigidBodyParams] = None
) -> CoordinateChart:
    """Darboux-Lie chart of the stochastic rigid body.

    The chart is valid on every Casimir level set; the level is carried in the
    third coordinate and enters the canonical fields through ``Cas``.
    ``C_value`` only sets the default level used by ``canonical_system()``.
    """
    if C_value is not None and not C_value > 0:
        raise ValueError("Casimir level must be positive")
    p = params or RigidBodyParams()
    fns = _RigidChartFunctions(p)
    return CoordinateChart(
        d=3,
        n=1,
        l=1,
        forward=fns.forward,
        inverse=fns.inverse,
        transformed_gradients=[fns.grad_K, _Scaled(fns.grad_K, p.c)],
        transformed_hamiltonians=[fns.K, _Scaled(fns.K, p.c)],
        domain_guard=fns.guard,
        name="rigid",
        casimir_level=None if C_value is None else (float(C_value),),
    )


class _Identity:
    def __call__(self, y):
        return np.array(y, dtype=float)


class _PlainGradient:
    def __init__(self, grad):
        self.grad = grad

    def __call__(self, Z, cas):
        return self.grad(Z)


def identity_chart(system: PoissonSystemDef) -> CoordinateChart:
    """Trivial chart for a system that is already canonical (``l = 0``)."""
    if system.d % 2:
        raise ValueError("identity chart needs an even-dimensional canonical system")
    return CoordinateChart(
        d=system.d,
        n=system.d // 2,
        l=0,
        forward=_Identity(),
        inverse=_Identity(),
        transformed_gradients=[_PlainGradient(H.gradient) for H in system.hamiltonians],
        transformed_hamiltonians=[_PlainGradient(H.value) for H in system.hamiltonians],
        name="identity",
    )


# ---------------------------------------------------------------------------
# stepping


class TransformedStepper:
    """Transformed SRK method: SRK in chart coordinates, mapped back each step."""

    def __init__(
        self,
        system: PoissonSystemDef,
        chart: CoordinateChart,
        tableau: SrkTableau,
        label: str = "transformed",
        require_symplectic: bool = True,
    ):
        if chart.d != system.d or chart.m != system.m:
            raise ValueError("chart does not match system dimensions")
        if tableau.m != system.m:
            raise ValueError(f"tableau has m={tableau.m} but system has m={system.m}")
        if require_symplectic and not check_symplectic_conditions(tableau, 1e-14).passes:
            raise ValueError("transformed methods need a tableau satisfying the symplectic conditions")
        self.system = system
        self.chart = chart
        self.tableau = tableau
        self.label = label

    def step_batch(self, Y, ctx, J):
        return _chart_step(self.chart, self.tableau, Y, ctx, J)

    def step(self, y, ctx, J):
        Y, Jb, single = _as_batch(y, J, self.system.m)
        out, _ = self.step_batch(Y, ctx, Jb)
        return out[0] if single else out

    def run_batch(self, Y0, raw, ctx, record=True):
        """Integrate in chart coordinates with the Casimir coordinates fixed at ``Y0``."""
        chart = self.chart
        ybar0 = chart.forward(np.asarray(Y0, dtype=float))
        chart.check_domain(ybar0, "at initial value")
        Z0, cas = chart.split(ybar0)
        canonical = chart.canonical_system(cas)

        def step_z(Z, ctx, J):
            Znew, iters = srk_step_batch(canonical, self.tableau, Z, ctx, J)
            chart.check_domain(np.concatenate([Znew, cas], axis=-1), "after step")
            return Znew, iters

        zs, iters = run_batch(step_z, Z0, raw, ctx, record)
        if record:
            cas_b = np.broadcast_to(cas[:, None, :], zs.shape[:2] + cas.shape[-1:])
            states = chart.inverse(np.concatenate([zs, cas_b], axis=-1))
            states[:, 0] = Y0  # exact start, not the chart round trip
            return states, iters
        return chart.inverse(np.concatenate([zs, cas], axis=-1)), iters


def _chart_step(chart, tableau, Y, ctx, J):
    ybar = chart.forward(Y)
    chart.check_domain(ybar, "at step start")
    Z, cas = chart.split(ybar)
    Znew, iters = srk_step_batch(chart.canonical_system(cas), tableau, Z, ctx, J)
    ybar_new = np.concatenate([Znew, cas], axis=-1)
    chart.check_domain(ybar_new, "after step")
    return chart.inverse(ybar_new), iters


def transformed_srk_step(chart: CoordinateChart, tableau: SrkTableau, y_k, ctx: StepContext, J_k) -> np.ndarray:
    """One transformed step ``y_k -> theta^{-1}(SRK(theta(y_k)))``."""
    if not check_symplectic_conditions(tableau, 1e-14).passes:
        raise ValueError("transformed methods need a tableau satisfying the symplectic conditions")
    Y, J, single = _as_batch(y_k, J_k, chart.m)
    out, _ = _chart_step(chart, tableau, Y, ctx, J)
    return out[0] if single else out
