"""Benchmark systems: the stochastic rigid body and a linear stochastic Poisson system."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import HamiltonianSpec, PoissonSystemDef, StructureMatrix
from .solver import StepContext, srk_step
from .tableau import midpoint_tableau


class QuadraticForm:
    """``scale / 2 * y^T S y``; picklable so systems can cross process boundaries."""

    def __init__(self, S, scale: float = 1.0):
        self.S = np.array(S, dtype=float)
        self.scale = float(scale)

    def value(self, y):
        y = np.asarray(y, dtype=float)
        return 0.5 * self.scale * np.einsum("...i,ij,...j->...", y, self.S, y)

    def gradient(self, y):
        return self.scale * np.einsum("ij,...j->...i", self.S, np.asarray(y, dtype=float))

    def spec(self, name: str = "") -> HamiltonianSpec:
        return HamiltonianSpec(self.value, self.gradient, name)


class LinearForm:
    def __init__(self, a):
        self.a = np.array(a, dtype=float)

    def value(self, y):
        return np.einsum("...j,j->...", np.asarray(y, dtype=float), self.a)

    def gradient(self, y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(self.a, y.shape).copy()

    def spec(self, name: str = "") -> HamiltonianSpec:
        return HamiltonianSpec(self.value, self.gradient, name)


# ---------------------------------------------------------------------------
# rigid body


def cross_matrix(y) -> np.ndarray:
    """``B(y)`` with ``B(y) v = y x v``."""
    y = np.asarray(y, dtype=float)
    out = np.zeros(y.shape[:-1] + (3, 3))
    out[..., 0, 1] = -y[..., 2]
    out[..., 0, 2] = y[..., 1]
    out[..., 1, 0] = y[..., 2]
    out[..., 1, 2] = -y[..., 0]
    out[..., 2, 0] = -y[..., 1]
    out[..., 2, 1] = y[..., 0]
    return out


_CROSS_DERIVATIVE = np.zeros((3, 3, 3))
for (_i, _j, _s), _v in {
    (0, 1, 2): -1.0,
    (0, 2, 1): 1.0,
    (1, 0, 2): 1.0,
    (1, 2, 0): -1.0,
    (2, 0, 1): -1.0,
    (2, 1, 0): 1.0,
}.items():
    _CROSS_DERIVATIVE[_i, _j, _s] = _v
_CROSS_DERIVATIVE.setflags(write=False)


def cross_matrix_derivative(y) -> np.ndarray:
    y = np.asarray(y)
    return np.broadcast_to(_CROSS_DERIVATIVE, y.shape[:-1] + (3, 3, 3))


@dataclass(frozen=True)
class RigidBodyParams:
    I1: float = math.sqrt(2) + math.sqrt(2 / 1.51)
    I2: float = math.sqrt(2) - 0.51 * math.sqrt(2 / 1.51)
    I3: float = 1.0
    c: float = 0.2

    def __post_init__(self):
        if min(self.I1, self.I2, self.I3) <= 0:
            raise ValueError("moments of inertia must be positive")
        if self.c == 0:
            raise ValueError("noise intensity c must be nonzero")

    @property
    def inverse_inertia(self) -> np.ndarray:
        return np.array([1 / self.I1, 1 / self.I2, 1 / self.I3])


class _RigidJacobian:
    def __init__(self, inv_inertia, c):
        self.inv_inertia = np.asarray(inv_inertia, dtype=float)
        self.c = c

    def __call__(self, l, y):
        y = np.asarray(y, dtype=float)
        # d/dy [y x (D y)] = [y]_x D - [D y]_x
        jac = cross_matrix(y) * self.inv_inertia - cross_matrix(y * self.inv_inertia)
        return jac if l == 0 else self.c * jac


RIGID_Y0 = (1 / math.sqrt(2), 1 / math.sqrt(2), 0.0)


def rigid_body_system(p: Optional[RigidBodyParams] = None) -> PoissonSystemDef:
    p = p or RigidBodyParams()
    inv_i = p.inverse_inertia
    return PoissonSystemDef(
        d=3,
        m=1,
        structure=StructureMatrix(cross_matrix, derivative=cross_matrix_derivative),
        hamiltonians=[
            QuadraticForm(np.diag(inv_i)).spec("H"),
            QuadraticForm(np.diag(inv_i), p.c).spec("cH"),
        ],
        casimirs=[QuadraticForm(np.eye(3)).spec("C")],
        field_jacobian=_RigidJacobian(inv_i, p.c),
        name="rigid",
    )


# ---------------------------------------------------------------------------
# linear system


@dataclass(frozen=True)
class LinearSpsDef:
    """Constant structure ``B``, drift Hamiltonian ``y^T S1 y / 2`` and
    diffusion Hamiltonian ``y^T M y / 8``."""

    B: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 1.0, -1.0], [-1.0, 0.0, 3.0], [1.0, -3.0, 0.0]])
    )
    S1: np.ndarray = field(
        default_factory=lambda: np.array([[2.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
    )
    M: np.ndarray = field(
        default_factory=lambda: np.array([[11.0, 4.0, 4.0], [4.0, 2.0, 1.0], [4.0, 1.0, 2.0]])
    )

    @property
    def S2(self) -> np.ndarray:
        return self.M / 4

    @property
    def A0(self) -> np.ndarray:
        return self.B @ self.S1

    @property
    def A1(self) -> np.ndarray:
        return self.B @ self.M / 4


class _ConstantJacobian:
    def __init__(self, mats):
        self.mats = [np.asarray(a, dtype=float) for a in mats]

    def __call__(self, l, y):
        return self.mats[l]


class LinearExactSolution:
    """``y(t) = exp((t - t0) A0 + (W(t) - W(t0)) A1) y0``."""

    def __init__(self, A0, A1):
        self.A0 = np.asarray(A0, dtype=float)
        self.A1 = np.asarray(A1, dtype=float)

    def __call__(self, t, W_t, y0, t0: float = 0.0, W_t0: float = 0.0):
        if t < t0:
            raise ValueError("exact solution is evaluated forward in time only")
        w = float(np.sum(W_t)) - float(np.sum(W_t0))
        return matrix_exponential((t - t0) * self.A0 + w * self.A1) @ np.asarray(y0, dtype=float)


LINEAR_DEF = LinearSpsDef()


def linear_sps_system(defn: Optional[LinearSpsDef] = None) -> PoissonSystemDef:
    defn = defn or LINEAR_DEF
    H1 = QuadraticForm(defn.S1).spec("H1")
    H2 = QuadraticForm(defn.S2).spec("H2")
    return PoissonSystemDef(
        d=3,
        m=1,
        structure=StructureMatrix.constant(defn.B),
        hamiltonians=[H1, H2],
        casimirs=[LinearForm([3.0, 1.0, 1.0]).spec("C")],
        invariants=[H1, H2],
        exact_solution=LinearExactSolution(defn.A0, defn.A1),
        field_jacobian=_ConstantJacobian([defn.A0, defn.A1]),
        name="linear",
    )


def linear_exact_solution(t: float, W_t, y0, t0: float = 0.0) -> np.ndarray:
    return LinearExactSolution(LINEAR_DEF.A0, LINEAR_DEF.A1)(t, W_t, y0, t0)


SYSTEMS = {"rigid": rigid_body_system, "linear": linear_sps_system}


# ---------------------------------------------------------------------------
# matrix exponential

# degree-13 diagonal Pade coefficients and the matching scaling threshold
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152


def matrix_exponential(M) -> np.ndarray:
    """Scaling and squaring with a fixed [13/13] Pade approximant."""
    A = np.array(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix_exponential expects a square matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    n = A.shape[0]
    ident = np.eye(n)
    norm = np.linalg.norm(A, 1)
    if norm == 0:
        return ident
    if not np.any(np.tril(A)) or not np.any(np.triu(A)):
        # strictly triangular, hence nilpotent: the series terminates
        return _finite_series(A)
    squarings = max(0, int(math.ceil(math.log2(norm / _THETA13))))
    A = A / 2.0**squarings
    b = _PADE13
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    R = np.linalg.solve(V - U, V + U)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(squarings):
            R = R @ R
    if not np.all(np.isfinite(R)):
        raise OverflowError("matrix exponential overflowed")
    return R


def _finite_series(A):
    out = np.eye(A.shape[0])
    term = out
    for k in range(1, A.shape[0]):
        term = term @ A / k
        out = out + term
    return out


def midpoint_reference_step(
    system: PoissonSystemDef, y_k, h: float, increments, ctx: Optional[StepContext] = None
) -> np.ndarray:
    """Stochastic midpoint rule: the one-stage tableau with ``a = 1/2, b = 1``."""
    ctx = ctx or StepContext(h)
    if ctx.h != h:
        ctx = StepContext(h, ctx.truncation_k, ctx.newton_tol, ctx.newton_max_iter)
    return srk_step(system, midpoint_tableau(system.m), y_k, ctx, increments)
