"""Stochastic Poisson systems and Poisson-bracket checks.

A system is ``dy = B(y) (grad H_0 dt + sum_r grad H_r o dW_r)`` with a
skew-symmetric structure matrix ``B`` obeying the Jacobi identity.  All
callables work on arrays of shape ``(..., d)`` so a batch of states can be
evaluated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

_EPS = np.finfo(float).eps


class SystemDefinitionError(ValueError):
    pass


@dataclass(frozen=True)
class StructureMatrix:
    """Structure matrix ``B(y)``.

    ``derivative`` (optional) returns ``dB[..., i, j, s] = d b_ij / d y_s``.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    is_constant: bool = False
    constant_value: Optional[np.ndarray] = None
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def constant(cls, matrix) -> "StructureMatrix":
        matrix = np.array(matrix, dtype=float)
        matrix.setflags(write=False)
        d = matrix.shape[0]
        return cls(
            evaluate=_ConstantMatrix(matrix),
            is_constant=True,
            constant_value=matrix,
            derivative=_ZeroDerivative(d),
        )

    def __call__(self, y) -> np.ndarray:
        return self.evaluate(np.asarray(y, dtype=float))


class _ConstantMatrix:
    def __init__(self, matrix):
        self.matrix = matrix

    def __call__(self, y):
        y = np.asarray(y)
        return np.broadcast_to(self.matrix, y.shape[:-1] + self.matrix.shape)


class _ZeroDerivative:
    def __init__(self, d):
        self.d = d

    def __call__(self, y):
        y = np.asarray(y)
        return np.zeros(y.shape[:-1] + (self.d, self.d, self.d))


@dataclass(frozen=True)
class HamiltonianSpec:
    """A scalar function together with its closed-form gradient."""

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def __call__(self, y):
        return self.value(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class PoissonSystemDef:
    """Stochastic Poisson system with ``m`` Stratonovich noises.

    ``hamiltonians`` holds ``H_0`` (drift) followed by ``H_1..H_m``.
    ``field_jacobian(l, y)`` is an optional hook returning ``D f_l(y)``; the
    solver falls back to finite differences without it.
    """

    d: int
    m: int
    structure: StructureMatrix
    hamiltonians: Sequence[HamiltonianSpec]
    casimirs: Sequence[HamiltonianSpec] = ()
    invariants: Sequence[HamiltonianSpec] = ()
    exact_solution: Optional[Callable] = None
    field_jacobian: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    name: str = ""
    validate: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if self.d < 1:
            raise SystemDefinitionError(f"dimension must be positive, got {self.d}")
        if self.m < 1:
            raise SystemDefinitionError(f"noise count must be >= 1, got {self.m}")
        if len(self.hamiltonians) != self.m + 1:
            raise SystemDefinitionError(
                f"expected {self.m + 1} Hamiltonians (H_0..H_m), got {len(self.hamiltonians)}"
            )
        if self.validate and self.casimirs:
            probes = probe_points(self.d, 10, seed=0)
            for k, cas in enumerate(self.casimirs):
                res = max(casimir_residual(cas, self, y) for y in probes)
                if res > 1e-10:
                    raise SystemDefinitionError(
                        f"Casimir {cas.name or k} violates grad C^T B = 0 (residual {res:.3e})"
                    )

    def field(self, l: int, y) -> np.ndarray:
        return drift_diffusion_field(self, l, y)


def probe_points(d: int, count: int, seed: int = 0, radius: float = 2.0) -> np.ndarray:
    """Reproducible probe states in the hypercube ``[-radius, radius]^d``."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-radius, radius, size=(count, d))


def drift_diffusion_field(system: PoissonSystemDef, l: int, y) -> np.ndarray:
    """Return ``f_l(y) = B(y) grad H_l(y)``."""
    if not 0 <= l <= system.m:
        raise IndexError(f"field index {l} outside 0..{system.m}")
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite state passed to vector field")
    out = np.einsum("...ij,...j->...i", system.structure(y), system.hamiltonians[l].gradient(y))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"vector field f_{l} evaluated to a non-finite value")
    return out


def poisson_bracket(F: HamiltonianSpec, G: HamiltonianSpec, B: StructureMatrix, y) -> float:
    y = np.asarray(y, dtype=float)
    gf = np.asarray(F.gradient(y), dtype=float)
    gg = np.asarray(G.gradient(y), dtype=float)
    Bm = B(y)
    if gf.shape != y.shape or gg.shape != y.shape or Bm.shape != y.shape + y.shape[-1:]:
        raise ValueError("dimension mismatch between gradients, structure matrix and state")
    return float(gf @ Bm @ gg)


def check_skew_symmetry(B: StructureMatrix, y, tol: float = 1e-12) -> tuple[bool, float]:
    if tol <= 0:
        raise ValueError("tol must be positive")
    Bm = B(np.asarray(y, dtype=float))
    residual = float(np.max(np.abs(Bm + np.swapaxes(Bm, -1, -2))))
    return residual <= tol, residual


def structure_derivative_fd(B: StructureMatrix, y) -> np.ndarray:
    """Central differences of ``b_ij`` with step ``sqrt(eps) * max(1, |y_s|)``."""
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    out = np.empty((d, d, d))
    for s in range(d):
        step = np.sqrt(_EPS) * max(1.0, abs(y[s]))
        yp = y.copy()
        ym = y.copy()
        yp[s] += step
        ym[s] -= step
        out[:, :, s] = (B(yp) - B(ym)) / (yp[s] - ym[s])
    return out


def check_jacobi_identity(
    B: StructureMatrix, y, tol: float = 1e-6, use_analytic: bool = True
) -> tuple[bool, float]:
    """Max over ``(i, j, k)`` of the cyclic Jacobi sum at ``y``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = np.asarray(y, dtype=float)
    Bm = B(y)
    if use_analytic and B.derivative is not None:
        dB = np.asarray(B.derivative(y), dtype=float)
    else:
        dB = structure_derivative_fd(B, y)
    if not np.all(np.isfinite(dB)):
        raise FloatingPointError("non-finite structure-matrix derivative")
    # T[i, j, k] = sum_s d b_ij / d y_s * b_sk
    T = np.einsum("ijs,sk->ijk", dB, Bm)
    cyclic = T + np.einsum("jki->ijk", T) + np.einsum("kij->ijk", T)
    residual = float(np.max(np.abs(cyclic)))
    return residual <= tol, residual


def casimir_residual(C: HamiltonianSpec, system: PoissonSystemDef, y) -> float:
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(C.gradient(y) @ system.structure(y))))


def gradient_fd_error(H: HamiltonianSpec, y) -> float:
    """Relative mismatch between ``H.gradient`` and central differences of ``H.value``."""
    y = np.asarray(y, dtype=float)
    g = np.asarray(H.gradient(y), dtype=float)
    fd = np.empty_like(g)
    for s in range(y.size):
        step = _EPS ** (1 / 3) * max(1.0, abs(y[s]))
        yp = y.copy()
        ym = y.copy()
        yp[s] += step
        ym[s] -= step
        fd[s] = (H.value(yp) - H.value(ym)) / (yp[s] - ym[s])
    return float(np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(g))))
