"""Stochastic Runge-Kutta tableaus with one drift and ``m`` diffusion parts."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class TableauError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SrkTableau:
    """Coefficients ``A0, A1..Am`` (s x s) and weights ``b0, b1..bm``.

    ``A`` and ``b`` are stacked so that index 0 is the drift part and index
    ``r >= 1`` the r-th noise.
    """

    A: np.ndarray  # (m + 1, s, s)
    b: np.ndarray  # (m + 1, s)
    label: str = "srk"

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float)
        if A.ndim != 3 or b.ndim != 2 or A.shape[0] < 2:
            raise TableauError("expected A of shape (m+1, s, s) and b of shape (m+1, s) with m >= 1")
        if A.shape[1] != A.shape[2] or A.shape[:2] != b.shape:
            raise TableauError(f"inconsistent tableau shapes A{A.shape}, b{b.shape}")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def s(self) -> int:
        return self.b.shape[1]

    @property
    def m(self) -> int:
        return self.b.shape[0] - 1

    @property
    def A0(self) -> np.ndarray:
        return self.A[0]

    @property
    def Ar(self) -> list[np.ndarray]:
        return [self.A[r] for r in range(1, self.m + 1)]

    @property
    def b0(self) -> np.ndarray:
        return self.b[0]

    @property
    def br(self) -> list[np.ndarray]:
        return [self.b[r] for r in range(1, self.m + 1)]

    @property
    def is_lower_triangular(self) -> bool:
        upper = np.triu_indices(self.s, k=1)
        return all(np.all(self.A[l][upper] == 0.0) for l in range(self.m + 1))

    def __eq__(self, other):
        if not isinstance(other, SrkTableau):
            return NotImplemented
        return np.array_equal(self.A, other.A) and np.array_equal(self.b, other.b)

    def __hash__(self):
        return hash((self.A.tobytes(), self.b.tobytes()))

    def to_text(self) -> str:
        lines = [f"{self.s} {self.m}"]
        for l in range(self.m + 1):
            for row in self.A[l]:
                lines.append(" ".join(f"{x:.17g}" for x in row))
        for l in range(self.m + 1):
            lines.append(" ".join(f"{x:.17g}" for x in self.b[l]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, label: str = "file") -> "SrkTableau":
        """Parse ``s m`` followed by row-major ``A0..Am`` then ``b0..bm``.

        Tokens are whitespace separated; ``#`` starts a comment.
        """
        tokens = []
        for line in text.splitlines():
            tokens.extend(line.split("#", 1)[0].split())
        if len(tokens) < 2:
            raise TableauError("tableau text must start with 's m'")
        try:
            s, m = int(tokens[0]), int(tokens[1])
            values = [float(t) for t in tokens[2:]]
        except ValueError as exc:
            raise TableauError(f"malformed tableau text: {exc}") from None
        if s < 1 or m < 1:
            raise TableauError(f"need s >= 1 and m >= 1, got s={s}, m={m}")
        expected = (m + 1) * s * s + (m + 1) * s
        if len(values) != expected:
            raise TableauError(f"expected {expected} coefficients for s={s}, m={m}, got {len(values)}")
        split = (m + 1) * s * s
        A = np.array(values[:split]).reshape(m + 1, s, s)
        b = np.array(values[split:]).reshape(m + 1, s)
        return cls(A, b, label=label)


@dataclass(frozen=True)
class SymplecticReport:
    residual_00: float
    residual_0r: float
    residual_rz: float
    tol: float

    @property
    def passes(self) -> bool:
        return max(self.residual_00, self.residual_0r, self.residual_rz) <= self.tol


def build_dirk(weights: Sequence[Sequence[float]], label: str = "dirk") -> SrkTableau:
    """Composition-of-midpoints tableau from weight vectors ``b0..bm``.

    ``a_ij = b_j / 2`` on the diagonal, ``b_j`` below it and zero above, for
    every part ``l = 0..m``.
    """
    weights = [np.asarray(w, dtype=float) for w in weights]
    if len(weights) < 2:
        raise TableauError("need drift weights and at least one diffusion weight vector")
    s = weights[0].size
    if s < 1 or any(w.ndim != 1 or w.size != s for w in weights):
        raise TableauError("all weight vectors must be one-dimensional with the same length s >= 1")
    for l, w in enumerate(weights):
        if abs(w.sum() - 1.0) > 1e-14:
            raise TableauError(f"weights b^{l} sum to {w.sum()!r}, expected 1")
        if np.any(w < 0):
            warnings.warn(f"weights b^{l} contain negative entries", stacklevel=2)
    b = np.stack(weights)
    A = np.tril(np.broadcast_to(b[:, None, :], (len(weights), s, s)), k=-1).copy()
    idx = np.arange(s)
    A[:, idx, idx] = b / 2
    return SrkTableau(A, b, label=label)


def midpoint_tableau(m: int = 1) -> SrkTableau:
    return build_dirk([[1.0]] * (m + 1), label="midpoint")


def explicit_euler_tableau(m: int = 1) -> SrkTableau:
    return SrkTableau(np.zeros((m + 1, 1, 1)), np.ones((m + 1, 1)), label="explicit-euler")


def check_symplectic_conditions(t: SrkTableau, tol: float = 1e-14) -> SymplecticReport:
    if tol <= 0:
        raise ValueError("tol must be positive")
    A, b = t.A, t.b
    # R[l, z, i, j] = b^l_i b^z_j - b^l_i a^z_ij - b^z_j a^l_ji
    R = (
        b[:, None, :, None] * b[None, :, None, :]
        - b[:, None, :, None] * A[None, :, :, :]
        - b[None, :, None, :] * np.swapaxes(A, 1, 2)[:, None, :, :]
    )
    R = np.abs(R)
    return SymplecticReport(
        residual_00=float(R[0, 0].max()),
        residual_0r=float(max(R[0, 1:].max(), R[1:, 0].max())),
        residual_rz=float(R[1:, 1:].max()),
        tol=tol,
    )
