"""Cosine approximation spaces on [0, 1].

``V_J`` is spanned by ``1`` and ``sqrt(2) cos(j pi x)`` for ``1 <= j <= J``,
an L2([0, 1])-orthonormal family whose members satisfy Neumann boundary
conditions, so coefficient vectors and functions are interchangeable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import simpson

__all__ = ["BasisSpec", "BasisEval", "eval_basis", "project_function", "evaluate_expansion", "ORDERS"]

SQRT2 = np.sqrt(2.0)
ORDERS = (0, 1, 2, "antiderivative")


@dataclass(frozen=True)
class BasisSpec:
    """Cosine space of level ``J``; its dimension is ``m = J + 1``."""

    level: int
    kind: str = "cosine"

    def __post_init__(self):
        if self.kind != "cosine":
            raise ValueError(f"unsupported basis kind {self.kind!r}")
        if int(self.level) != self.level or self.level < 0:
            raise ValueError("level must be a non-negative integer")

    @classmethod
    def of_dim(cls, m: int) -> "BasisSpec":
        if m < 1:
            raise ValueError("dimension must be at least 1")
        return cls(level=m - 1)

    @property
    def dim(self) -> int:
        return self.level + 1


@dataclass(frozen=True, eq=False)
class BasisEval:
    """Basis functions and their derivatives tabulated on a grid.

    Every array has shape ``(m, len(grid))``; row ``j`` belongs to ``psi_j``.
    """

    grid: np.ndarray
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    antiderivatives: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def truncate(self, m: int) -> "BasisEval":
        """Restriction to the first ``m`` basis functions (the nested space)."""
        if not 1 <= m <= self.dim:
            raise ValueError(f"cannot truncate a {self.dim}-dimensional basis to {m}")
        return BasisEval(self.grid, self.values[:m], self.d1[:m], self.d2[:m], self.antiderivatives[:m])

    def table(self, order) -> np.ndarray:
        if order == 0:
            return self.values
        if order == 1:
            return self.d1
        if order == 2:
            return self.d2
        if order == "antiderivative":
            return self.antiderivatives
        raise ValueError(f"unknown order {order!r}; expected one of {ORDERS}")


def eval_basis(spec: BasisSpec, grid) -> BasisEval:
    """Tabulate ``psi_j``, ``psi_j'``, ``psi_j''`` and ``int_0^x psi_j`` on ``grid``."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if np.any(grid < 0.0) or np.any(grid > 1.0):
        raise ValueError("basis grid must lie in [0, 1]")
    freq = np.pi * np.arange(spec.dim)[:, None]
    phase = freq * grid[None, :]
    cos, sin = np.cos(phase), np.sin(phase)

    values = SQRT2 * cos
    values[0] = 1.0
    d1 = -SQRT2 * freq * sin
    d2 = -(freq ** 2) * values
    anti = np.empty_like(values)
    anti[0] = grid
    anti[1:] = SQRT2 * sin[1:] / freq[1:]
    return BasisEval(grid=grid, values=values, d1=d1, d2=d2, antiderivatives=anti)


def project_function(f: Callable, spec: BasisSpec, n_points: int = 10001) -> np.ndarray:
    """L2([0, 1]) projection coefficients ``int f psi_j`` by composite Simpson."""
    if n_points % 2 == 0:
        n_points += 1
    x = np.linspace(0.0, 1.0, n_points)
    fx = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
    ev = eval_basis(spec, x)
    return simpson(ev.values * fx[None, :], x=x, axis=1)


def evaluate_expansion(coeffs, ev: BasisEval, order=0) -> np.ndarray:
    """``sum_j coeffs[j] * psi_j^{(order)}`` on the grid of ``ev``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 1 or coeffs.size != ev.dim:
        raise ValueError(f"expected {ev.dim} coefficients, got shape {coeffs.shape}")
    return coeffs @ ev.table(order)
