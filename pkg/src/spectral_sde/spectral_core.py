"""
Empirical Gram and transition matrices and the generalised eigenproblem.

The observed chain ``X_{tau_0}, ..., X_{tau_N}`` is mapped onto the basis
values ``psi(X_{tau_n})``.  From these we build

* the Gram matrix ``G``, a trapezoidal average of ``psi psi^T`` whose
  expectation is the ``L2(mu)`` inner product on ``V_J``;
* the transition matrix ``R``, the symmetrised lag-one cross moment whose
  expectation is ``<psi, R psi'>_mu`` for the time-changed transition
  operator.

Eigenpairs of ``R x = kappa G x`` approximate those of the transition
operator.  The a posteriori and Weyl-type bounds for symmetric-definite
pencils are exposed so they can be checked numerically.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy import linalg

from .basis import BasisSpec, eval_basis, evaluate_expansion

__all__ = [
    "NotPositiveDefiniteError",
    "GsepSolution",
    "PrincipalPair",
    "ResidualBounds",
    "WeylBounds",
    "gram_matrix",
    "transition_matrix",
    "solve_gsep",
    "select_principal_pair",
    "residual_bounds",
    "weyl_bound",
    "TRIVIAL_TOL",
]

# eigenvalues above 1 - TRIVIAL_TOL are treated as the constant eigenfunction
TRIVIAL_TOL = 1e-8


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """The right-hand matrix of the pencil has no Cholesky factor."""


def _as_values(basis_values) -> np.ndarray:
    values = getattr(basis_values, "values", basis_values)
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] < 2:
        raise ValueError("need basis values of shape (m, N + 1) with N >= 1")
    return values


def gram_matrix(basis_values) -> np.ndarray:
    """Empirical Gram matrix from basis values at the observed states.

    Parameters
    ----------
    basis_values : BasisEval or array, shape (m, N + 1)
        ``psi_lambda(X_{tau_n})``, evaluated in observation order.

    Returns
    -------
    ndarray, shape (m, m)
        ``N^-1 (psi psi^T(X_0) / 2 + sum_{n=1}^{N-1} psi psi^T(X_n) + psi psi^T(X_N) / 2)``.
    """
    psi = _as_values(basis_values)
    n = psi.shape[1] - 1
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    g = (psi * w) @ psi.T / n
    return 0.5 * (g + g.T)


def transition_matrix(basis_values) -> np.ndarray:
    """Symmetrised lag-one cross moment ``(2N)^-1 sum (psi(X_{n+1}) psi(X_n)^T + transpose)``."""
    psi = _as_values(basis_values)
    n = psi.shape[1] - 1
    c = psi[:, 1:] @ psi[:, :-1].T
    return (c + c.T) / (2.0 * n)


@dataclass(frozen=True, eq=False)
class GsepSolution:
    """All eigenpairs of ``A x = lambda B x``, eigenvalues in decreasing order.

    Columns of ``eigenvectors`` are mutually B-orthogonal and scaled to unit
    Euclidean norm.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    b_condition: float

    def residuals(self, A, B) -> np.ndarray:
        A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
        r = A @ self.eigenvectors - (B @ self.eigenvectors) * self.eigenvalues
        return np.linalg.norm(r, axis=0)


def _cholesky(B: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(B, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"matrix is not positive definite: {exc}") from None


def solve_gsep(A, B) -> GsepSolution:
    """Solve the symmetric-definite problem ``A x = lambda B x``.

    With ``B = L L^T`` the problem reduces to the standard symmetric problem
    for ``L^-1 A L^-T``; eigenvectors are mapped back by ``x = L^-T y``.

    Raises
    ------
    NotPositiveDefiniteError
        If ``B`` has no Cholesky factorisation or is singular to working
        precision.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A and B must be square matrices of equal size")
    sv = np.linalg.svd(B, compute_uv=False)
    # singular to working precision: a Cholesky factor may exist but the reduction is meaningless
    if not sv[-1] > sv[0] * B.shape[0] * np.finfo(float).eps:
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        raise NotPositiveDefiniteError(f"matrix is numerically singular (condition number {cond:.3g})")
    L = _cholesky(B)
    tmp = linalg.solve_triangular(L, A, lower=True)
    C = linalg.solve_triangular(L, tmp.T, lower=True)
    C = 0.5 * (C + C.T)
    lam, Y = np.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    X = linalg.solve_triangular(L.T, Y[:, order], lower=False)
    X /= np.linalg.norm(X, axis=0)
    return GsepSolution(eigenvalues=lam, eigenvectors=X, b_condition=float(sv[0] / sv[-1]))


@dataclass(frozen=True, eq=False)
class PrincipalPair:
    """Leading non-trivial eigenpair of the transition pencil.

    ``coeffs`` are the cosine coefficients of the eigenfunction estimate,
    unit norm, signed so that the function increases across the target
    interval.  An invalid pair carries ``kappa = 0`` and the constant
    function.
    """

    kappa: float
    coeffs: np.ndarray
    valid: bool

    @classmethod
    def fallback(cls, m: int) -> "PrincipalPair":
        coeffs = np.zeros(m)
        coeffs[0] = 1.0
        return cls(kappa=0.0, coeffs=coeffs, valid=False)


def select_principal_pair(sol: Optional[GsepSolution], spec_or_dim, interval: Tuple[float, float] = (0.1, 0.9),
                          tol: float = TRIVIAL_TOL) -> PrincipalPair:
    """Pick the largest eigenvalue strictly below ``1 - tol`` and its eigenvector.

    ``sol=None`` stands for a failed Cholesky factorisation upstream; it and
    the absence of a positive eigenvalue below one give the fallback pair.
    """
    m = spec_or_dim.dim if isinstance(spec_or_dim, BasisSpec) else int(spec_or_dim)
    if sol is None:
        return PrincipalPair.fallback(m)
    below = np.flatnonzero(sol.eigenvalues < 1.0 - tol)
    if below.size == 0:
        return PrincipalPair.fallback(m)
    i = below[0]
    kappa = float(sol.eigenvalues[i])
    if not kappa > 0.0:
        return PrincipalPair.fallback(m)
    coeffs = sol.eigenvectors[:, i] / np.linalg.norm(sol.eigenvectors[:, i])
    a, b = interval
    ends = eval_basis(BasisSpec.of_dim(m), [a, b])
    u_a, u_b = evaluate_expansion(coeffs, ends)
    # int_a^b u' = u(b) - u(a)
    if u_b - u_a < 0:
        coeffs = -coeffs
    return PrincipalPair(kappa=kappa, coeffs=coeffs, valid=True)


class ResidualBounds(NamedTuple):
    eigenvalue_bound: float
    eigenvector_bound: float
    residual_norm: float


def _inv_norm(B: np.ndarray) -> float:
    _cholesky(B)
    return 1.0 / np.linalg.eigvalsh(B)[0]


def residual_bounds(A, B, A_tilde, B_tilde, pair, exact: Optional[GsepSolution] = None) -> ResidualBounds:
    """A posteriori bounds for an approximate eigenpair of ``A x = lambda B x``.

    Parameters
    ----------
    A, B : arrays
        The reference pencil; ``B`` must be positive definite.
    A_tilde, B_tilde : arrays
        The perturbed pencil that produced ``pair``.
    pair : (float, array)
        Approximate eigenvalue and unit-norm eigenvector.
    exact : GsepSolution, optional
        Spectrum of ``(A, B)`` used for the localising distance; computed if
        omitted.

    Returns
    -------
    ResidualBounds
        Some exact eigenvalue lies within ``eigenvalue_bound`` of the
        approximate one, and the matching unit eigenvector within
        ``eigenvector_bound``.
    """
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    A_tilde, B_tilde = np.asarray(A_tilde, dtype=float), np.asarray(B_tilde, dtype=float)
    lam_t, x_t = pair
    x_t = np.asarray(x_t, dtype=float)
    r = (A - A_tilde) @ x_t + lam_t * (B_tilde - B) @ x_t
    r_norm = float(np.linalg.norm(r))
    inv_b = _inv_norm(B)
    lam_bound = inv_b * r_norm
    if exact is None:
        exact = solve_gsep(A, B)
    dist = np.abs(exact.eigenvalues - lam_t)
    i = int(np.argmin(dist))
    others = np.delete(dist, i)
    delta = float(others.min()) if others.size else np.inf
    if r_norm == 0.0:
        vec_bound = 0.0
    else:
        vec_bound = 2.0 * np.sqrt(2.0 * exact.b_condition) / delta * lam_bound
    return ResidualBounds(float(lam_bound), float(vec_bound), r_norm)


class WeylBounds(NamedTuple):
    eigenvalues: np.ndarray
    eigenvalues_tilde: np.ndarray
    perturbed_bound: np.ndarray
    exact_bound: np.ndarray


def weyl_bound(A, B, A_tilde, B_tilde) -> WeylBounds:
    """Per-index Weyl bounds for two symmetric-definite pencils.

    With ``dA = A - A_tilde`` and ``dB = B - B_tilde`` and both spectra sorted
    decreasingly::

        |lam_i - lam~_i| <= ||B~^-1|| ||dA - lam_i dB||    (perturbed_bound)
        |lam_i - lam~_i| <= ||B^-1||  ||dA - lam~_i dB||   (exact_bound)
    """
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    A_tilde, B_tilde = np.asarray(A_tilde, dtype=float), np.asarray(B_tilde, dtype=float)
    lam = solve_gsep(A, B).eigenvalues
    lam_t = solve_gsep(A_tilde, B_tilde).eigenvalues
    dA, dB = A - A_tilde, B - B_tilde
    inv_b, inv_bt = _inv_norm(B), _inv_norm(B_tilde)
    perturbed = np.array([inv_bt * np.linalg.norm(dA - l * dB, 2) for l in lam])
    exact = np.array([inv_b * np.linalg.norm(dA - l * dB, 2) for l in lam_t])
    return WeylBounds(lam, lam_t, perturbed, exact)
