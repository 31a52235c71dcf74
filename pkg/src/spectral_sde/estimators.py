"""
Plug-in estimators of the volatility and drift.

The pipeline for one projection level is

    observations -> density coefficients, Gram and transition matrices
                 -> leading non-trivial eigenpair (kappa, u)
                 -> v = -Laplace^-1(kappa) from the empirical Laplace transform of the gaps
                 -> sigma^2(x) = 2 v int_0^x u mu / (u' mu),  capped at D
                 -> b(x) = v u / u' - sigma^2 u'' / (2 u'),  zeroed when its L2 norm exceeds 2 D

Every level ``m`` uses the leading ``m x m`` blocks of matrices computed once
at the largest level, so sweeping many levels costs little more than one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from .basis import BasisSpec, eval_basis, evaluate_expansion
from .sde_sim import ObservationSet
from .spectral_core import (
    NotPositiveDefiniteError,
    PrincipalPair,
    gram_matrix,
    select_principal_pair,
    solve_gsep,
    transition_matrix,
)

__all__ = [
    "DensityEstimate",
    "LaplaceEstimate",
    "SpectralTriple",
    "EstimatorConfig",
    "CurveEstimate",
    "ObservationMoments",
    "estimate_density",
    "empirical_laplace",
    "invert_laplace",
    "estimate_v1",
    "estimate_v1_misspecified",
    "volatility_from_triple",
    "drift_from_triple",
    "observation_moments",
    "spectral_triple",
    "estimate_pipeline",
    "estimate_levels",
]

LAPLACE_RTOL = 1e-12
MAX_BISECTIONS = 200


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning of the plug-in step.

    D caps the volatility and sets the drift threshold ``2 D``.
    ``derivative_floor`` replaces ``u'`` by ``max(u', floor)`` in both
    denominators.  ``ignore_sampling_randomness`` swaps the Laplace inversion
    for ``log(kappa) / mean gap``, the estimator designed for equidistant data.
    """

    D: float = 1.0
    interval: Tuple[float, float] = (0.1, 0.9)
    derivative_floor: float = 0.0
    grid_points: int = 1001
    ignore_sampling_randomness: bool = False

    def __post_init__(self):
        a, b = self.interval
        if not 0.0 < a < b < 1.0:
            raise ValueError("interval must satisfy 0 < a < b < 1")
        if not self.D > 0:
            raise ValueError("D must be positive")
        if self.derivative_floor < 0:
            raise ValueError("derivative_floor must be non-negative")
        if self.grid_points < 3:
            raise ValueError("grid_points must be at least 3")

    def curve_grid(self) -> np.ndarray:
        """Points of the full evaluation grid that fall in [a, b], endpoints included."""
        a, b = self.interval
        n = int(round((b - a) * (self.grid_points - 1))) + 1
        return np.linspace(a, b, max(n, 3))

    def left_grid(self) -> np.ndarray:
        a = self.interval[0]
        n = int(round(a * (self.grid_points - 1)))
        n += n % 2  # odd number of points for Simpson
        return np.linspace(0.0, a, max(n, 2) + 1)


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Projection estimate of the invariant density.  ``coeffs[0]`` is exactly 1."""

    coeffs: np.ndarray

    def __call__(self, x) -> np.ndarray:
        ev = eval_basis(BasisSpec.of_dim(self.coeffs.size), x)
        return evaluate_expansion(self.coeffs, ev)


@dataclass(frozen=True, eq=False)
class LaplaceEstimate:
    """Empirical Laplace transform ``y -> mean(exp(-y gaps))`` of the waiting times."""

    gaps: np.ndarray

    def __post_init__(self):
        gaps = np.asarray(self.gaps, dtype=float)
        if gaps.ndim != 1 or gaps.size == 0 or np.any(gaps < 0) or not np.any(gaps > 0):
            raise ValueError("need a non-empty sample of non-negative gaps, not all zero")
        object.__setattr__(self, "gaps", gaps)

    def __call__(self, y: float) -> float:
        return empirical_laplace(self, y)

    @property
    def mean_gap(self) -> float:
        return float(self.gaps.mean())


@dataclass(frozen=True, eq=False)
class SpectralTriple:
    """Everything the identification formulas consume: ``v1``, the eigenpair and the density."""

    v1: float
    pair: PrincipalPair
    density: DensityEstimate
    gram_singular: bool = False


@dataclass(frozen=True, eq=False)
class CurveEstimate:
    """Estimated coefficient on a grid in [a, b].

    ``degenerate`` counts grid points where the volatility ratio was not a
    positive number and had to be set to D.  ``thresholded`` marks a drift
    estimate replaced by zero because its L2 norm exceeded 2 D.
    """

    grid: np.ndarray
    values: np.ndarray
    kind: str
    dim: int = 0
    N: int = 0
    degenerate: int = 0
    thresholded: bool = False
    meta: Dict[str, float] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        header = (f"# kind={self.kind} J={self.dim - 1} dim={self.dim} N={self.N} "
                  f"degenerate={self.degenerate} thresholded={int(self.thresholded)}\nx,value")
        np.savetxt(path, np.column_stack([self.grid, self.values]), delimiter=",",
                   header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, kind: str = "volatility") -> "CurveEstimate":
        meta = {}
        with open(path) as fh:
            first = fh.readline()
        if first.startswith("#"):
            for tok in first[1:].split():
                key, _, val = tok.partition("=")
                meta[key] = val
        skip = 2 if first.startswith("#") else 1
        data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
        return cls(grid=data[:, 0], values=data[:, 1], kind=meta.get("kind", kind),
                   dim=int(meta.get("dim", 0)), N=int(meta.get("N", 0)),
                   degenerate=int(meta.get("degenerate", 0)),
                   thresholded=bool(int(meta.get("thresholded", 0))))


def estimate_density(obs: ObservationSet, spec: BasisSpec) -> DensityEstimate:
    """Empirical-measure projection: ``coeff_j = mean_n psi_j(X_{tau_n})`` over all N + 1 states."""
    ev = eval_basis(spec, obs.states)
    return DensityEstimate(coeffs=ev.values.mean(axis=1))


def empirical_laplace(le: LaplaceEstimate, y: float) -> float:
    if y < 0:
        raise ValueError("the Laplace transform is evaluated at y >= 0")
    return float(np.mean(np.exp(-y * le.gaps)))


def invert_laplace(le: LaplaceEstimate, kappa: float) -> float:
    """Solve ``L(y) = kappa`` for ``0 < kappa < 1``.

    The root is bracketed by doubling ``y`` until ``L(y) < kappa`` and then
    refined by bisection to ``|L(y) - kappa| <= 1e-12 kappa``.
    """
    if not kappa < 1.0:
        raise ValueError(f"cannot invert the Laplace transform at kappa={kappa} >= 1")
    if not kappa > 0.0:
        raise ValueError(f"cannot invert the Laplace transform at kappa={kappa} <= 0")
    if np.ptp(le.gaps) == 0.0:
        # equal gaps: L(y) = exp(-y gap) has an exact inverse
        return -math.log(kappa) / le.gaps[0]
    lo, hi = 0.0, 1.0
    while empirical_laplace(le, hi) >= kappa:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise ValueError(f"Laplace transform never falls below kappa={kappa}")
    tol = LAPLACE_RTOL * kappa
    mid = 0.5 * (lo + hi)
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        val = empirical_laplace(le, mid)
        if abs(val - kappa) <= tol or mid in (lo, hi):
            break
        if val > kappa:
            lo = mid
        else:
            hi = mid
    return mid


def estimate_v1(pair: PrincipalPair, le: LaplaceEstimate) -> float:
    """``v1 = -Laplace^-1(kappa)`` when the pair is valid with ``kappa > 0``, else 0."""
    if not pair.valid or not pair.kappa > 0:
        return 0.0
    return -invert_laplace(le, pair.kappa)


def estimate_v1_misspecified(pair: PrincipalPair, le: LaplaceEstimate) -> float:
    """Equidistant-sampling inversion ``log(kappa) / mean gap``, ignoring the gap law."""
    if not pair.valid or not pair.kappa > 0:
        return 0.0
    return math.log(pair.kappa) / le.mean_gap


def _curve_tables(triple: SpectralTriple, cfg: EstimatorConfig):
    u = triple.pair.coeffs
    mu = triple.density.coeffs
    if mu.size < u.size:
        mu = np.concatenate([mu, np.zeros(u.size - mu.size)])
    spec = BasisSpec.of_dim(max(u.size, mu.size))
    x = cfg.curve_grid()
    ev = eval_basis(spec, x)
    u_full = np.zeros(spec.dim)
    u_full[:u.size] = u
    um = evaluate_expansion(u_full, ev)
    u1 = evaluate_expansion(u_full, ev, 1)
    u2 = evaluate_expansion(u_full, ev, 2)
    mm = evaluate_expansion(mu, ev)
    # int_0^x u mu: Simpson over [0, a] plus cumulative Simpson along the curve grid
    xl = cfg.left_grid()
    evl = eval_basis(spec, xl)
    head = simpson(evaluate_expansion(u_full, evl) * evaluate_expansion(mu, evl), x=xl)
    integral = head + cumulative_simpson(um * mm, x=x, initial=0.0)
    return x, um, u1, u2, mm, integral


def volatility_from_triple(triple: SpectralTriple, cfg: EstimatorConfig = EstimatorConfig(),
                           N: int = 0) -> CurveEstimate:
    """``sigma^2(x) = 2 v int_0^x u mu / (u' mu)`` on [a, b], capped at D.

    Grid points where the ratio is not a positive finite number are set to D
    and counted in ``degenerate``.
    """
    x, _, u1, _, mm, integral = _curve_tables(triple, cfg)
    u1 = np.maximum(u1, cfg.derivative_floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = 2.0 * triple.v1 * integral / (u1 * mm)
    bad = ~np.isfinite(ratio) | (ratio <= 0)
    values = np.where(bad, cfg.D, np.minimum(ratio, cfg.D))
    return CurveEstimate(grid=x, values=values, kind="volatility", dim=triple.pair.coeffs.size,
                         N=N, degenerate=int(bad.sum()))


def drift_from_triple(triple: SpectralTriple, vol: CurveEstimate, cfg: EstimatorConfig = EstimatorConfig(),
                      N: int = 0) -> CurveEstimate:
    """``b~ = v u / u' - sigma^2 u'' / (2 u')``; replaced by zero if ``||b~||_L2[a,b] > 2 D``."""
    x, um, u1, u2, _, _ = _curve_tables(triple, cfg)
    if vol.values.shape != x.shape:
        raise ValueError("volatility curve does not live on the estimator grid")
    u1 = np.maximum(u1, cfg.derivative_floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        b = triple.v1 * um / u1 - vol.values * u2 / (2.0 * u1)
        norm = math.sqrt(simpson(b * b, x=x)) if np.all(np.isfinite(b)) else math.inf
    thresholded = not norm <= 2.0 * cfg.D
    if thresholded:
        b = np.zeros_like(x)
    return CurveEstimate(grid=x, values=b, kind="drift", dim=triple.pair.coeffs.size, N=N,
                         thresholded=thresholded, meta={"raw_norm": norm})


@dataclass(frozen=True, eq=False)
class ObservationMoments:
    """Basis moments of one observation set at a maximal dimension.

    Nested cosine spaces share their leading basis functions, so the
    quantities for any smaller dimension are leading blocks of these.
    """

    gram: np.ndarray
    transition: np.ndarray
    density_coeffs: np.ndarray
    laplace: LaplaceEstimate
    N: int

    @property
    def max_dim(self) -> int:
        return self.gram.shape[0]


def observation_moments(obs: ObservationSet, max_dim: int) -> ObservationMoments:
    if obs.N < max_dim:
        raise ValueError(f"need at least as many gaps as basis functions: N={obs.N} < m={max_dim}")
    ev = eval_basis(BasisSpec.of_dim(max_dim), obs.states)
    return ObservationMoments(gram=gram_matrix(ev), transition=transition_matrix(ev),
                              density_coeffs=ev.values.mean(axis=1),
                              laplace=LaplaceEstimate(obs.gaps), N=obs.N)


def spectral_triple(moments: ObservationMoments, m: int, cfg: EstimatorConfig = EstimatorConfig()) -> SpectralTriple:
    """Eigenpair, ``v1`` and density at dimension ``m`` from precomputed moments."""
    if not 1 <= m <= moments.max_dim:
        raise ValueError(f"dimension {m} outside 1..{moments.max_dim}")
    G = moments.gram[:m, :m]
    R = moments.transition[:m, :m]
    try:
        sol = solve_gsep(R, G)
        singular = False
    except NotPositiveDefiniteError:
        sol, singular = None, True
    pair = select_principal_pair(sol, m, cfg.interval)
    if cfg.ignore_sampling_randomness:
        v1 = estimate_v1_misspecified(pair, moments.laplace)
    else:
        v1 = estimate_v1(pair, moments.laplace)
    density = DensityEstimate(coeffs=moments.density_coeffs[:m].copy())
    return SpectralTriple(v1=v1, pair=pair, density=density, gram_singular=singular)


def estimate_levels(obs_or_moments, dims: Iterable[int], cfg: EstimatorConfig = EstimatorConfig(),
                    drift: bool = True) -> Dict[int, Tuple[SpectralTriple, CurveEstimate, Optional[CurveEstimate]]]:
    """Run the plug-in pipeline at each dimension in ``dims``."""
    dims = sorted(set(int(m) for m in dims))
    if isinstance(obs_or_moments, ObservationMoments):
        moments = obs_or_moments
    else:
        moments = observation_moments(obs_or_moments, dims[-1])
    out = {}
    for m in dims:
        triple = spectral_triple(moments, m, cfg)
        vol = volatility_from_triple(triple, cfg, N=moments.N)
        b = drift_from_triple(triple, vol, cfg, N=moments.N) if drift else None
        out[m] = (triple, vol, b)
    return out


def estimate_pipeline(obs: ObservationSet, J: int, cfg: EstimatorConfig = EstimatorConfig()):
    """Volatility and drift estimates at projection level ``J`` (dimension ``J + 1``).

    Returns
    -------
    (SpectralTriple, CurveEstimate, CurveEstimate)
        The spectral ingredients, the volatility and the drift.
    """
    m = J + 1
    if obs.N < m:
        raise ValueError(f"need at least as many gaps as basis functions: N={obs.N} < m={m}")
    return estimate_levels(obs, [m], cfg)[m]
