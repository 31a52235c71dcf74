"""
Reflected diffusions on [0, 1] and their randomly timed observation.

The process solves ``dX = b(X) dt + sigma(X) dW`` with instantaneous
reflection at both barriers.  Paths are produced by an Euler-Maruyama scheme
followed by a fold back into the unit interval after every step, and are then
read off at i.i.d. random waiting times that are independent of the path.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numba import njit
from scipy.integrate import cumulative_simpson, simpson

__all__ = [
    "DiffusionModel",
    "Polynomial",
    "SamplingScheme",
    "PathGrid",
    "ObservationSet",
    "SimulationError",
    "HorizonError",
    "fold_into_unit",
    "simulate_path",
    "draw_gaps",
    "observe_at_gaps",
    "sample_observations",
    "invariant_density_exact",
    "benchmark_model",
    "reflected_brownian_motion",
]

SeedLike = Union[None, int, np.random.SeedSequence, np.random.Generator]

# grid-index tolerance so that e.g. 0.25 / 0.001 lands on 250, not 249
_GRID_EPS = 1e-9
_QUAD_POINTS = 20001


class SimulationError(RuntimeError):
    """Raised when the Euler scheme produces a non-finite state."""

    def __init__(self, step_index: int):
        super().__init__(f"non-finite state produced at Euler step {step_index}")
        self.step_index = step_index


class HorizonError(ValueError):
    """The simulated path is too short for the requested observation times."""

    def __init__(self, required: float, available: float):
        super().__init__(
            f"path horizon {available:.6g} is too short; observations need a horizon of at least {required:.6g}"
        )
        self.required = required
        self.available = available


class Polynomial:
    """Picklable vectorised polynomial, coefficients lowest degree first."""

    def __init__(self, coeffs: Sequence[float]):
        c = np.array(coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("polynomial coefficients must be a non-empty 1-d sequence")
        c.setflags(write=False)
        self.coeffs = c

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coeffs)

    def __repr__(self):
        return f"Polynomial({self.coeffs.tolist()})"


@dataclass(frozen=True)
class DiffusionModel:
    """Coefficients of a reflected scalar diffusion.

    Parameters
    ----------
    sigma_sq : callable
        Squared volatility, vectorised over numpy arrays.
    drift : callable
        Drift, vectorised over numpy arrays.
    d : float
        Lower bound on the volatility, ``sigma(x) >= d``.
    D : float
        Upper bound on ``sigma_sq`` (also used as a clipping level).
    poly : tuple of arrays, optional
        Power-series coefficients (increasing degree) of ``sigma_sq`` and
        ``drift``.  When present the simulator uses a compiled kernel.
    """

    sigma_sq: Callable[[np.ndarray], np.ndarray]
    drift: Callable[[np.ndarray], np.ndarray]
    d: float = 1.0
    D: float = 1.0
    poly: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.d > 0 and self.D > 0):
            raise ValueError("volatility bounds d and D must be positive")

    @classmethod
    def polynomial(cls, sigma_sq_coeffs: Sequence[float], drift_coeffs: Sequence[float],
                   d: Optional[float] = None, D: Optional[float] = None) -> "DiffusionModel":
        """Model whose coefficients are polynomials in ``x``.

        Coefficients are given lowest degree first.  Missing bounds are read
        off a fine grid.
        """
        sigma_sq, drift = Polynomial(sigma_sq_coeffs), Polynomial(drift_coeffs)
        grid = np.linspace(0.0, 1.0, 1001)
        s_vals = sigma_sq(grid)
        if d is None:
            d = math.sqrt(max(float(s_vals.min()), 0.0)) or 1e-12
        if D is None:
            D = float(max(s_vals.max(), 1e-12))
        return cls(sigma_sq=sigma_sq, drift=drift, d=d, D=D, poly=(sigma_sq.coeffs, drift.coeffs))

    def check_bounds(self, grid: Optional[np.ndarray] = None) -> None:
        """Raise ``ValueError`` if the model violates its declared bounds on ``grid``."""
        grid = np.linspace(0.0, 1.0, 1001) if grid is None else np.asarray(grid, dtype=float)
        s = np.broadcast_to(self.sigma_sq(grid), grid.shape)
        if np.any(s < self.d ** 2 * (1 - 1e-12)):
            raise ValueError("sigma_sq falls below d**2")
        if np.any(s > self.D * (1 + 1e-12)):
            raise ValueError("sigma_sq exceeds D")
        if not np.all(np.isfinite(np.broadcast_to(self.drift(grid), grid.shape))):
            raise ValueError("drift is not finite on the grid")


def benchmark_model() -> DiffusionModel:
    """Mean-reverting benchmark: ``sigma^2 = 0.4 - (x - 0.5)^2``, ``b = 0.2 - 0.4 x``."""
    return DiffusionModel.polynomial([0.15, 1.0, -1.0], [0.2, -0.4], d=math.sqrt(0.15), D=1.0)


def reflected_brownian_motion() -> DiffusionModel:
    """Standard Brownian motion reflected at 0 and 1."""
    return DiffusionModel.polynomial([1.0], [0.0], d=1.0, D=1.0)


@dataclass(frozen=True)
class SamplingScheme:
    """Law of the waiting times between observations; every variant has mean ``delta``.

    ``kind`` is one of ``deterministic``, ``uniform`` (on ``[0, 2 delta]``),
    ``beta`` (Beta(0.2, 0.2) rescaled to ``[0, 2 delta]``) or ``exponential``
    (rate ``1 / delta``).
    """

    kind: str
    delta: float
    beta_shape: tuple = (0.2, 0.2)

    KINDS = ("deterministic", "uniform", "exponential", "beta")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown sampling scheme {self.kind!r}; expected one of {self.KINDS}")
        if not self.delta > 0:
            raise ValueError("mean gap delta must be positive")

    @property
    def name(self) -> str:
        return self.kind


@dataclass(frozen=True, eq=False)
class PathGrid:
    step: float
    states: np.ndarray
    horizon: float

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 1 or states.size == 0:
            raise ValueError("states must be a non-empty 1-d array")
        if np.any(states < 0.0) or np.any(states > 1.0):
            raise ValueError("path states must lie in [0, 1]")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    def __len__(self):
        return self.states.size

    def to_binary(self, path) -> None:
        """Write the states as a little-endian uint64 count followed by float64 values."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", self.states.size))
            fh.write(self.states.astype("<f8").tobytes())

    @classmethod
    def from_binary(cls, path, step: float) -> "PathGrid":
        raw = Path(path).read_bytes()
        (n,) = struct.unpack("<Q", raw[:8])
        states = np.frombuffer(raw[8:8 + 8 * n], dtype="<f8").astype(float)
        if states.size != n:
            raise ValueError(f"truncated path file: expected {n} values, found {states.size}")
        return cls(step=step, states=states, horizon=(n - 1) * step)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observation times ``tau_0 = 0 <= tau_1 <= ... <= tau_N`` and the states there.

    ``gaps`` holds the waiting times exactly as drawn.  Very short gaps can
    vanish when accumulated into ``times`` in floating point, so the gaps are
    kept alongside; when omitted they are recovered as ``diff(times)``.
    """

    times: np.ndarray
    states: np.ndarray
    gaps: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if times.ndim != 1 or times.shape != states.shape or times.size == 0:
            raise ValueError("times and states must be 1-d arrays of equal, non-zero length")
        if times[0] != 0.0:
            raise ValueError("the first observation time must be 0")
        gaps = np.diff(times) if self.gaps is None else np.asarray(self.gaps, dtype=float)
        if gaps.shape != (times.size - 1,):
            raise ValueError("need exactly one gap per observation after the first")
        if np.any(gaps < 0) or np.any(np.diff(times) < 0) or not np.all(np.isfinite(gaps)):
            raise ValueError("observation times must be increasing")
        if gaps.size and not np.any(gaps > 0):
            raise ValueError("all observation gaps are zero")
        if np.any(states < 0.0) or np.any(states > 1.0):
            raise ValueError("observed states must lie in [0, 1]")
        for arr in (times, states, gaps):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "gaps", gaps)

    @property
    def N(self) -> int:
        """Number of gaps (one less than the number of records)."""
        return self.times.size - 1

    def reversed(self) -> "ObservationSet":
        """Same records traversed backwards in time."""
        gaps = self.gaps[::-1]
        return ObservationSet(np.concatenate([[0.0], np.cumsum(gaps)]), self.states[::-1], gaps)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header="tau,x", comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "ObservationSet":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns tau,x")
        return cls(times=data[:, 0], states=data[:, 1])


@njit(cache=True)
def _fold(x):
    if 0.0 <= x <= 1.0:
        return x
    y = x % 2.0
    if y > 1.0:
        y = 2.0 - y
    return y


def fold_into_unit(x):
    """Reflect ``x`` into [0, 1] at both barriers (2-periodic triangle map).

    Accepts scalars or arrays; values already in [0, 1] are returned unchanged.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot fold a non-finite value")
    y = np.mod(arr, 2.0)
    y = np.where(y > 1.0, 2.0 - y, y)
    y = np.where((arr >= 0.0) & (arr <= 1.0), arr, y)
    return float(y) if np.ndim(x) == 0 else y


@njit(cache=True)
def _horner(coeffs, x):
    acc = 0.0
    for i in range(coeffs.size - 1, -1, -1):
        acc = acc * x + coeffs[i]
    return acc


@njit(cache=True)
def _euler_poly(x0, h, noise, s_coef, b_coef, out):
    sqrt_h = math.sqrt(h)
    x = x0
    out[0] = x
    for k in range(noise.size):
        s2 = _horner(s_coef, x)
        if s2 < 0.0:
            s2 = 0.0
        x = x + _horner(b_coef, x) * h + math.sqrt(s2) * sqrt_h * noise[k]
        if not math.isfinite(x):
            return k + 1
        x = _fold(x)
        out[k + 1] = x
    return -1


def _euler_generic(model, x0, h, noise, out):
    sqrt_h = math.sqrt(h)
    x = x0
    out[0] = x
    for k in range(noise.size):
        s2 = max(float(model.sigma_sq(x)), 0.0)
        x = x + float(model.drift(x)) * h + math.sqrt(s2) * sqrt_h * noise[k]
        if not math.isfinite(x):
            return k + 1
        x = fold_into_unit(x)
        out[k + 1] = x
    return -1


def _n_steps(horizon: float, step: float) -> int:
    return int(math.floor(horizon / step + _GRID_EPS))


def _stationary_cdf(model: DiffusionModel):
    grid = np.linspace(0.0, 1.0, _QUAD_POINTS)
    dens = invariant_density_exact(model, grid)
    cdf = cumulative_simpson(dens, x=grid, initial=0.0)
    cdf /= cdf[-1]
    return grid, np.maximum.accumulate(cdf)


def _initial_state(model: DiffusionModel, x0, step: float, rng: np.random.Generator) -> float:
    if isinstance(x0, str):
        if x0 == "stationary":
            grid, cdf = _stationary_cdf(model)
            return float(np.interp(rng.random(), cdf, grid))
        if x0 == "burn-in":
            burn = simulate_path(model, 10.0, step, rng, x0=0.5)
            return float(burn.states[-1])
        raise ValueError(f"unknown initial condition {x0!r}")
    x0 = float(x0)
    if not 0.0 <= x0 <= 1.0:
        raise ValueError("initial state must lie in [0, 1]")
    return x0


def simulate_path(model: DiffusionModel, horizon: float, step: float, seed: SeedLike = None,
                  x0: Union[float, str] = "stationary") -> PathGrid:
    """Euler-Maruyama path of the reflected diffusion.

    Parameters
    ----------
    model : DiffusionModel
    horizon : float
        Time span to cover; the grid has ``floor(horizon / step) + 1`` points.
    step : float
        Euler step ``h``.
    seed : int, SeedSequence or Generator
        Source of the Brownian increments (and of a random start).
    x0 : float or {"stationary", "burn-in"}
        Initial state.  ``"stationary"`` draws from the invariant density by
        inverse CDF; ``"burn-in"`` starts at 0.5 and discards 10 time units.

    Returns
    -------
    PathGrid
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    rng = np.random.default_rng(seed)
    start = _initial_state(model, x0, step, rng)
    n = _n_steps(horizon, step)
    noise = rng.standard_normal(n)
    out = np.empty(n + 1)
    if model.poly is not None:
        s_coef, b_coef = (np.ascontiguousarray(c, dtype=float) for c in model.poly)
        bad = _euler_poly(start, float(step), noise, s_coef, b_coef, out)
    else:
        bad = _euler_generic(model, start, float(step), noise, out)
    if bad >= 0:
        raise SimulationError(int(bad))
    return PathGrid(step=float(step), states=out, horizon=n * step)


def _gamma_ratio_beta(rng: np.random.Generator, a: float, b: float, n: int) -> np.ndarray:
    g1 = rng.gamma(a, size=n)
    g2 = rng.gamma(b, size=n)
    return g1 / (g1 + g2)


def draw_gaps(scheme: SamplingScheme, n: int, seed: SeedLike = None) -> np.ndarray:
    """I.i.d. strictly positive waiting times from ``scheme``."""
    if n < 0:
        raise ValueError("number of gaps must be non-negative")
    rng = np.random.default_rng(seed)
    delta = scheme.delta

    def draw(k):
        if scheme.kind == "deterministic":
            return np.full(k, delta)
        if scheme.kind == "uniform":
            return rng.uniform(0.0, 2.0 * delta, size=k)
        if scheme.kind == "exponential":
            return rng.exponential(delta, size=k)
        return 2.0 * delta * _gamma_ratio_beta(rng, *scheme.beta_shape, k)

    gaps = draw(n)
    # zero (or nan from 0/0 in the gamma ratio) has probability ~0 but is not allowed
    bad = ~(gaps > 0)
    while np.any(bad):
        gaps[bad] = draw(int(bad.sum()))
        bad = ~(gaps > 0)
    return gaps


def observe_at_gaps(path: PathGrid, gaps: np.ndarray) -> ObservationSet:
    """Read ``path`` at ``tau_n = gaps[0] + ... + gaps[n-1]`` (floor to the grid)."""
    gaps = np.asarray(gaps, dtype=float)
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    idx = np.floor(times / path.step + _GRID_EPS).astype(np.int64)
    if idx[-1] >= len(path):
        raise HorizonError(required=float(times[-1]), available=path.horizon)
    return ObservationSet(times=times, states=path.states[idx], gaps=gaps)


def sample_observations(path: PathGrid, scheme: SamplingScheme, N: int, seed: SeedLike = None) -> ObservationSet:
    """Observe ``path`` at ``N`` random times drawn from ``scheme``.

    The gap stream is seeded separately from the path noise so the sampling
    times are independent of the diffusion.
    """
    return observe_at_gaps(path, draw_gaps(scheme, N, seed))


def invariant_density_exact(model: DiffusionModel, grid) -> np.ndarray:
    """Stationary density ``C0 sigma^-2(x) exp(int_0^x 2 b / sigma^2)`` on ``grid``.

    The exponent and the normalising constant are computed by composite
    Simpson on a fine uniform grid and interpolated to the requested points.
    """
    grid = np.asarray(grid, dtype=float)
    fine = np.linspace(0.0, 1.0, _QUAD_POINTS)
    s_fine = np.broadcast_to(model.sigma_sq(fine), fine.shape).astype(float)
    if np.any(s_fine <= 0):
        raise ValueError("sigma_sq must be strictly positive on [0, 1]")
    b_fine = np.broadcast_to(model.drift(fine), fine.shape).astype(float)
    exponent = cumulative_simpson(2.0 * b_fine / s_fine, x=fine, initial=0.0)
    shift = exponent.max()
    unnorm = np.exp(exponent - shift) / s_fine
    total = simpson(unnorm, x=fine)
    s_grid = np.broadcast_to(model.sigma_sq(grid), grid.shape).astype(float)
    return np.exp(np.interp(grid, fine, exponent) - shift) / s_grid / total
