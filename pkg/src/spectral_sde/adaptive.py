"""Lepski-type choice of the projection dimension for the volatility estimator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson

from .estimators import CurveEstimate, EstimatorConfig, estimate_levels, observation_moments
from .sde_sim import ObservationSet

COMPLEXITY = ("level", "dim-cubed")

__all__ = ["LepskiConfig", "LepskiResult", "stochastic_threshold", "lepski_select", "select_from_distances"]


@dataclass(frozen=True)
class LepskiConfig:
    """Candidate dimensions and threshold constant.

    ``complexity`` sets how the threshold grows with the dimension ``m``:
    ``"level"`` uses ``2^(3J)`` with the cosine level ``J = m - 1``;
    ``"dim-cubed"`` uses ``m^3``.  ``N`` defaults to the number of gaps of
    the data passed to :func:`lepski_select`.
    """

    Lambda: float = 0.01
    dims: Tuple[int, ...] = tuple(range(2, 17))
    interval: Tuple[float, float] = (0.1, 0.9)
    N: Optional[int] = None
    complexity: str = "level"

    def __post_init__(self):
        dims = tuple(int(m) for m in self.dims)
        if not dims:
            raise ValueError("need at least one candidate dimension")
        if any(b <= a for a, b in zip(dims, dims[1:])) or dims[0] < 1:
            raise ValueError("candidate dimensions must be positive and strictly increasing")
        if self.Lambda < 0:
            raise ValueError("Lambda must be non-negative")
        if self.complexity not in COMPLEXITY:
            raise ValueError(f"complexity must be one of {COMPLEXITY}")
        object.__setattr__(self, "dims", dims)


@dataclass(frozen=True, eq=False)
class LepskiResult:
    chosen_dim: int
    curve: CurveEstimate
    dims: Tuple[int, ...]
    thresholds: np.ndarray
    pairwise_distances: np.ndarray
    fallback: bool = False
    curves: Dict[int, CurveEstimate] = field(default_factory=dict, repr=False)

    def report(self) -> str:
        lines = [f"chosen dimension: {self.chosen_dim} (J = {self.chosen_dim - 1})"
                 + ("  [fallback: no smaller dimension passed]" if self.fallback else "")]
        lines.append("dim  threshold")
        lines += [f"{m:>3}  {s:.6g}" for m, s in zip(self.dims, self.thresholds)]
        lines.append("pairwise L2 distances (rows/cols: " + " ".join(map(str, self.dims)) + ")")
        for m, row in zip(self.dims, self.pairwise_distances):
            lines.append(f"{m:>3}  " + " ".join(f"{v:.4g}" for v in row))
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        """One row per candidate: ``dim,threshold,chosen`` followed by its distances to every candidate."""
        cols = ",".join(f"d{m}" for m in self.dims)
        rows = [f"dim,threshold,chosen,{cols}"]
        for m, s, dist in zip(self.dims, self.thresholds, self.pairwise_distances):
            rows.append(f"{m},{s:.17g},{int(m == self.chosen_dim)}," + ",".join(f"{v:.17g}" for v in dist))
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")


def stochastic_threshold(cfg: LepskiConfig, m: int, N: Optional[int] = None) -> float:
    """Stochastic error scale ``Lambda * sqrt(c(m) log log N / N)`` at dimension ``m``.

    ``c(m) = 2^(3 (m - 1))`` for ``complexity="level"`` and ``m^3`` for
    ``"dim-cubed"``.
    """
    N = cfg.N if N is None else N
    if N is None or N < 3:
        raise ValueError(f"the threshold needs N >= 3 so that log log N > 0, got N={N}")
    if m < 1:
        raise ValueError("dimension must be at least 1")
    c = 2.0 ** (3 * (m - 1)) if cfg.complexity == "level" else float(m) ** 3
    return cfg.Lambda * math.sqrt(c * math.log(math.log(N)) / N)


def select_from_distances(dims: Sequence[int], distances: np.ndarray, thresholds: np.ndarray) -> Tuple[int, bool]:
    """Smallest ``dims[j]`` with ``distances[k, j] <= thresholds[k]`` for every ``k >= j``.

    Returns the chosen dimension and whether only the largest candidate qualified.
    """
    n = len(dims)
    for j in range(n):
        if all(distances[k, j] <= thresholds[k] for k in range(j, n)):
            return dims[j], (j == n - 1 and n > 1)
    return dims[-1], n > 1


def _l2(f: np.ndarray, g: np.ndarray, x: np.ndarray) -> float:
    return math.sqrt(max(simpson((f - g) ** 2, x=x), 0.0))


def lepski_select(obs: ObservationSet, cfg: LepskiConfig = LepskiConfig(),
                  est_cfg: Optional[EstimatorConfig] = None, moments=None) -> LepskiResult:
    """Adaptive volatility estimate: the smallest candidate dimension whose
    estimate stays within the threshold of every larger candidate's."""
    if est_cfg is None:
        est_cfg = EstimatorConfig(interval=cfg.interval)
    N = obs.N if cfg.N is None else cfg.N
    if cfg.dims[-1] > obs.N:
        raise ValueError(f"largest candidate dimension {cfg.dims[-1]} exceeds N={obs.N}")
    if moments is None:
        moments = observation_moments(obs, cfg.dims[-1])
    fits = estimate_levels(moments, cfg.dims, est_cfg, drift=False)
    curves = {m: fits[m][1] for m in cfg.dims}
    x = curves[cfg.dims[0]].grid
    n = len(cfg.dims)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = _l2(curves[cfg.dims[i]].values, curves[cfg.dims[j]].values, x)
    thresholds = np.array([stochastic_threshold(cfg, m, N) for m in cfg.dims])
    chosen, fallback = select_from_distances(cfg.dims, dist, thresholds)
    return LepskiResult(chosen_dim=chosen, curve=curves[chosen], dims=cfg.dims, thresholds=thresholds,
                        pairwise_distances=dist, fallback=fallback, curves=curves)
