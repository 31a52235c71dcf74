"""
Monte Carlo study of the volatility estimator.

For each sampling scheme and sample size the harness simulates independent
paths, observes them at random times and records the squared L2([a, b])
error of the volatility estimate at every swept dimension and for the
adaptive choice.  RMISE is the square root of the mean squared error; the
oracle dimension is the swept dimension with the smallest RMISE.

Replication ``r`` of cell ``(i, j)`` is seeded from ``(seed, i, j, r)`` so
that results do not depend on execution order or worker count.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml
from scipy.integrate import simpson

from .adaptive import LepskiConfig, lepski_select
from .estimators import CurveEstimate, EstimatorConfig, estimate_levels, observation_moments
from .sde_sim import (
    DiffusionModel,
    SamplingScheme,
    draw_gaps,
    observe_at_gaps,
    benchmark_model,
    reflected_brownian_motion,
    simulate_path,
)

__all__ = [
    "ExperimentConfig",
    "CellResult",
    "RmiseReport",
    "ConfigError",
    "l2_distance",
    "run_monte_carlo",
    "misspecified_baseline",
    "run_benchmark",
    "load_config",
    "preset",
    "PRESETS",
    "WORKERS_ENV",
]

log = logging.getLogger(__name__)

WORKERS_ENV = "SPECTRAL_SDE_WORKERS"
SPECTRAL = "spectral"
MISSPECIFIED = "misspecified"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def l2_distance(f: CurveEstimate, g: Union[CurveEstimate, Callable], interval: Tuple[float, float]) -> float:
    """``||f - g||_L2([a, b])`` by composite Simpson on the grid of ``f``.

    ``g`` may be a vectorised function or another curve; a curve on a
    different grid is linearly interpolated onto the finer of the two grids.
    """
    a, b = interval
    x, fv = np.asarray(f.grid, dtype=float), np.asarray(f.values, dtype=float)
    if isinstance(g, CurveEstimate):
        gx, gv = np.asarray(g.grid, dtype=float), np.asarray(g.values, dtype=float)
        same = gx.shape == x.shape and np.allclose(gx, x, rtol=0, atol=1e-12)
        if not same:
            if gx.size > x.size:
                x, fv, gx, gv = gx, gv, x, fv
            if gx[0] > a + 1e-12 or gx[-1] < b - 1e-12:
                raise ValueError("curves do not both cover the integration interval")
            gv = np.interp(x, gx, gv)
    else:
        gv = np.broadcast_to(np.asarray(g(x), dtype=float), x.shape)
    keep = (x >= a - 1e-12) & (x <= b + 1e-12)
    xs = x[keep]
    if xs.size < 2 or abs(xs[0] - a) > 1e-9 or abs(xs[-1] - b) > 1e-9:
        raise ValueError(f"grid does not cover [{a}, {b}] with nodes at both ends")
    diff = fv[keep] - gv[keep]
    return math.sqrt(max(simpson(diff * diff, x=xs), 0.0))


@dataclass(frozen=True)
class ExperimentConfig:
    model: DiffusionModel = field(default_factory=benchmark_model)
    model_name: str = "paper-sec6"
    schemes: Tuple[SamplingScheme, ...] = tuple(SamplingScheme(k, 0.25) for k in SamplingScheme.KINDS)
    sample_sizes: Tuple[int, ...] = (4000, 12000, 20000)
    mc_iterations: int = 100
    oracle_dims: Tuple[int, ...] = tuple(range(2, 9))
    lepski: LepskiConfig = LepskiConfig()
    estimator: EstimatorConfig = EstimatorConfig()
    seed: int = 0
    step: float = 0.001
    initial: Union[str, float] = "stationary"
    adaptive: bool = True

    def __post_init__(self):
        if self.mc_iterations < 1:
            raise ConfigError("mc_iterations must be at least 1")
        if not self.schemes or not self.sample_sizes or not self.oracle_dims:
            raise ConfigError("schemes, sample_sizes and oracle_dims must be non-empty")
        if any(b <= a for a, b in zip(self.oracle_dims, self.oracle_dims[1:])) or self.oracle_dims[0] < 1:
            raise ConfigError("oracle_dims must be positive and strictly increasing")
        if min(self.sample_sizes) < self.max_dim:
            raise ConfigError(f"every sample size must be at least the largest dimension {self.max_dim}")
        if tuple(self.lepski.interval) != tuple(self.estimator.interval):
            raise ConfigError("lepski and estimator intervals differ")

    @property
    def interval(self) -> Tuple[float, float]:
        return self.estimator.interval

    @property
    def max_dim(self) -> int:
        dims = list(self.oracle_dims)
        if self.adaptive:
            dims += list(self.lepski.dims)
        return max(dims)


PRESETS = ("paper-sec6", "reflected-bm")


def preset(name: str, **overrides) -> ExperimentConfig:
    """Named experiment.  ``paper-sec6`` is the mean-reverting benchmark
    (``sigma^2 = 0.4 - (x - 0.5)^2``, ``b = 0.2 - 0.4 x``, mean gap 0.25,
    four sampling laws); ``reflected-bm`` is reflected Brownian motion."""
    if name == "paper-sec6":
        cfg = ExperimentConfig()
    elif name == "reflected-bm":
        cfg = ExperimentConfig(model=reflected_brownian_motion(), model_name="reflected-bm",
                               schemes=(SamplingScheme("deterministic", 0.25),), sample_sizes=(20000,),
                               oracle_dims=(5,), adaptive=False)
    else:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return replace(cfg, **overrides) if overrides else cfg


def _dims(value, name) -> Tuple[int, ...]:
    if isinstance(value, str):
        lo, sep, hi = value.partition("..")
        if not sep:
            raise ConfigError(f"{name}: expected a list or a range 'lo..hi', got {value!r}")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(v) for v in value)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a parsed config tree (see ``configs/paper-sec6.yaml``)."""
    data = dict(data or {})
    known = {"preset", "model", "schemes", "sample_sizes", "mc_iterations", "oracle_dims", "lepski",
             "interval", "estimator", "seed", "step", "initial", "adaptive"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        cfg = preset(data.get("preset", "paper-sec6"))
        over = {}
        model = data.get("model")
        if isinstance(model, str):
            base = preset(model)
            over.update(model=base.model, model_name=base.model_name)
        elif isinstance(model, dict):
            if "preset" in model:
                base = preset(model["preset"])
                over.update(model=base.model, model_name=base.model_name)
            else:
                over["model"] = DiffusionModel.polynomial(model["sigma_sq"], model["drift"],
                                                          d=model.get("d"), D=model.get("D"))
                over["model_name"] = model.get("name", "polynomial")
        if "schemes" in data:
            over["schemes"] = tuple(
                SamplingScheme(s, 0.25) if isinstance(s, str) else SamplingScheme(s["kind"], float(s.get("delta", 0.25)))
                for s in data["schemes"])
        if "sample_sizes" in data:
            over["sample_sizes"] = tuple(int(n) for n in data["sample_sizes"])
        if "mc_iterations" in data:
            over["mc_iterations"] = int(data["mc_iterations"])
        if "oracle_dims" in data:
            od = data["oracle_dims"]
            over["oracle_dims"] = tuple(range(2, 9)) if od == "sweep" else _dims(od, "oracle_dims")
        interval = tuple(float(v) for v in data.get("interval", cfg.interval))
        est = dict(data.get("estimator") or {})
        over["estimator"] = EstimatorConfig(D=float(est.get("D", cfg.estimator.D)), interval=interval,
                                            derivative_floor=float(est.get("derivative_floor", cfg.estimator.derivative_floor)),
                                            grid_points=int(est.get("grid_points", cfg.estimator.grid_points)))
        lep = dict(data.get("lepski") or {})
        over["lepski"] = LepskiConfig(Lambda=float(lep.get("Lambda", cfg.lepski.Lambda)),
                                      dims=_dims(lep.get("dims", cfg.lepski.dims), "lepski.dims"),
                                      interval=interval,
                                      complexity=str(lep.get("complexity", cfg.lepski.complexity)))
        for key, conv in (("seed", int), ("step", float), ("adaptive", bool)):
            if key in data:
                over[key] = conv(data[key])
        if "initial" in data:
            init = data["initial"]
            over["initial"] = init if isinstance(init, str) else float(init)
        return replace(cfg, **over)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


@dataclass
class CellResult:
    """Per-replication squared errors of one (scheme, N) cell."""

    scheme: str
    N: int
    dims: Tuple[int, ...]
    sq_err: np.ndarray                # (reps, dims), nan for failed replications
    degenerate: np.ndarray            # (reps, dims) count of clipped grid points
    adaptive_sq_err: Optional[np.ndarray] = None
    chosen_dims: Optional[np.ndarray] = None
    failures: int = 0

    def _ok(self) -> np.ndarray:
        return np.all(np.isfinite(self.sq_err), axis=1)

    @staticmethod
    def _rmise(errs: np.ndarray) -> Tuple[float, float]:
        errs = errs[np.isfinite(errs)]
        if errs.size == 0:
            return math.nan, math.nan
        mse = float(errs.mean())
        rmise = math.sqrt(mse)
        se_mse = float(errs.std(ddof=1) / math.sqrt(errs.size)) if errs.size > 1 else math.nan
        # delta method for the square root
        se = se_mse / (2.0 * rmise) if rmise > 0 else 0.0
        return rmise, se

    def rmise(self, dim: int) -> Tuple[float, float]:
        return self._rmise(self.sq_err[:, self.dims.index(dim)])

    def oracle(self) -> Tuple[int, float, float]:
        """Swept dimension with the smallest RMISE, with its RMISE and standard error."""
        vals = [self.rmise(m) for m in self.dims]
        if all(math.isnan(v[0]) for v in vals):
            return self.dims[0], math.nan, math.nan
        k = int(np.nanargmin([v[0] for v in vals]))
        return self.dims[k], vals[k][0], vals[k][1]

    def adaptive(self) -> Tuple[float, float]:
        if self.adaptive_sq_err is None:
            return math.nan, math.nan
        return self._rmise(self.adaptive_sq_err)

    def degenerate_replications(self, dim: int) -> int:
        return int(np.sum(self.degenerate[:, self.dims.index(dim)] > 0))


@dataclass
class RmiseReport:
    label: str
    cells: List[CellResult]
    model_name: str = ""

    def cell(self, scheme: str, N: int) -> CellResult:
        for c in self.cells:
            if c.scheme == scheme and c.N == N:
                return c
        raise KeyError((scheme, N))

    def rows(self) -> List[dict]:
        rows = []
        for c in self.cells:
            m, r, se = c.oracle()
            rows.append(dict(scheme=c.scheme, N=c.N, estimator="oracle", dim=m, rmise=r, mc_se=se, failures=c.failures))
            if c.adaptive_sq_err is not None:
                r, se = c.adaptive()
                chosen = c.chosen_dims[c.chosen_dims > 0]
                dim = int(np.median(chosen)) if chosen.size else 0
                rows.append(dict(scheme=c.scheme, N=c.N, estimator="adaptive", dim=dim, rmise=r, mc_se=se,
                                 failures=c.failures))
            for m in c.dims:
                r, se = c.rmise(m)
                rows.append(dict(scheme=c.scheme, N=c.N, estimator="fixed", dim=m, rmise=r, mc_se=se,
                                 failures=c.failures))
        if self.label != SPECTRAL:
            for row in rows:
                row["estimator"] = f"{self.label}-{row['estimator']}"
        return rows

    def to_csv(self, path, append: bool = False) -> None:
        lines = [] if append else ["scheme,N,estimator,dim,rmise,mc_se,failures"]
        for r in self.rows():
            lines.append(f"{r['scheme']},{r['N']},{r['estimator']},{r['dim']},{r['rmise']:.10g},"
                         f"{r['mc_se']:.10g},{r['failures']}")
        with open(path, "a" if append else "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def summary(self) -> str:
        out = [f"RMISE of the volatility on the target interval ({self.label} estimator, model {self.model_name})"]
        out.append(f"{'scheme':<14}{'N':>7}  {'oracle':>9} {'dim':>4} {'se':>8}  {'adaptive':>9} {'se':>8}  degenerate")
        for c in self.cells:
            m, r, se = c.oracle()
            ar, ase = c.adaptive()
            out.append(f"{c.scheme:<14}{c.N:>7}  {r:>9.4f} {m:>4} {se:>8.4f}  {ar:>9.4f} {ase:>8.4f}  "
                       f"{c.degenerate_replications(m)}/{c.sq_err.shape[0]}"
                       + (f"  failures={c.failures}" if c.failures else ""))
        return "\n".join(out) + "\n"


def _replication_seeds(base: int, i: int, j: int, r: int):
    path_ss, gap_ss = np.random.SeedSequence([base, i, j, r]).spawn(2)
    return path_ss, gap_ss


def _replicate(cfg: ExperimentConfig, i: int, j: int, r: int, labels: Tuple[str, ...], want_curve: bool):
    """One replication; returns ``{label: (sq_err, degenerate, adaptive_sq_err, chosen)}`` and a curve."""
    scheme, N = cfg.schemes[i], cfg.sample_sizes[j]
    path_ss, gap_ss = _replication_seeds(cfg.seed, i, j, r)
    gaps = draw_gaps(scheme, N, gap_ss)
    path = simulate_path(cfg.model, float(gaps.sum()), cfg.step, path_ss, x0=cfg.initial)
    obs = observe_at_gaps(path, gaps)
    moments = observation_moments(obs, cfg.max_dim)
    truth = cfg.model.sigma_sq
    out, curve = {}, None
    for label in labels:
        est = replace(cfg.estimator, ignore_sampling_randomness=(label == MISSPECIFIED))
        fits = estimate_levels(moments, cfg.oracle_dims, est, drift=False)
        sq = np.array([l2_distance(fits[m][1], truth, cfg.interval) ** 2 for m in cfg.oracle_dims])
        deg = np.array([fits[m][1].degenerate for m in cfg.oracle_dims])
        a_err, chosen = math.nan, 0
        if cfg.adaptive:
            res = lepski_select(obs, cfg.lepski, est, moments=moments)
            a_err = l2_distance(res.curve, truth, cfg.interval) ** 2
            chosen = res.chosen_dim
            if want_curve and label == SPECTRAL:
                curve = res.curve
        elif want_curve and label == SPECTRAL:
            curve = fits[cfg.oracle_dims[-1]][1]
        out[label] = (sq, deg, a_err, chosen)
    return out, curve


def _task(args):
    cfg, i, j, r, labels, want_curve = args
    try:
        return _replicate(cfg, i, j, r, labels, want_curve), None
    except Exception as exc:  # a failed replication is counted, not fatal
        return None, f"{type(exc).__name__}: {exc}"


def _workers(workers: Optional[int]) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, workers)


def _run(cfg: ExperimentConfig, labels: Tuple[str, ...], workers: Optional[int] = None,
         emit_curves: Optional[Union[str, Path]] = None, progress: Optional[Callable[[int, int], None]] = None
         ) -> Dict[str, RmiseReport]:
    reps = cfg.mc_iterations
    n_dims = len(cfg.oracle_dims)
    tasks = [(cfg, i, j, r, labels, emit_curves is not None)
             for i in range(len(cfg.schemes)) for j in range(len(cfg.sample_sizes)) for r in range(reps)]
    store = {}
    for label in labels:
        for i in range(len(cfg.schemes)):
            for j in range(len(cfg.sample_sizes)):
                store[label, i, j] = CellResult(
                    scheme=cfg.schemes[i].kind, N=cfg.sample_sizes[j], dims=tuple(cfg.oracle_dims),
                    sq_err=np.full((reps, n_dims), np.nan), degenerate=np.zeros((reps, n_dims), dtype=int),
                    adaptive_sq_err=np.full(reps, np.nan) if cfg.adaptive else None,
                    chosen_dims=np.zeros(reps, dtype=int) if cfg.adaptive else None)
    if emit_curves is not None:
        Path(emit_curves).mkdir(parents=True, exist_ok=True)

    n_workers = _workers(workers)
    if n_workers > 1:
        pool = ProcessPoolExecutor(max_workers=n_workers)
        results = pool.map(_task, tasks, chunksize=4)
    else:
        pool = None
        results = map(_task, tasks)
    try:
        for done, (task, (result, error)) in enumerate(zip(tasks, results), start=1):
            _, i, j, r, _, _ = task
            if error is not None:
                log.warning("replication %d of %s/N=%d failed: %s", r, cfg.schemes[i].kind,
                            cfg.sample_sizes[j], error)
                for label in labels:
                    store[label, i, j].failures += 1
            else:
                per_label, curve = result
                for label, (sq, deg, a_err, chosen) in per_label.items():
                    cell = store[label, i, j]
                    cell.sq_err[r] = sq
                    cell.degenerate[r] = deg
                    if cfg.adaptive:
                        cell.adaptive_sq_err[r] = a_err
                        cell.chosen_dims[r] = chosen
                if curve is not None:
                    _write_curve(Path(emit_curves) / f"curve_{cfg.schemes[i].kind}_N{cfg.sample_sizes[j]}_rep{r:04d}.csv",
                                 curve, cfg.model.sigma_sq)
            if progress is not None:
                progress(done, len(tasks))
    finally:
        if pool is not None:
            pool.shutdown()

    return {label: RmiseReport(label=label, model_name=cfg.model_name,
                               cells=[store[label, i, j] for i in range(len(cfg.schemes))
                                      for j in range(len(cfg.sample_sizes))])
            for label in labels}


def _write_curve(path: Path, curve: CurveEstimate, truth) -> None:
    data = np.column_stack([curve.grid, truth(curve.grid), curve.values])
    np.savetxt(path, data, delimiter=",", header="x,true,estimate", comments="", fmt="%.17g")


def run_monte_carlo(cfg: ExperimentConfig, workers: Optional[int] = None, emit_curves=None, progress=None) -> RmiseReport:
    """Oracle and adaptive RMISE of the spectral volatility estimator for every cell of ``cfg``."""
    return _run(cfg, (SPECTRAL,), workers, emit_curves, progress)[SPECTRAL]


def misspecified_baseline(cfg: ExperimentConfig, workers: Optional[int] = None, progress=None) -> RmiseReport:
    """Same experiment and data, but ``v1`` is recovered as if the gaps were all equal to their mean."""
    return _run(cfg, (MISSPECIFIED,), workers, None, progress)[MISSPECIFIED]


def run_benchmark(cfg: ExperimentConfig, baseline: bool = True, workers: Optional[int] = None,
                  emit_curves=None, progress=None) -> Dict[str, RmiseReport]:
    """Spectral estimator and, optionally, the misspecified baseline on the same simulated data."""
    labels = (SPECTRAL, MISSPECIFIED) if baseline else (SPECTRAL,)
    return _run(cfg, labels, workers, emit_curves, progress)
