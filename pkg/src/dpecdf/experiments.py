"""Repeated-run experiments producing ``(series, x, mean, std)`` tables.

Every repetition draws its data and noise from seeds derived from
``(config.seed, experiment tag, rep, point)``, so results do not depend on
execution order or on the number of worker processes.  Within a repetition
the dataset is shared across the swept parameter (common random numbers).
"""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .apps.hl import hl_statistic_dp
from .apps.roc import ScoredDataset, direct_roc, dp_roc, roc_symmetric_difference, smooth_roc
from .data import gen_poisson_dataset
from .errors import ConfigError
from .grid import make_uniform_grid
from .noise import NOISELESS, TreeNoiseRegistry, derive_seed, dp_ecdf, noiseless_ecdf
from .query import inverse_ecdf
from .smoothing import mse_ratio, smooth


@dataclass
class RunConfig:
    seed: int = 0
    epsilon: float = 1.0
    epsilons: Tuple[float, ...] = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0)
    lam: float = 3.0
    lams: Tuple[float, ...] = (0.5, 1.0, 2.0, 3.0, 5.0, 10.0)
    depth: int = 10
    depths: Tuple[int, ...] = (6, 7, 8, 9, 10, 11)
    p_norms: Tuple[int, ...] = (1, 2)
    reps: int = 100
    Q: int = 10
    hl_depth: int = 8
    roc_depth: int = 6
    n_scored: int = 10_000
    n_quantiles: int = 99
    psi: Optional[float] = None
    backend: str = "plaintext"
    workers: int = 1

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in obj.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class SeriesRow:
    series: str
    x: float
    mean: float
    std: float
    reps: int


@dataclass
class ExperimentResult:
    name: str
    rows: List[SeriesRow]
    config: RunConfig
    runtime: float = 0.0
    extra: Dict[str, object] = field(default_factory=dict)

    def lookup(self, series: str, x: float) -> SeriesRow:
        for r in self.rows:
            if r.series == series and r.x == x:
                return r
        raise KeyError((series, x))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["series", "x", "mean", "std", "reps"])
        for r in self.rows:
            w.writerow([r.series, repr(float(r.x)), repr(float(r.mean)), repr(float(r.std)), r.reps])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"experiment": self.name, "rows": [asdict(r) for r in self.rows]}, indent=1, sort_keys=True)


# -- helpers --------------------------------------------------------------------


def _poisson_setup(cfg: RunConfig, lam: float, rep: int, depth: int):
    n_values = 1 << depth
    data = gen_poisson_dataset(lam, n_values, seed=derive_seed(cfg.seed, 0x44415441, rep, int(lam * 1000)))
    grid = make_uniform_grid(1.0, float(n_values), 1.0)
    return data, grid


def _dp_curve(cfg, data, grid, eps, *stream):
    reg = TreeNoiseRegistry.for_ecdf(derive_seed(cfg.seed, *stream), grid.tree_depth, eps)
    return dp_ecdf(data, grid, eps, reg)


def _summarize(name: str, samples: Dict[Tuple[str, float], List[float]]) -> List[SeriesRow]:
    rows = []
    for (series, x), vals in samples.items():
        arr = np.asarray(vals, dtype=float)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        rows.append(SeriesRow(series, float(x), float(arr.mean()), std, int(arr.size)))
    rows.sort(key=lambda r: (r.series, r.x))
    return rows


def _run_reps(cfg: RunConfig, fn: Callable, reps: int) -> List[Dict[Tuple[str, float], float]]:
    if cfg.workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(fn, [cfg] * reps, range(reps)))
    return [fn(cfg, rep) for rep in range(reps)]


def _collect(per_rep: Sequence[Dict[Tuple[str, float], float]]) -> Dict[Tuple[str, float], List[float]]:
    out: Dict[Tuple[str, float], List[float]] = {}
    for d in per_rep:
        for key, v in d.items():
            out.setdefault(key, []).append(v)
    return out


# -- experiments ------------------------------------------------------------------


def _smooth_ratio_eps_rep(cfg: RunConfig, rep: int):
    data, grid = _poisson_setup(cfg, cfg.lam, rep, cfg.depth)
    truth = noiseless_ecdf(data, grid)
    out = {}
    for k, eps in enumerate(cfg.epsilons):
        dp = _dp_curve(cfg, data, grid, eps, 0x4E4F, rep, k)
        for p in cfg.p_norms:
            out[(f"p={p}", eps)] = mse_ratio(truth, dp, smooth(dp, p=p))
    return out


def _smooth_ratio_lambda_rep(cfg: RunConfig, rep: int):
    out = {}
    for k, lam in enumerate(cfg.lams):
        data, grid = _poisson_setup(cfg, lam, rep, cfg.depth)
        truth = noiseless_ecdf(data, grid)
        dp = _dp_curve(cfg, data, grid, cfg.epsilon, 0x4C41, rep, k)
        for p in cfg.p_norms:
            out[(f"p={p}", lam)] = mse_ratio(truth, dp, smooth(dp, p=p))
    return out


def _inverse_errors(truth, curve, probs, psi, lo, hi):
    width = hi - lo
    errs = [((inverse_ecdf(curve, q, psi, lo, hi) - inverse_ecdf(truth, q, psi, lo, hi)) / width) ** 2 for q in probs]
    return float(np.mean(errs))


def _invcdf_rep(cfg: RunConfig, rep: int):
    data, grid = _poisson_setup(cfg, cfg.lam, rep, cfg.depth)
    truth = noiseless_ecdf(data, grid)
    probs = (np.arange(cfg.n_quantiles) + 1) / (cfg.n_quantiles + 1)
    psi = cfg.psi if cfg.psi is not None else 0.25
    out = {}
    for k, eps in enumerate(cfg.epsilons):
        dp = _dp_curve(cfg, data, grid, eps, 0x494E, rep, k)
        sm = smooth(dp, p=2)
        out[("forward", eps)] = float(np.mean((dp.values - truth.values) ** 2))
        out[("inverse-dp", eps)] = _inverse_errors(truth, dp, probs, psi, grid.lo, grid.hi)
        out[("inverse-smoothed", eps)] = _inverse_errors(truth, sm, probs, psi, grid.lo, grid.hi)
    return out


def synthetic_scored(n: int, seed: int, positive_rate: float = 0.3) -> ScoredDataset:
    """Two-class scores in [0, 1]; positives tend to score low."""
    rng = np.random.default_rng([int(seed), 0x53434F52])
    y = (rng.random(n) < positive_rate).astype(int)
    s = np.where(y == 1, rng.beta(2.0, 5.0, n), rng.beta(5.0, 2.0, n))
    return ScoredDataset(s, y)


def calibrated_scored(n: int, seed: int) -> ScoredDataset:
    """Predicted probabilities with labels drawn from them (a well-calibrated model)."""
    rng = np.random.default_rng([int(seed), 0x43414C49])
    p = rng.beta(2.0, 3.0, n)
    y = (rng.random(n) < p).astype(int)
    return ScoredDataset(p, y)


def _roc_rep(cfg: RunConfig, rep: int):
    data = synthetic_scored(cfg.n_scored, derive_seed(cfg.seed, 0x524F, rep))
    grid = make_uniform_grid(0.0, 1.0, 1.0 / ((1 << cfg.roc_depth) - 1))
    truth = direct_roc(data, grid)
    out = {}
    for k, eps in enumerate(cfg.epsilons):
        curve = smooth_roc(dp_roc(data, grid, eps, seed=derive_seed(cfg.seed, 0x5243, rep, k)))
        out[("smoothed", eps)] = roc_symmetric_difference(curve, truth)
    return out


def _hl_rep(cfg: RunConfig, rep: int):
    data = calibrated_scored(cfg.n_scored, derive_seed(cfg.seed, 0x484C, rep))
    exact = hl_statistic_dp(data, cfg.Q, NOISELESS, cfg.hl_depth, backend=cfg.backend).H
    out = {}
    for k, eps in enumerate(cfg.epsilons):
        res = hl_statistic_dp(data, cfg.Q, eps, cfg.hl_depth, seed=derive_seed(cfg.seed, 0x4853, rep, k), backend=cfg.backend)
        out[("relative", eps)] = ((res.H - exact) / exact) ** 2
    return out


def _runtime_rep(cfg: RunConfig, rep: int):
    out = {}
    for depth in cfg.depths:
        data, grid = _poisson_setup(cfg, cfg.lam, rep, depth)
        dp = _dp_curve(cfg, data, grid, cfg.epsilon, 0x5254, rep, depth)
        for p in cfg.p_norms:
            t0 = time.perf_counter()
            smooth(dp, p=p)
            out[(f"p={p}", float(grid.n_points))] = time.perf_counter() - t0
    return out


EXPERIMENTS: Dict[str, Callable] = {
    "smooth-ratio-eps": _smooth_ratio_eps_rep,
    "smooth-ratio-lambda": _smooth_ratio_lambda_rep,
    "invcdf-mse": _invcdf_rep,
    "roc-symdiff": _roc_rep,
    "hl-mse": _hl_rep,
    "smooth-runtime": _runtime_rep,
}


def run_experiment(name: str, cfg: RunConfig) -> ExperimentResult:
    try:
        fn = EXPERIMENTS[name]
    except KeyError:
        raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(sorted(EXPERIMENTS))}") from None
    if cfg.reps < 1:
        raise ConfigError("reps must be >= 1")
    t0 = time.perf_counter()
    rows = _summarize(name, _collect(_run_reps(cfg, fn, cfg.reps)))
    return ExperimentResult(name, rows, cfg, time.perf_counter() - t0)


def version_string() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}-{desc}" if desc else __version__


def manifest(result: ExperimentResult) -> dict:
    return {
        "experiment": result.name,
        "config": result.config.to_dict(),
        "version": version_string(),
        "runtime_seconds": result.runtime,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
