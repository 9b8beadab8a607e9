"""Euler-Maruyama simulation with stopped-process statistics.

Paths evolve by x_{k+1} = x_k + f(x_k) dt + sum_a sigma_a(x_k) sqrt(dt) xi,
with each path frozen at the detected first hit of the origin so the
statistics are those of x(t ^ tau0).  Detection combines the norm band
|x_k| <= hit_eps with, for scalar systems, a sign change between
consecutive samples: a sign flip certifies the (linearly interpolated)
continuous path hit zero inside the step, which the tiny band alone
misses at practical step sizes.  Crossing-stopped paths freeze at 0.

Reproducibility contract: path i draws its noise from the counter-based
Philox stream keyed (seed, i // CHUNK) at lane i % CHUNK, with a fixed
chunk width, so results are bit-identical for any worker count and any
scheduling order.  Per-path summaries land in arrays indexed by path and
all reductions run in index order.

Explosions (non-finite state) freeze the path with an infinite magnitude,
so they count as exceedances of every threshold; expression domain errors
freeze the path the same way but are counted separately as failures.
Instability never looks stable.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import expr as ex
from .candidates import Candidate, PowerSum, Quadratic, WeightedAbsSum
from .sde_model import SdeSystem

CHUNK = 16384
NOISE_BLOCK = 512
WILSON_Z = 1.959963984540054  # two-sided 95%


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z):
    """Score interval; well-behaved at zero and full counts."""
    if trials <= 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials))
    half /= denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return (lo, hi)


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    n_paths: int
    seed: int
    hit_eps: float = 1e-4
    thresholds: tuple = (0.25, 0.5, 1.0, 2.0, 4.0)
    unstopped: bool = False
    n_time_bins: int = 50
    envelope_eps: tuple = (0.5, 0.1, 0.05, 0.01)
    terminal_quantiles: tuple = (0.5, 0.9, 0.95, 0.99)
    retain_paths: int = 0

    def __post_init__(self):
        if not (self.dt > 0.0 and self.horizon > 0.0 and self.dt <= self.horizon):
            raise ValueError("need 0 < dt <= horizon")
        if self.n_paths < 1:
            raise ValueError("need at least one path")
        if self.hit_eps <= 0.0:
            raise ValueError("hit_eps must be positive")
        if self.retain_paths > 100:
            raise ValueError("at most 100 full paths may be retained")

    def to_jsonable(self):
        return {
            "dt": self.dt, "horizon": self.horizon, "n_paths": self.n_paths,
            "seed": self.seed, "hit_eps": self.hit_eps,
            "thresholds": list(self.thresholds), "unstopped": self.unstopped,
            "n_time_bins": self.n_time_bins,
            "envelope_eps": list(self.envelope_eps),
            "terminal_quantiles": list(self.terminal_quantiles),
            "retain_paths": self.retain_paths,
        }


@dataclass
class PathStats:
    system: str
    x0: list
    config: dict
    n_paths: int
    n_hit: int
    n_failed: int
    n_exploded: int
    thresholds: list
    exceed_count: list
    exceed_freq: list
    exceed_wilson_low: list
    exceed_wilson_high: list
    time_grid: list
    tau0_cdf: list
    terminal_quantile_levels: list
    terminal_quantiles: list
    terminal_mean_square: float
    envelope_levels: list  # confidence levels 1 - eps
    envelope_curves: list  # one magnitude curve per level, over time_grid
    retained: np.ndarray | None = None  # (steps+1, retained, n), not serialized

    def to_jsonable(self):
        return {
            "system": self.system,
            "x0": list(self.x0),
            "config": dict(self.config),
            "n_paths": self.n_paths,
            "n_hit": self.n_hit,
            "n_failed": self.n_failed,
            "n_exploded": self.n_exploded,
            "thresholds": list(self.thresholds),
            "exceed_count": list(self.exceed_count),
            "exceed_freq": list(self.exceed_freq),
            "exceed_wilson_low": list(self.exceed_wilson_low),
            "exceed_wilson_high": list(self.exceed_wilson_high),
            "time_grid": list(self.time_grid),
            "tau0_cdf": list(self.tau0_cdf),
            "terminal_quantile_levels": list(self.terminal_quantile_levels),
            "terminal_quantiles": list(self.terminal_quantiles),
            "terminal_mean_square": self.terminal_mean_square,
            "envelope_levels": list(self.envelope_levels),
            "envelope_curves": [list(c) for c in self.envelope_curves],
        }

    def envelope_csv(self):
        lines = ["t," + ",".join(f"q{lvl:.6g}" for lvl in self.envelope_levels)]
        for i, t in enumerate(self.time_grid):
            row = [format(t, ".17g")]
            row += [format(c[i], ".17g") for c in self.envelope_curves]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _philox_stream(seed: int, chunk_index: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(chunk_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _compile_system(sys: SdeSystem):
    drift = [ex.compile_array(e, sys.n) for e in sys.drift]
    diffusion = [[ex.compile_array(e, sys.n) for e in col] for col in sys.diffusion]
    return drift, diffusion


def _simulate_chunk(sys, compiled, x0, cfg, chunk_index, lo, hi, out, bin_steps):
    """Evolve paths [lo, hi); write per-path summaries into ``out`` slices."""
    drift_fns, diff_fns = compiled
    n, d = sys.n, sys.d
    m = hi - lo
    n_steps = int(round(cfg.horizon / cfg.dt))
    dt, sdt = cfg.dt, math.sqrt(cfg.dt)
    stopping = not cfg.unstopped
    crossing = stopping and n == 1

    gen = _philox_stream(cfg.seed, chunk_index)
    x = np.tile(np.asarray(x0, dtype=float).reshape(n, 1), (1, m))

    norm0 = float(np.linalg.norm(np.asarray(x0, dtype=float)))
    sup = np.full(m, norm0)
    tau = np.full(m, np.inf)
    failed = np.zeros(m, dtype=bool)
    exploded = np.zeros(m, dtype=bool)
    frozen_norm = np.full(m, norm0)

    if stopping and norm0 <= cfg.hit_eps:
        tau[:] = 0.0
        alive = np.zeros(0, dtype=np.int64)
    else:
        alive = np.arange(m, dtype=np.int64)

    retain = out["retained"] is not None and chunk_index == 0
    if retain:
        out["retained"][0] = x[:, : out["retained"].shape[1]].T

    bin_cursor = 0
    if bin_steps[0] == 0:
        out["envelope"][0, lo:hi] = frozen_norm
        bin_cursor = 1

    step = 0
    blocks = range(0, n_steps, NOISE_BLOCK)
    with np.errstate(all="ignore"):
        for block_start in blocks:
            block = min(NOISE_BLOCK, n_steps - block_start)
            noise = gen.standard_normal((block, d, m))
            for kk in range(block):
                step += 1
                if alive.size:
                    xa = x[:, alive]
                    fa = np.empty_like(xa)
                    for i in range(n):
                        fa[i] = drift_fns[i](xa)
                    xn = xa + dt * fa
                    for a in range(d):
                        xi = noise[kk, a, alive]
                        for i in range(n):
                            xn[i] += sdt * diff_fns[a][i](xa) * xi
                    if crossing:
                        flip = xa[0] * xn[0] < 0.0
                        xn[0, flip] = 0.0
                    bad = ~np.all(np.isfinite(xn), axis=0)
                    if np.any(bad):
                        nan_bad = np.any(np.isnan(xn), axis=0) & bad
                        bi = alive[bad]
                        failed[bi[nan_bad[bad]]] = True
                        exploded[bi[~nan_bad[bad]]] = True
                        sup[bi] = np.inf
                        frozen_norm[bi] = np.inf
                        xn[:, bad] = np.inf
                    norms = np.sqrt(np.sum(xn * xn, axis=0))
                    good = ~bad
                    gi = alive[good]
                    sup[gi] = np.maximum(sup[gi], norms[good])
                    x[:, alive] = xn
                    frozen_norm[gi] = norms[good]
                    if stopping:
                        hit = good & (norms <= cfg.hit_eps)
                        if crossing:
                            hit |= good & flip
                        tau[alive[hit]] = step * dt
                        keep = ~(bad | hit)
                    else:
                        keep = good
                    alive = alive[keep]
                if retain:
                    out["retained"][step] = x[:, : out["retained"].shape[1]].T
                if bin_cursor < len(bin_steps) and bin_steps[bin_cursor] == step:
                    out["envelope"][bin_cursor, lo:hi] = frozen_norm
                    bin_cursor += 1
            if alive.size == 0 and not retain:
                break  # remaining snapshot rows are filled from frozen values

    # frozen paths keep their value for any remaining snapshot rows
    while bin_cursor < len(bin_steps):
        out["envelope"][bin_cursor, lo:hi] = frozen_norm
        bin_cursor += 1

    out["sup"][lo:hi] = sup
    out["tau"][lo:hi] = tau
    out["terminal"][lo:hi] = frozen_norm
    out["failed"][lo:hi] = failed
    out["exploded"][lo:hi] = exploded


def simulate(sys: SdeSystem, x0, cfg: SimConfig, threads: int = 1) -> PathStats:
    """Run the configured path ensemble and reduce to PathStats."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (sys.n,):
        raise ValueError(f"x0 must have dimension {sys.n}")
    compiled = _compile_system(sys)
    n_steps = int(round(cfg.horizon / cfg.dt))
    bin_steps = np.unique(
        np.round(np.linspace(0, n_steps, cfg.n_time_bins + 1)).astype(int))

    m = cfg.n_paths
    out = {
        "sup": np.empty(m),
        "tau": np.empty(m),
        "terminal": np.empty(m),
        "failed": np.empty(m, dtype=bool),
        "exploded": np.empty(m, dtype=bool),
        "envelope": np.empty((len(bin_steps), m)),
        "retained": (
            np.empty((n_steps + 1, min(cfg.retain_paths, m), sys.n))
            if cfg.retain_paths > 0 else None
        ),
    }

    jobs = []
    for c, lo in enumerate(range(0, m, CHUNK)):
        hi = min(lo + CHUNK, m)
        jobs.append((c, lo, hi))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_simulate_chunk, sys, compiled, x0, cfg, c, lo, hi,
                            out, bin_steps)
                for c, lo, hi in jobs
            ]
            for f in futures:
                f.result()
    else:
        for c, lo, hi in jobs:
            _simulate_chunk(sys, compiled, x0, cfg, c, lo, hi, out, bin_steps)

    sup, tau = out["sup"], out["tau"]
    counts = [int(np.sum(sup > eta)) for eta in cfg.thresholds]
    freqs = [k / m for k in counts]
    wilson = [wilson_interval(k, m) for k in counts]
    time_grid = bin_steps * cfg.dt
    tau_cdf = [float(np.mean(tau <= t)) for t in time_grid]
    with np.errstate(invalid="ignore"):
        terminal_q = [
            float(np.quantile(out["terminal"], q)) for q in cfg.terminal_quantiles
        ]
        finite_terms = out["terminal"][np.isfinite(out["terminal"])]
        terminal_ms = float(np.mean(finite_terms**2)) if finite_terms.size \
            else float("inf")
        levels = [1.0 - e for e in cfg.envelope_eps]
        curves = [
            np.quantile(out["envelope"], lvl, axis=1).tolist() for lvl in levels
        ]
    return PathStats(
        system=sys.name,
        x0=x0.tolist(),
        config=cfg.to_jsonable(),
        n_paths=m,
        n_hit=int(np.sum(np.isfinite(tau))),
        n_failed=int(np.sum(out["failed"])),
        n_exploded=int(np.sum(out["exploded"])),
        thresholds=list(cfg.thresholds),
        exceed_count=counts,
        exceed_freq=freqs,
        exceed_wilson_low=[w[0] for w in wilson],
        exceed_wilson_high=[w[1] for w in wilson],
        time_grid=time_grid.tolist(),
        tau0_cdf=tau_cdf,
        terminal_quantile_levels=list(cfg.terminal_quantiles),
        terminal_quantiles=terminal_q,
        terminal_mean_square=terminal_ms,
        envelope_levels=levels,
        envelope_curves=curves,
        retained=out["retained"],
    )


# ---------------------------------------------------------------------------
# candidate infimum on a sphere, for the tail bound


def candidate_inf_on_sphere(c: Candidate, eta: float, samples: int = 512) -> float:
    """inf of V over |x| = eta; closed form per family, sampled fallback."""
    if isinstance(c, WeightedAbsSum):
        return float(np.min(c.weights) * eta)
    if isinstance(c, Quadratic):
        return float(np.min(np.linalg.eigvalsh(c.P)) * eta * eta)
    if isinstance(c, PowerSum):
        axis = float(np.min(eta ** c.exponents / c.exponents))
        if c.n == 1:
            return axis
        return min(axis, _sphere_sample_min(c, eta, samples))
    if c.n == 1:
        return float(min(c.value([eta]), c.value([-eta])))
    return _sphere_sample_min(c, eta, samples)


def _sphere_sample_min(c, eta, samples):
    rng = np.random.Generator(np.random.Philox(key=20241))
    dirs = rng.standard_normal((samples, c.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    axes = np.vstack([np.eye(c.n), -np.eye(c.n)])
    special = [axes]
    if c.n <= 10:
        diag = np.ones(c.n) / np.sqrt(c.n)
        special.append(np.vstack([diag, -diag]))
    pts = eta * np.vstack([dirs] + special)
    return float(np.min(c.value_batch(pts)))


@dataclass
class ChebyshevReport:
    bound: float  # V(x0) / inf_{|x|=eta} V
    eta: float
    v_x0: float
    v_eta: float
    exceed_freq: float
    exceed_wilson_high: float
    slack: float
    passed: bool
    stats: PathStats

    def to_jsonable(self):
        return {
            "bound": self.bound,
            "eta": self.eta,
            "v_x0": self.v_x0,
            "v_eta": self.v_eta,
            "exceed_freq": self.exceed_freq,
            "exceed_wilson_high": self.exceed_wilson_high,
            "slack": self.slack,
            "passed": self.passed,
        }


def check_chebyshev_bound(sys: SdeSystem, c: Candidate, x0, eta: float,
                          cfg: SimConfig, threads: int = 1,
                          slack: float = 0.01) -> ChebyshevReport:
    """Stopped-process tail bound: P[sup |x| > eta] <= V(x0) / V_eta."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    v_x0 = c.value(x0)
    v_eta = candidate_inf_on_sphere(c, eta)
    bound = v_x0 / v_eta
    run_cfg = replace(cfg, thresholds=tuple(sorted(set(cfg.thresholds) | {eta})))
    stats = simulate(sys, x0, run_cfg, threads=threads)
    idx = stats.thresholds.index(eta)
    p_hat = stats.exceed_freq[idx]
    hi = stats.exceed_wilson_high[idx]
    return ChebyshevReport(
        bound=bound, eta=eta, v_x0=v_x0, v_eta=v_eta,
        exceed_freq=p_hat, exceed_wilson_high=hi, slack=slack,
        passed=bool(hi <= bound + slack), stats=stats,
    )


@dataclass
class StabilityProfile:
    x0_list: list
    eta_list: list
    exceedance: np.ndarray  # rows follow x0_list, columns follow eta_list
    terminal_quantile_levels: list
    terminal_quantiles: np.ndarray  # rows follow x0_list
    notes: list = field(default_factory=list)

    def monotone_trend(self):
        """Per-threshold fraction of adjacent start pairs with shrinking
        exceedance as |x0| decreases -- trend evidence, not a proof."""
        order = np.argsort([-float(np.linalg.norm(v)) for v in self.x0_list])
        cols = self.exceedance[order]
        trends = []
        for j in range(cols.shape[1]):
            diffs = np.diff(cols[:, j])
            trends.append(float(np.mean(diffs <= 0.0)) if diffs.size else 1.0)
        return trends

    def to_jsonable(self):
        return {
            "x0": [list(v) for v in self.x0_list],
            "eta": list(self.eta_list),
            "exceedance": self.exceedance.tolist(),
            "monotone_trend": self.monotone_trend(),
            "terminal_quantile_levels": list(self.terminal_quantile_levels),
            "terminal_quantiles": self.terminal_quantiles.tolist(),
            "notes": list(self.notes),
        }

    def exceedance_csv(self):
        header = "x0_norm," + ",".join(f"eta{e:.6g}" for e in self.eta_list)
        lines = [header]
        for x0, row in zip(self.x0_list, self.exceedance):
            cells = [format(float(np.linalg.norm(x0)), ".17g")]
            cells += [format(v, ".17g") for v in row]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def estimate_stability_profile(sys: SdeSystem, x0_list, eta_list,
                               cfg: SimConfig, threads: int = 1
                               ) -> StabilityProfile:
    """Exceedance matrix over (x0, eta) with common random numbers.

    Every run reuses the same seed, so columns inherit the pathwise
    coupling; shrinking trends toward 0 are evidence for noisy stability,
    terminal-magnitude quantiles near 0 at large horizons for its
    asymptotic refinement.  Neither is a proof and the horizon is finite;
    the report states both.
    """
    x0_arrays = [np.atleast_1d(np.asarray(v, dtype=float)) for v in x0_list]
    run_cfg = replace(cfg, thresholds=tuple(eta_list))
    rows = []
    terms = []
    for x0 in x0_arrays:
        stats = simulate(sys, x0, run_cfg, threads=threads)
        rows.append(stats.exceed_freq)
        terms.append(stats.terminal_quantiles)
    exceedance = np.array(rows)
    notes = [
        f"horizon T={cfg.horizon}: finite-horizon estimates undershoot "
        "the all-time supremum",
        f"hit_eps={cfg.hit_eps}",
    ]
    return StabilityProfile(
        x0_list=[v.tolist() for v in x0_arrays],
        eta_list=list(eta_list),
        exceedance=exceedance,
        terminal_quantile_levels=list(cfg.terminal_quantiles),
        terminal_quantiles=np.array(terms),
        notes=notes,
    )
