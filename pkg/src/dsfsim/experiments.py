"""Seeded experiment runners behind the command line.

Each experiment maps a configuration to a set of tables (written as CSV) and
a summary dictionary (written as JSON).  Replication ``i`` always uses stores
seeded by ``derive_seed(seed, tag, i)``, and results are assembled in
replication order, so the output does not depend on the number of workers.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .coalesce import LAPLACE_BINS, coalescence_time, laplace_conditions, tail_curve, transitions
from .dual import check_window
from .errors import ConfigError
from .explore import cone_scan, initial_state, step_details
from .forest import ancestor, trace_path
from .ppp import SlabStore, derive_seed
from .renewal import event_log_bounds, renewal_chain
from .rst import chi_r_proxy
from .scaling import (
    GammaSigma,
    ScaleParams,
    gamma_sigma_from_increments,
    eta_forest,
    max_deviation,
    renewal_increments,
    standardized_endpoint,
)
from .stats import ks_1samp, ks_2samp, linear_fit, loglog_fit, normal_cdf, symmetry_test, upper_bound, weighted_fit

EXPERIMENTS = (
    "trace",
    "renewal-stats",
    "coalescence-tail",
    "laplace-check",
    "donsker",
    "eta",
    "dual-check",
    "rst-chi",
    "gamma-sigma",
)

_TAGS = {name: i + 1 for i, name in enumerate(EXPERIMENTS)}


@dataclass
class ExperimentConfig:
    experiment: str = "trace"
    lam: float = 1.0
    kappa: int = 6
    seed: int = 0
    replications: int = 100
    out: str = "results"
    threads: int = 0
    # experiment specific
    z0: list = field(default_factory=lambda: [1.0])
    t_grid: list = field(default_factory=lambda: parse_grid("10..1000"))
    t_cap: float = 0.0
    n: int = 20
    window: float = 20.0
    r: list = field(default_factory=lambda: [25.0, 50.0, 100.0, 200.0])
    rout_factor: float = 4.0
    walkers: int = 1
    renewals: int = 20
    step_cap: int = 1_000_000
    steps: int = 100_000
    warmup: int = 20
    m0: float = 14.0
    epsilon: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    t: float = 1.0
    gamma: float = 0.0
    sigma: float = 0.0
    gs_replications: int = 100
    m: list = field(default_factory=lambda: [100.0, 400.0, 1600.0])

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ConfigError("lambda must be positive")
        if self.kappa < 6:
            raise ConfigError("kappa must be an integer >= 6")
        if self.replications < 1:
            raise ConfigError("replications must be positive")
        if self.threads < 0:
            raise ConfigError("threads must be nonnegative (0 = all cores)")
        if not self.z0 or any(z <= 0 for z in self.z0):
            raise ConfigError("z0 values must be positive")
        g = np.asarray(self.t_grid, dtype=float)
        if g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise ConfigError("t grid must be positive and increasing")
        if self.t_cap and self.t_cap < g[-1]:
            raise ConfigError("t_cap must be at least the largest grid time")
        if self.n < 1 or self.window <= 0 or self.rout_factor < 2:
            raise ConfigError("n and window must be positive and rout_factor at least 2")
        if any(v <= 0 for v in self.r) or any(v <= 0 for v in self.epsilon) or any(v <= 0 for v in self.m):
            raise ConfigError("r, epsilon and m values must be positive")
        if self.walkers < 1 or self.renewals < 1 or self.step_cap < 1 or self.steps < 1 or self.warmup < 0:
            raise ConfigError("walkers, renewals, step_cap and steps must be positive")
        if self.m0 < 2 * (self.kappa + 1):
            raise ConfigError("m0 must be at least 2(kappa+1)")
        if self.t <= 0 or self.gamma < 0 or self.sigma < 0 or self.gs_replications < 100:
            raise ConfigError("t must be positive, gamma/sigma nonnegative, gs_replications >= 100")
        return self

    @property
    def cap(self) -> float:
        return self.t_cap if self.t_cap else 10.0 * float(self.t_grid[-1])

    def store(self, i: int, sub: int = 0) -> SlabStore:
        return SlabStore(self.lam, seed=derive_seed(self.seed, _TAGS[self.experiment], sub, i))

    def to_dict(self) -> dict:
        return asdict(self)


def parse_grid(text: str) -> list[float]:
    """``"a..b"`` gives 21 log-spaced points from a to b; otherwise a comma list."""
    text = text.strip()
    if ".." in text:
        a, b = (float(v) for v in text.split(".."))
        if not (0 < a < b):
            raise ConfigError(f"bad grid range {text!r}")
        return [float(v) for v in np.geomspace(a, b, 21)]
    return [float(v) for v in text.split(",") if v.strip()]


CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)}


@dataclass
class Result:
    tables: dict  # file name -> (header list, rows list)
    summary: dict


def map_replications(fn: Callable, cfg: ExperimentConfig, items: list, threads: int) -> list:
    """``[fn(cfg, item) for item in items]``, spread over worker processes when ``threads > 1``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(cfg, it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        chunk = max(1, len(items) // (4 * threads))
        return list(pool.map(fn, [cfg] * len(items), items, chunksize=chunk))


def _threads(cfg: ExperimentConfig) -> int:
    return cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# trace: exploration log, cone checks and first-move laws


def _seed(cfg: ExperimentConfig, i: int, sub: int = 0) -> int:
    return derive_seed(cfg.seed, _TAGS[cfg.experiment], sub, i)


def _warm_state(cfg: ExperimentConfig, store: SlabStore):
    st = initial_state([(0.0, 0.0), (1.0, 0.0)], cfg.kappa)
    for _ in range(cfg.warmup):
        st, _, _ = step_details(st, store)
    return st


def _trace_rep(cfg: ExperimentConfig, i: int):
    """Next-move length of the original process and, independently, of the resampled one."""
    store = cfg.store(i)
    _, _, d_orig = step_details(_warm_state(cfg, store), store)
    st = _warm_state(cfg, cfg.store(i, 1))
    fresh = SlabStore(cfg.lam, seed=_seed(cfg, i, 2), forbidden=st.history)
    _, _, d_res = step_details(st, fresh)
    near = math.dist((0.0, 0.0), ancestor((0.0, 0.0), cfg.store(i, 3)))
    return d_orig, d_res, near


def run_trace(cfg: ExperimentConfig) -> Result:
    checked, hits = cone_scan([(0.0, 0.0), (1.0, 0.0)], cfg.store(0, 4), cfg.steps)
    path = trace_path((0.0, 0.0), cfg.store(0, 5), float(cfg.t_grid[-1]))
    rows = map_replications(_trace_rep, cfg, list(range(cfg.replications)), _threads(cfg))
    a = np.array(rows).reshape(-1, 3)
    summary = {
        "cone_steps": cfg.steps,
        "cone_checked": checked,
        "cone_intersections": hits,
    }
    if a.shape[0] >= 20:
        ks = ks_2samp(a[:, 0], a[:, 1])
        lam = cfg.lam
        kn = ks_1samp(a[:, 2], lambda r: 1.0 - np.exp(-math.pi * lam * r * r / 2.0))
        summary.update(
            first_move_ks=ks.statistic, first_move_p=ks.pvalue,
            nearest_ks=kn.statistic, nearest_p=kn.pvalue, n=int(a.shape[0]),
        )
    tables = {
        "path.csv": (["x", "y"], [tuple(v) for v in path.vertices]),
        "first_moves.csv": (["rep", "original", "resampled", "nearest"], [(i, *r) for i, r in enumerate(rows)]),
    }
    return Result(tables, summary)


# ---------------------------------------------------------------------------
# renewal statistics


def _renewal_rep(cfg: ExperimentConfig, i: int):
    starts = [(float(j) * 2.0 * (cfg.kappa + 1), 0.0) for j in range(cfg.walkers)]
    ch = renewal_chain(starts, cfg.store(i), cfg.renewals, cfg.kappa, cfg.step_cap)
    rows = []
    for ell in range(len(ch)):
        rows.append((i, ell + 1, int(ch.betas[ell]), float(ch.block_sizes[ell]), float(ch.u_new[ell, 0, 1])))
    return rows, bool(ch.timed_out)


def renewal_tail_fits(betas: np.ndarray, blocks: np.ndarray) -> dict:
    """``log P(β >= n)`` against n and ``log P(W >= w)`` against ``sqrt(w)``."""
    out = {}
    for name, data, transform in (("beta", betas, lambda v: v), ("block", blocks, np.sqrt)):
        x = np.sort(np.asarray(data, dtype=float))
        if x.size < 20:
            out[f"{name}_r2"] = math.nan
            continue
        qs = np.unique(np.quantile(x, np.linspace(0.0, 0.999, 40)))
        s = np.array([(x >= q).mean() for q in qs])
        keep = s > 0
        fit = linear_fit(transform(qs[keep]), np.log(s[keep]))
        out[f"{name}_slope"] = fit.slope
        out[f"{name}_r2"] = fit.r_squared
    return out


def run_renewal_stats(cfg: ExperimentConfig) -> Result:
    res = map_replications(_renewal_rep, cfg, list(range(cfg.replications)), _threads(cfg))
    rows = [r for rr, _ in res for r in rr]
    timeouts = sum(1 for _, t in res if t)
    summary = {"renewals": len(rows), "chains": cfg.replications, "timed_out_chains": timeouts}
    if rows:
        a = np.array(rows, dtype=float)
        summary.update(renewal_tail_fits(a[:, 2], a[:, 3]))
        summary["beta_mean"] = float(a[:, 2].mean())
    else:
        b, ev, n = event_log_bounds([(0.0, 0.0)], cfg.store(0, 1), 200, cfg.kappa, cfg.step_cap)
        summary["max_log_event_probability"] = float(b.max()) if b.size else None
        summary["good_steps_probed"] = int(b.size)
    return Result({"renewals.csv": (["chain", "ell", "beta", "block_size", "level"], rows)}, summary)


# ---------------------------------------------------------------------------
# coalescence tail


def _coal_rep(cfg: ExperimentConfig, i: int):
    store = cfg.store(i)
    out = []
    for z in cfg.z0:
        s = coalescence_time((0.0, 0.0), (float(z), 0.0), store, cfg.cap, with_chain=False)
        out.append(math.inf if s.censored else s.T)
    return out


def run_coalescence_tail(cfg: ExperimentConfig) -> Result:
    T = np.array(map_replications(_coal_rep, cfg, list(range(cfg.replications)), _threads(cfg)))
    rows = []
    summary: dict = {"n": cfg.replications, "t_cap": cfg.cap}
    for j, z in enumerate(cfg.z0):
        tab = tail_curve(T[:, j], cfg.t_grid)
        for t, s, e, n in tab.rows():
            rows.append((z, t, s, e, n))
        sel = (tab.t >= 100) & (tab.t <= 1000) & (tab.survival > 0)
        if sel.sum() >= 3:
            summary[f"slope_z{z:g}"] = loglog_fit(tab.t[sel], tab.survival[sel]).slope
        summary[f"censored_z{z:g}"] = int(np.isinf(T[:, j]).sum())
    return Result({"survival.csv": (["z0", "t", "survival", "se", "n"], rows)}, summary)


# ---------------------------------------------------------------------------
# Laplace drift conditions


def _laplace_rep(cfg: ExperimentConfig, i: int):
    zs = []
    for j, z in enumerate(cfg.z0):
        ch = renewal_chain(
            [(0.0, 0.0), (float(z), 0.0)], cfg.store(i, j), cfg.renewals, cfg.kappa, cfg.step_cap,
            stop_gap=(0.0, math.inf),
        )
        gaps = np.abs(ch.u_new[:, 1, 0] - ch.u_new[:, 0, 0]) if len(ch) else np.zeros(0)
        zs.append([float(z)] + [float(g) for g in gaps])
    return zs


def run_laplace_check(cfg: ExperimentConfig) -> Result:
    res = map_replications(_laplace_rep, cfg, list(range(cfg.replications)), _threads(cfg))
    paths = [p for rr in res for p in rr]
    tr = transitions(paths)
    rep = laplace_conditions(tr, cfg.m0, LAPLACE_BINS)
    rows = [
        (b.lo, b.hi, b.n, b.drift, b.drift_se, b.second, b.third, int(b.populated), int(b.populated and b.passes()))
        for b in rep.bins
    ]
    summary = {"transitions": int(tr.shape[0]), "evaluated_bins": len(rep.evaluated), "passes": rep.passes()}
    return Result(
        {"laplace.csv": (["lo", "hi", "n", "drift", "drift_se", "second", "third", "populated", "passes"], rows)},
        summary,
    )


# ---------------------------------------------------------------------------
# γ, σ and the scaled statistics


def _gs_rep(cfg: ExperimentConfig, i: int):
    store = SlabStore(cfg.lam, seed=derive_seed(cfg.seed, 99, i))
    return renewal_increments(store, cfg.renewals, cfg.kappa, cfg.step_cap)


def gamma_sigma(cfg: ExperimentConfig) -> GammaSigma:
    """Estimates shared by the scaled experiments (seeded independently of the experiment tag)."""
    pairs = map_replications(_gs_rep, cfg, list(range(cfg.gs_replications)), _threads(cfg))
    return gamma_sigma_from_increments(pairs)


def _scale_params(cfg: ExperimentConfig) -> tuple[ScaleParams, dict]:
    if cfg.gamma > 0 and cfg.sigma > 0:
        return ScaleParams(cfg.n, cfg.gamma, cfg.sigma), {"gamma": cfg.gamma, "sigma": cfg.sigma, "estimated": False}
    gs = gamma_sigma(cfg)
    info = {
        "gamma": gs.gamma, "gamma_se": gs.gamma_se, "sigma": gs.sigma, "sigma_se": gs.sigma_se,
        "gamma_first": gs.gamma_first, "sigma_first": gs.sigma_first, "increments": gs.n_increments,
        "gamma_min_increment": float(gs.dy.min()), "estimated": True,
    }
    sym = symmetry_test(gs.dx)
    info["symmetry_ks"] = sym.statistic
    info["symmetry_p"] = sym.pvalue
    return ScaleParams(cfg.n, gs.gamma, gs.sigma), info


def run_gamma_sigma(cfg: ExperimentConfig) -> Result:
    p, info = _scale_params(ExperimentConfig(**{**cfg.to_dict(), "gamma": 0.0, "sigma": 0.0}))
    return Result({"gamma_sigma.csv": (list(info.keys()), [tuple(info.values())])}, info)


def _donsker_call(cfg, item):
    p, i = item
    return standardized_endpoint(cfg.store(i), p)


def run_donsker(cfg: ExperimentConfig) -> Result:
    p, info = _scale_params(cfg)
    ends = map_replications(_donsker_call, cfg, [(p, i) for i in range(cfg.replications)], _threads(cfg))
    ks = ks_1samp(ends, normal_cdf)
    devs = map_replications(_deviation_call, cfg, list(range(min(cfg.replications, 500))), _threads(cfg))
    med = np.median(np.array(devs), axis=0)
    summary = {**info, "n": cfg.n, "ks": ks.statistic, "ks_p": ks.pvalue, "replications": cfg.replications,
               "deviation_medians": [float(v) for v in med]}
    if len(cfg.m) >= 3:
        summary["deviation_slope"] = loglog_fit(cfg.m, med).slope
    return Result({"endpoints.csv": (["rep", "endpoint"], list(enumerate(ends)))}, summary)


def _deviation_call(cfg, i):
    store = cfg.store(i, 6)
    return [max_deviation(store, m) for m in cfg.m]


def _eta_call(cfg, item):
    p, i = item
    store = cfg.store(i)
    out = []
    for eps in cfg.epsilon:
        out.append(int(eta_forest(store, 0.0, 0.0, eps * p.space_unit, cfg.t * p.time_unit) >= 2))
    return out


def run_eta(cfg: ExperimentConfig) -> Result:
    p, info = _scale_params(cfg)
    hits = np.array(map_replications(_eta_call, cfg, [(p, i) for i in range(cfg.replications)], _threads(cfg)))
    rows = []
    N = cfg.replications
    for j, eps in enumerate(cfg.epsilon):
        q = float(hits[:, j].mean())
        rows.append((eps, cfg.t, q, math.sqrt(q * (1 - q) / N), N))
    return Result({"eta.csv": (["epsilon", "t", "p_ge2", "se", "n_trials"], rows)}, {**info, "n": cfg.n})


# ---------------------------------------------------------------------------
# dual forest and radial tree


def _dual_call(cfg, i):
    w = cfg.window
    r = check_window(cfg.store(i), (0.0, w, 0.0, w))
    return (i, r.n_primal, r.n_dual, r.n_flagged, r.n_incomplete, r.violations, r.pairs_checked,
            r.perturbed_violations, int(r.single_edge_ok), r.expansions)


def run_dual_check(cfg: ExperimentConfig) -> Result:
    rows = map_replications(_dual_call, cfg, list(range(cfg.replications)), _threads(cfg))
    a = np.array(rows)
    summary = {
        "windows": len(rows), "violations": int(a[:, 5].sum()), "perturbed_violations": int(a[:, 7].sum()),
        "single_edge_ok": bool(a[:, 8].all()), "flagged": int(a[:, 3].sum()),
    }
    header = ["window", "n_primal", "n_dual", "n_flagged", "n_incomplete", "violations", "pairs_checked",
              "perturbed_violations", "single_edge_ok", "expansions"]
    return Result({"dual.csv": (header, rows)}, summary)


def _rst_call(cfg, item):
    r, i = item
    seed = _seed(cfg, i)
    return (r, cfg.rout_factor * r, seed, chi_r_proxy(r, cfg.rout_factor * r, SlabStore(cfg.lam, seed=seed)))


def chi_slope(rows) -> dict:
    a = np.array([(r, c) for r, _, _, c in rows], dtype=float)
    rs = np.unique(a[:, 0])
    means = np.array([a[a[:, 0] == r, 1].mean() for r in rs])
    ses = np.array([a[a[:, 0] == r, 1].std(ddof=1) / math.sqrt((a[:, 0] == r).sum()) for r in rs])
    if np.any(means <= 0):
        return {"slope": math.nan, "slope_se": math.nan, "upper95": math.nan, "weighted": False}
    weighted = bool(np.all(ses > 0))
    # a radius whose counts never vary carries no weight information
    fit = weighted_fit(np.log(rs), np.log(means), ses / means) if weighted else linear_fit(np.log(rs), np.log(means))
    return {
        "slope": fit.slope, "slope_se": fit.slope_se, "upper95": upper_bound(fit.slope, fit.slope_se),
        "weighted": weighted,
    }


def run_rst_chi(cfg: ExperimentConfig) -> Result:
    items = [(float(r), i) for r in cfg.r for i in range(cfg.replications)]
    rows = map_replications(_rst_call, cfg, items, _threads(cfg))
    summary = chi_slope(rows) if len(cfg.r) >= 2 and cfg.replications >= 2 else {}
    return Result({"chi.csv": (["r", "R_out", "seed", "chi"], rows)}, summary)


RUNNERS = {
    "trace": run_trace,
    "renewal-stats": run_renewal_stats,
    "coalescence-tail": run_coalescence_tail,
    "laplace-check": run_laplace_check,
    "donsker": run_donsker,
    "eta": run_eta,
    "dual-check": run_dual_check,
    "rst-chi": run_rst_chi,
    "gamma-sigma": run_gamma_sigma,
}


def run(cfg: ExperimentConfig) -> Result:
    return RUNNERS[cfg.validate().experiment](cfg)
