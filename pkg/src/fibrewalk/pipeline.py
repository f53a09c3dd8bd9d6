"""End-to-end runs: load, bound, fit, sample, merge and report."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .bounds import ReferenceSet, reference_set
from .enumeration import enumerate_fiber
from .gfit import explore
from .inference import (
    FittedTable,
    PValueReport,
    asymptotic_p,
    batch_means_se,
    degrees_of_freedom,
    ipf_fit,
    test_statistic,
)
from .mcmc import Exceedance, GDistribution, run_chain
from .samplers import sis_draws, sis_mean_weight, sis_ratio
from .tables import Dataset, lex_cell, load_dataset

MODES = ("mcmc", "sis", "gfit", "bounds", "enumerate")
STATISTICS = ("X2", "G2")
WORKERS_ENV = "FIBREWALK_WORKERS"
TIE_TOL = 1e-9


@dataclass
class RunConfig:
    data: str
    mode: str = "mcmc"
    chains: int = 10
    iterations: int = 250_000
    burn_in: int = 25_000
    batches: int = 10
    seed: int = 0
    kind: str = "reciprocal"
    target: str = "hypergeometric"
    g_path: str | None = None
    i_max: int = 10_000
    output: str | None = None
    num_samples: int = 10_000
    limit: int = 10**6
    workers: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.chains < 1:
            raise ValueError("chains must be at least 1")
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("iterations must exceed burn-in, and burn-in must be nonnegative")
        if self.batches < 1:
            raise ValueError("batches must be at least 1")

    def worker_count(self) -> int:
        if self.workers is not None:
            return max(1, self.workers)
        env = os.environ.get(WORKERS_ENV)
        return max(1, int(env)) if env else (os.cpu_count() or 1)


@dataclass
class Analysis:
    dataset: Dataset
    rs: ReferenceSet
    fitted: FittedTable
    observed: dict  # statistic -> value
    df: int

    @property
    def exceedance(self) -> Exceedance:
        return Exceedance(self.fitted.mu, self.observed["X2"], self.observed["G2"], TIE_TOL)

    def asymptotic(self) -> dict:
        return {k: asymptotic_p(v, self.df) for k, v in self.observed.items()}

    def exceeds(self, table: np.ndarray) -> dict:
        return {k: test_statistic(k, table, self.fitted) >= v * (1 - TIE_TOL) for k, v in self.observed.items()}

    def summary(self) -> dict:
        return {
            "dataset": self.dataset.name,
            "dims": list(self.dataset.schema.dims),
            "model": [[v + 1 for v in g] for g in self.dataset.model.generators],
            "cells": self.rs.n_cells,
            "sampling_cells": self.rs.n_sampling,
            "fixed_cells": self.rs.n_cells - self.rs.n_sampling,
            "free_cells": self.rs.n_free,
            "df": self.df,
            "observed": self.observed,
            "asymptotic_p": self.asymptotic(),
            "fit_converged": self.fitted.converged,
        }


def analyse(dataset: Dataset | str) -> Analysis:
    ds = load_dataset(dataset) if isinstance(dataset, (str, Path)) else dataset
    rs = reference_set(ds)
    zeros = ds.bounds.structural_zeros
    fitted = ipf_fit(ds.schema, ds.table, ds.model, zeros)
    observed = {k: test_statistic(k, ds.table, fitted) for k in STATISTICS}
    return Analysis(ds, rs, fitted, observed, degrees_of_freedom(ds.schema, ds.model, zeros))


def load_or_estimate_g(cfg: RunConfig, rs: ReferenceSet) -> tuple[GDistribution, dict]:
    if cfg.g_path:
        g = GDistribution.load(cfg.g_path)
        if g.support_size != rs.n_free:
            raise ValueError(f"{cfg.g_path}: support {g.support_size} does not match {rs.n_free} free cells")
        return g, {"source": str(cfg.g_path)}
    rec = explore(rs, cfg.i_max, np.random.default_rng(cfg.seed))
    return rec.distribution(), {"source": "estimated", "i_max": cfg.i_max}


def _chain_job(job: tuple) -> tuple:
    data, probs, c, seed, iterations, burn_in, target, kind = job
    an = analyse(data)
    rng = np.random.default_rng(seed + c)
    res = run_chain(an.rs, GDistribution(np.asarray(probs)), rng, iterations, burn_in, target, kind,
                    exceedance=an.exceedance)
    return c, res.indicators, res.counters.as_array(), res.failed_check, res.init_attempts


def run_chains(cfg: RunConfig, data: Dataset | str, g: GDistribution) -> list[tuple]:
    """Run every chain, in a process pool when more than one worker is allowed."""
    jobs = [(data, g.probs.tolist(), c, cfg.seed, cfg.iterations, cfg.burn_in, cfg.target, cfg.kind)
            for c in range(cfg.chains)]
    workers = min(cfg.worker_count(), cfg.chains)
    if workers == 1:
        out = [_chain_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as pool:
            out = list(pool.map(_chain_job, jobs))
    return sorted(out, key=lambda r: r[0])


def run_exact_test(cfg: RunConfig) -> dict:
    t0 = time.time()
    an = analyse(cfg.data)
    g, g_info = load_or_estimate_g(cfg, an.rs)
    results = run_chains(cfg, an.dataset if not isinstance(cfg.data, str) else cfg.data, g)
    counters = np.sum([r[2] for r in results], axis=0)
    iters = int(counters[:3].sum())
    acc = counters[0] / iters if iters else 0.0
    fail = counters[2] / iters if iters else 0.0
    asym = an.asymptotic()
    reports = {}
    per_chain = {}
    for j, k in enumerate(STATISTICS):
        bm = batch_means_se([r[1][:, j] for r in results], cfg.batches)
        reports[k] = PValueReport(k, an.observed[k], bm.estimate, bm.se, asym[k], an.df, float(acc), float(fail),
                                  bm.se_of_mean).to_dict()
        per_chain[k] = [float(r[1][:, j].mean()) for r in results]
    return {
        "mode": "mcmc",
        **an.summary(),
        "p_values": reports,
        "per_chain_p": per_chain,
        "counters": dict(zip(["accepted", "rejected", "failed", "lp_solves", "rref_fallbacks"], map(int, counters))),
        "invariant_failures": int(sum(1 for r in results if r[3])),
        "g": {**g_info, "support_size": g.support_size, "mode": g.mode, "Q": g.proposal_cost()},
        "config": asdict(cfg) | {"data": str(cfg.data)},
        "wall_seconds": time.time() - t0,
    }


def run_sis(cfg: RunConfig) -> dict:
    t0 = time.time()
    an = analyse(cfg.data)
    rng = np.random.default_rng(cfg.seed)
    draws = sis_draws(an.rs, cfg.num_samples, rng, kind=cfg.kind, target=cfg.target)
    out = {"mode": "sis", **an.summary(), "accept_rate": draws.accept_rate, "attempts": draws.n_attempts}
    if draws.tables.shape[0] == 0:
        raise RuntimeError("every SIS attempt failed")
    hits = [an.exceeds(t) for t in draws.tables]
    out["p_values"] = {}
    for k in STATISTICS:
        est = sis_ratio(draws, np.array([h[k] for h in hits]))
        out["p_values"][k] = {"exact_p": est.estimate, "standard_error": est.standard_error,
                              "asymptotic_p": an.asymptotic()[k], "effective_sample_size": est.effective_sample_size}
    if cfg.target == "uniform":
        out["fiber_size_estimate"] = asdict(sis_mean_weight(draws))
    out["config"] = asdict(cfg) | {"data": str(cfg.data)}
    out["wall_seconds"] = time.time() - t0
    return out


def run_gfit(cfg: RunConfig) -> dict:
    t0 = time.time()
    an = analyse(cfg.data)
    rec = explore(an.rs, cfg.i_max, np.random.default_rng(cfg.seed), kind="uniform")
    g = rec.distribution()
    return {
        "mode": "gfit",
        **an.summary(),
        "i_max": cfg.i_max,
        "g": g.to_json(),
        "g_mode": g.mode,
        "g_at_mode": float(g.probs[g.mode]),
        "Q": g.proposal_cost(),
        "entropy": g.entropy,
        "mean_s": rec.mean_s,
        "mean_sb": rec.mean_sb,
        "lp_solves": rec.lp_solves,
        "wall_seconds": time.time() - t0,
    }


def run_bounds(cfg: RunConfig) -> dict:
    an = analyse(cfg.data)
    rs = an.rs
    schema = an.dataset.schema
    cells = []
    for i in range(rs.n_cells):
        cells.append({"cell": list(lex_cell(schema, i)), "observed": int(an.dataset.table.counts[i]),
                      "lower": int(rs.bounds.lower[i]), "upper": int(rs.bounds.upper[i])})
    return {"mode": "bounds", **an.summary(), "rank": rs.rank, "cells_detail": cells}


def run_enumerate(cfg: RunConfig) -> dict:
    an = analyse(cfg.data)
    fib = enumerate_fiber(an.rs, cfg.limit)
    out = {"mode": "enumerate", **an.summary(), "fiber_size": fib.size, "overflow": fib.overflow}
    if not fib.overflow:
        probs = fib.probabilities(an.rs, cfg.target)
        out["p_values"] = {}
        for k in STATISTICS:
            stats = np.array([test_statistic(k, t, an.fitted) for t in fib.tables])
            out["p_values"][k] = {"exact_p": float(probs[stats >= an.observed[k] * (1 - TIE_TOL)].sum()),
                                  "asymptotic_p": an.asymptotic()[k]}
    return out


RUNNERS = {"mcmc": run_exact_test, "sis": run_sis, "gfit": run_gfit, "bounds": run_bounds, "enumerate": run_enumerate}


def run(cfg: RunConfig) -> dict:
    return RUNNERS[cfg.mode](cfg)
