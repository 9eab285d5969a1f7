"""Experiment drivers behind the command line.

Each ``cmd_*`` function takes an :class:`ExperimentConfig` and returns a list of
:class:`ResultRow`.  Replication ``i`` always draws from the stream keyed by
``(seed, i, label)``, so the rows do not depend on ``parallelism``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from contextlib import contextmanager
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import estimators as est
from .errors import ParameterError
from .process import (
    SeriesConfig,
    default_truncation,
    partial_sum,
    sample_limit_sums,
    sample_marginal,
    sample_tail_counts,
    simulate_path,
)
from .renewal import (
    RenewalTables,
    asymptotic_u,
    build_tables,
    load_tables,
    make_renewal_law,
    residual_horizon,
    save_tables,
    scaling_b,
    theta_rho,
)
from .streams import stream

log = logging.getLogger(__name__)

COMMANDS = ("constants", "phase-sweep", "macro", "tailproc", "hitprob", "ac", "sums", "marginal")
# below this the qF2 bracket is too wide to be useful
MIN_TABLE_HORIZON = 1000
# settings that do not change results
_NON_SEMANTIC = {"parallelism", "out", "format", "cache_dir"}


@dataclass
class ExperimentConfig:
    command: str = "constants"
    alpha: float = 0.7
    beta: float = 0.3
    n: int = 100_000
    rho: tuple[float, ...] = (0.2, 0.5, 0.8)
    y: tuple[float, ...] = (1.0,)
    reps: int = 1000
    m: int | None = None
    table_horizon: int = 10**6
    seed: int = 20240601
    parallelism: int = 1
    out: str | None = None
    format: str = "csv"
    cache_dir: str | None = None
    x: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    n_list: tuple[int, ...] = (1000, 10_000, 100_000)
    d: tuple[int, ...] = (100, 1000)
    m_lag: tuple[float, ...] = (0.125, 0.25, 0.5)
    residual_frac: float = 1e-4

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ParameterError(f"unknown command {self.command!r}")
        if not (0.0 < self.alpha < 1.0):
            raise ParameterError("alpha must lie in (0, 1)")
        make_renewal_law(self.beta)
        if self.n < 4:
            raise ParameterError("n must be >= 4")
        if self.reps < 1:
            raise ParameterError("reps must be >= 1")
        if self.m is not None and self.m < 2:
            raise ParameterError("m must be >= 2")
        if self.table_horizon < MIN_TABLE_HORIZON:
            raise ParameterError(f"table horizon must be >= {MIN_TABLE_HORIZON}")
        if self.format not in ("csv", "jsonl"):
            raise ParameterError("format must be csv or jsonl")
        if any(not (0.0 <= r <= 1.0) for r in self.rho):
            raise ParameterError("rho values must lie in [0, 1]")

    def echo(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name in _NON_SEMANTIC:
                continue
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @property
    def digest(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ResultRow:
    record: est.EstimateRecord
    config_digest: str
    duration: float = 0.0

    def flat(self) -> dict:
        row = self.record.as_row()
        row["config_digest"] = self.config_digest
        row["extra"] = json.dumps(_jsonable(self.record.extra), sort_keys=True)
        return row


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if math.isnan(obj) else float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- tables --------------------------------------------------------------------


def tables_for(beta: float, N: int, cache_dir: str | None = None) -> RenewalTables:
    """Build renewal tables, reusing an on-disk copy keyed by ``(beta, N)``."""
    if cache_dir is None:
        return build_tables(make_renewal_law(beta), N)
    key = hashlib.sha256(f"{float(beta)!r}:{int(N)}".encode()).hexdigest()[:12]
    path = Path(cache_dir) / f"tables_{key}.npz"
    if path.exists():
        return load_tables(path)
    tables = build_tables(make_renewal_law(beta), N)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_tables(tables, path)
    return tables


# -- replication runner --------------------------------------------------------


_DIGESTS: list | None = None


@contextmanager
def digest_log():
    """Collect ``{label, index, sha256}`` for every replication run inside the block."""
    global _DIGESTS
    prev, _DIGESTS = _DIGESTS, []
    try:
        yield _DIGESTS
    finally:
        _DIGESTS = prev


def result_digest(obj) -> str:
    h = hashlib.sha256()

    def feed(o):
        if isinstance(o, np.ndarray):
            h.update(str(o.dtype).encode())
            h.update(np.ascontiguousarray(o).tobytes())
        elif isinstance(o, (list, tuple)):
            h.update(b"[")
            for v in o:
                feed(v)
            h.update(b"]")
        else:
            h.update(repr(o).encode())

    feed(obj)
    return h.hexdigest()[:16]


def run_replications(worker: Callable, args: tuple, indices, parallelism: int = 1) -> list:
    """Apply ``worker(*args, i)`` to each index; results come back in index order."""
    indices = list(indices)
    if parallelism <= 1 or len(indices) < 2:
        out = [worker(*args, i) for i in indices]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            chunk = max(1, len(indices) // (4 * parallelism))
            out = list(pool.map(worker, *zip(*[(*args, i) for i in indices]), chunksize=chunk))
    if _DIGESTS is not None:
        label = next((a for a in reversed(args) if isinstance(a, str)), "")
        _DIGESTS.extend({"label": label, "index": i, "sha256": result_digest(r)} for i, r in zip(indices, out))
    return out


def _series(cfg: ExperimentConfig, m: int, n: int | None = None, mode="macroscopic", rho=None) -> SeriesConfig:
    return SeriesConfig(n=n or cfg.n, alpha=cfg.alpha, law=make_renewal_law(cfg.beta), m=m, seed=cfg.seed, mode=mode, rho=rho)


def _sweep_worker(series: SeriesConfig, schemes: list, levels: list, seed: int, label: str, i: int):
    x = simulate_path(series, stream(seed, i, label)).x
    out = []
    for scheme in schemes:
        bm = scheme.blocks(x).max(axis=1)
        out.append([int((bm > lv).sum()) for lv in levels])
    return np.array(out)


def _macro_worker(series: SeriesConfig, scheme, b: float, seed: int, label: str, i: int):
    x = simulate_path(series, stream(seed, i, label)).x
    clusters = est.extract_clusters(x, scheme, b)
    return float(x.max()), len(clusters), [c.size for c in clusters], [c.flatness for c in clusters if c.size >= 2], float(x.sum())


def _ac_worker(series: SeriesConfig, d: int, lags: list, b: float, seed: int, label: str, i: int):
    x = simulate_path(series, stream(seed, i, label)).x
    return [est.anticlustering_counts(x, lag, d, b, 1.0, 1.0) for lag in lags]


def _chunks(total: int, size: int):
    return [(lo, min(size, total - lo)) for lo in range(0, total, size)]


_TAIL_CHUNK = 50_000


def _tail_worker(beta: float, L: int, seed: int, label: str, chunks: list, i: int):
    _, size = chunks[i]
    return sample_tail_counts(make_renewal_law(beta), L, size, stream(seed, i, label))


# -- commands --------------------------------------------------------------------


def _rows(cfg, records, t0):
    dt = time.perf_counter() - t0
    return [ResultRow(r, cfg.digest, dt) for r in records]


def cmd_constants(cfg: ExperimentConfig) -> list[ResultRow]:
    t0 = time.perf_counter()
    tables = tables_for(cfg.beta, cfg.table_horizon, cfg.cache_dir)
    q = tables.qF2
    recs = [
        est.EstimateRecord(
            "qF2", q, tables.q_error, 1, seed=cfg.seed,
            extra={"q_lower": tables.q_lower, "q_upper": tables.q_upper, "tail_correction": tables.tail_correction, "horizon": tables.horizon},
        )
    ]
    for rho in sorted(set(cfg.rho) | {0.0, 1.0}):
        recs.append(
            est.EstimateRecord("theta_rho", theta_rho(cfg.beta, rho, q), tables.q_error, 1, rho=rho, seed=cfg.seed,
                               target_provenance="(1-2 rho beta) qF2")
        )
    w = make_renewal_law(cfg.beta).w(cfg.n)
    recs.append(est.EstimateRecord("b_n", scaling_b(cfg.n, cfg.alpha), 0.0, 1, seed=cfg.seed, extra={"n": cfg.n, "alpha": cfg.alpha}))
    recs.append(est.EstimateRecord("w_n", w, 0.0, 1, seed=cfg.seed, extra={"n": cfg.n, "asymptote": cfg.n ** (1 - cfg.beta) / (1 - cfg.beta)}))
    k = 10
    while k <= tables.horizon:
        recs.append(
            est.EstimateRecord("u_ratio", float(tables.u[k] / asymptotic_u(tables, k)), 0.0, 1, target=1.0,
                               target_provenance="u(n) ~ n^(beta-1)/(Gamma(beta)Gamma(1-beta))", seed=cfg.seed, extra={"k": k})
        )
        k *= 10
    return _rows(cfg, recs, t0)


def cmd_phase_sweep(cfg: ExperimentConfig) -> list[ResultRow]:
    """Block exceedance rates across ``rho``.

    Without a truncation override each ``rho`` gets its own paths at its
    mesoscopic truncation; with ``m`` set, one set of paths is re-blocked for
    every ``rho``.
    """
    t0 = time.perf_counter()
    if not cfg.rho:
        raise ParameterError("rho list must be nonempty")
    if any(not (0.0 < r < 1.0) for r in cfg.rho):
        raise ParameterError("phase sweep needs rho in (0, 1)")
    tables = tables_for(cfg.beta, cfg.table_horizon, cfg.cache_dir)
    b = scaling_b(cfg.n, cfg.alpha)
    levels = [b * y for y in cfg.y]
    schemes = {rho: est.make_block_scheme(cfg.n, rho) for rho in cfg.rho}
    counts = {}
    truncation = {}
    if cfg.m is not None:
        series = _series(cfg, cfg.m)
        res = run_replications(_sweep_worker, (series, list(schemes.values()), levels, cfg.seed, "sweep"), range(cfg.reps), cfg.parallelism)
        arr = np.stack(res)  # reps x schemes x levels
        for j, rho in enumerate(schemes):
            counts[rho] = arr[:, j, :]
            truncation[rho] = cfg.m
    else:
        for rho, scheme in schemes.items():
            m = default_truncation(cfg.n, cfg.alpha, cfg.beta, "mesoscopic", rho)
            series = _series(cfg, m, mode="mesoscopic", rho=rho)
            res = run_replications(_sweep_worker, (series, [scheme], levels, cfg.seed, f"sweep-{rho!r}"), range(cfg.reps), cfg.parallelism)
            counts[rho] = np.stack(res)[:, 0, :]
            truncation[rho] = m
    recs = []
    for rho, scheme in schemes.items():
        for j, y in enumerate(cfg.y):
            target = theta_rho(cfg.beta, rho, tables.qF2) * y ** (-cfg.alpha)
            r = est.block_exceedance_from_counts(
                counts[rho][:, j], scheme, y, target=target, provenance="(1-2 rho beta) qF2 y^-alpha", seed=cfg.seed
            )
            r.extra["m"] = truncation[rho]
            r.extra["rel_dev"] = (r.estimate - target) / target
            recs.append(r)
    for y in cfg.y:
        recs.append(sweep_verdict([r for r in recs if r.y == y], y, seed=cfg.seed))
    return _rows(cfg, recs, t0)


def sweep_verdict(records: list[est.EstimateRecord], y: float, seed=None, width: float = 2.0) -> est.EstimateRecord:
    """1 if estimates strictly decrease in rho with disjoint ``width``-sigma intervals."""
    recs = sorted(records, key=lambda r: r.rho)
    ok = True
    for a, b in zip(recs, recs[1:]):
        sa, sb = _se(a), _se(b)
        if not (a.estimate - width * sa > b.estimate + width * sb):
            ok = False
    return est.EstimateRecord(
        "sweep_ordering", float(ok), 0.0, max(len(recs), 1), target=1.0, target_provenance="strictly decreasing in rho",
        y=y, seed=seed, extra={"verdict": "decreasing" if ok else "not-decreasing", "rho": [r.rho for r in recs],
                               "estimates": [r.estimate for r in recs]},
    )


def _se(r: est.EstimateRecord) -> float:
    return r.clustered_se if r.clustered_se == r.clustered_se else r.se


def cmd_macro(cfg: ExperimentConfig) -> list[ResultRow]:
    t0 = time.perf_counter()
    tables = tables_for(cfg.beta, cfg.table_horizon, cfg.cache_dir)
    theta = theta_rho(cfg.beta, 1.0, tables.qF2)
    recs = []
    flat = {}
    for n in sorted(set(cfg.n_list) | {cfg.n}):
        m = cfg.m or default_truncation(n, cfg.alpha, cfg.beta, "macroscopic")
        scheme = est.macro_block_scheme(n)
        b = scaling_b(n, cfg.alpha)
        res = run_replications(_macro_worker, (_series(cfg, m, n=n), scheme, b, cfg.seed, f"macro-{n}"), range(cfg.reps), cfg.parallelism)
        flat_vals = [f for r in res for f in r[3]]
        flat[n] = float(np.median(flat_vals)) if flat_vals else float("nan")
        recs.append(est.EstimateRecord("cluster_flatness", flat[n], 0.0, max(len(flat_vals), 1), seed=cfg.seed,
                                       extra={"n": n, "m": m, "clusters_with_2plus": len(flat_vals)}))
        if n != cfg.n:
            continue
        maxima = [r[0] for r in res]
        for r in est.running_max_cdf(maxima, b, cfg.alpha, theta, cfg.x, seed=cfg.seed):
            r.extra["m"] = m
            recs.append(r)
        disp = est.poisson_dispersion([r[1] for r in res], theta, seed=cfg.seed)
        disp.extra.update(m=m, d=scheme.d)
        recs.append(disp)
        sizes = [s for r in res for s in r[2]]
        if sizes:
            g = est.geometric_gof(sizes, tables.qF2, name="cluster_size_gof", seed=cfg.seed)
            g.extra["m"] = m
            recs.append(g)
    ns = sorted(flat)
    vals = [flat[n] for n in ns]
    increasing = all(b > a for a, b in zip(vals, vals[1:]))
    recs.append(est.EstimateRecord("flatness_trend", float(increasing), 0.0, len(ns), target=1.0,
                                   target_provenance="median flatness increases with n", seed=cfg.seed,
                                   extra={"n": ns, "median_flatness": vals}))
    return _rows(cfg, recs, t0)


def tail_counts(cfg: ExperimentConfig, L: int, size: int, label: str) -> np.ndarray:
    chunks = _chunks(size, _TAIL_CHUNK)
    res = run_replications(_tail_worker, (cfg.beta, L, cfg.seed, label, chunks), range(len(chunks)), cfg.parallelism)
    return np.concatenate(res)


def cmd_tailproc(cfg: ExperimentConfig) -> list[ResultRow]:
    t0 = time.perf_counter()
    tables = tables_for(cfg.beta, cfg.table_horizon, cfg.cache_dir)
    L = residual_horizon(tables, cfg.residual_frac)
    c1 = tail_counts(cfg, L, cfg.reps, "tail-right")
    c2 = tail_counts(cfg, L, cfg.reps, "tail-left")
    g = est.geometric_gof(c1, tables.qF2, name="tail_cluster_gof", seed=cfg.seed)
    g.extra.update(L=L, bias_bound=tables.v_residual(L))
    recs = [
        g,
        est.candidate_index_estimate(c1, tables, L, seed=cfg.seed),
        est.two_sided_count_identity(c1 + c2 - 1, tables.qF2, seed=cfg.seed),
    ]
    return _rows(cfg, recs, t0)


def _hit_worker(beta, tables, n, d, seed, label, chunks, i):
    _, size = chunks[i]
    r1, r2 = est.hit_probability_check(make_renewal_law(beta), tables, n, d, size, stream(seed, i, label))
    return round(r1.estimate * size), round(r2.estimate * size)


def cmd_hitprob(cfg: ExperimentConfig) -> list[ResultRow]:
    t0 = time.perf_counter()
    tables = tables_for(cfg.beta, cfg.table_horizon, cfg.cache_dir)
    law = make_renewal_law(cfg.beta)
    recs = []
    for d in cfg.d:
        if d > cfg.n:
            raise ParameterError("d must not exceed n")
        chunks = _chunks(cfg.reps, 200_000)
        res = run_replications(_hit_worker, (cfg.beta, tables, cfg.n, d, cfg.seed, f"hit-{d}", chunks), range(len(chunks)), cfg.parallelism)
        s = sum(r[0] for r in res) / cfg.reps
        p = sum(r[1] for r in res) / cfg.reps
        w = law.w(cfg.n)
        exact = est.pair_hit_exact(tables, cfg.n, d)
        asym = tables.qF2 * d / (w * w)
        recs.append(est.EstimateRecord("single_hit_probability", s, math.sqrt(s * (1 - s) / cfg.reps), cfg.reps,
                                       target=d ** (1 - cfg.beta) / w, target_provenance="asymptote C_F d^(1-beta)/w_n",
                                       seed=cfg.seed, extra={"exact": law.w(d) / w, "d": d}))
        recs.append(est.EstimateRecord("pair_hit_probability", p, math.sqrt(p * (1 - p) / cfg.reps), cfg.reps,
                                       target=exact, target_provenance="exact sum_{k<d} Fbar*(k)/w_n^2",
                                       seed=cfg.seed, extra={"asymptote": asym, "d": d}))
        recs.append(est.EstimateRecord("pair_hit_exact_over_asymptote", exact / asym, 0.0, 1, target=1.0,
                                       target_provenance="qF2 d / w_n^2", seed=cfg.seed, extra={"d": d}))
    return _rows(cfg, recs, t0)


def cmd_ac(cfg: ExperimentConfig) -> list[ResultRow]:
    t0 = time.perf_counter()
    rho = cfg.rho[0] if len(cfg.rho) == 1 else 0.5
    scheme = est.make_block_scheme(cfg.n, rho)
    m = cfg.m or default_truncation(cfg.n, cfg.alpha, cfg.beta, "mesoscopic", rho)
    b = scaling_b(cfg.n, cfg.alpha)
    lags = sorted({max(1, int(f * scheme.d)) for f in cfg.m_lag})
    res = run_replications(_ac_worker, (_series(cfg, m, mode="mesoscopic", rho=rho), scheme.d, lags, b, cfg.seed, "ac"),
                           range(cfg.reps), cfg.parallelism)
    recs = []
    for j, lag in enumerate(lags):
        r = est.anticlustering_profile([row[j] for row in res], lag, scheme, b, seed=cfg.seed)
        r.extra.update(m=m, d=scheme.d)
        recs.append(r)
    return _rows(cfg, recs, t0)


def _sum_worker(series: SeriesConfig, seed: int, label: str, i: int) -> float:
    return partial_sum(simulate_path(series, stream(seed, i, label)), series.alpha, series.n)


def _limit_worker(theta, alpha, q, seed, label, i):
    return float(sample_limit_sums(theta, alpha, q, 1, stream(seed, i, label))[0])


def cmd_sums(cfg: ExperimentConfig) -> list[ResultRow]:
    t0 = time.perf_counter()
    tables = tables_for(cfg.beta, cfg.table_horizon, cfg.cache_dir)
    theta = theta_rho(cfg.beta, 1.0, tables.qF2)
    m = cfg.m or default_truncation(cfg.n, cfg.alpha, cfg.beta, "macroscopic")
    s = run_replications(_sum_worker, (_series(cfg, m), cfg.seed, "sums"), range(cfg.reps), cfg.parallelism)
    lim = run_replications(_limit_worker, (theta, cfg.alpha, tables.qF2, cfg.seed, "limit"), range(cfg.reps), cfg.parallelism)
    r = est.ks_two_sample(s, lim, seed=cfg.seed)
    r.extra["m"] = m
    r.extra["median_sum"] = float(np.median(s))
    r.extra["median_limit"] = float(np.median(lim))
    return _rows(cfg, [r], t0)


def _marginal_worker(n, alpha, beta, m, seed, label, chunks, i):
    _, size = chunks[i]
    x = sample_marginal(n, alpha, make_renewal_law(beta), m, size, stream(seed, i, label))
    return int((x > scaling_b(n, alpha)).sum())


def marginal_truncation(n: int, beta: float) -> int:
    """Single-site truncation: the mesoscopic window with block length 1 is
    ``w_n / log n << m << w_n log n``; its geometric mean is ``w_n``."""
    return max(8, round(make_renewal_law(beta).w(n)))


def cmd_marginal(cfg: ExperimentConfig) -> list[ResultRow]:
    """``n P(X_1 > b_n)`` from the exact single-site sampler."""
    t0 = time.perf_counter()
    m = cfg.m or marginal_truncation(cfg.n, cfg.beta)
    chunks = _chunks(cfg.reps, 200_000)
    res = run_replications(_marginal_worker, (cfg.n, cfg.alpha, cfg.beta, m, cfg.seed, "marginal", chunks),
                           range(len(chunks)), cfg.parallelism)
    p = sum(res) / cfg.reps
    rec = est.EstimateRecord("marginal_tail", cfg.n * p, cfg.n * math.sqrt(p * (1 - p) / cfg.reps), cfg.reps,
                             target=1.0, target_provenance="n P(X_0 > b_n) -> 1", seed=cfg.seed,
                             extra={"m": m, "exceedances": int(sum(res))})
    return _rows(cfg, [rec], t0)


DISPATCH = {
    "constants": cmd_constants,
    "phase-sweep": cmd_phase_sweep,
    "macro": cmd_macro,
    "tailproc": cmd_tailproc,
    "hitprob": cmd_hitprob,
    "ac": cmd_ac,
    "sums": cmd_sums,
    "marginal": cmd_marginal,
}


def path_specs(cfg: ExperimentConfig) -> list[tuple[str, SeriesConfig]]:
    """``(stream label, series)`` for every family of paths a command simulates."""
    c = cfg.command
    if c == "phase-sweep":
        if cfg.m is not None:
            return [("sweep", _series(cfg, cfg.m))]
        return [
            (f"sweep-{rho!r}", _series(cfg, default_truncation(cfg.n, cfg.alpha, cfg.beta, "mesoscopic", rho), mode="mesoscopic", rho=rho))
            for rho in cfg.rho
        ]
    if c == "macro":
        return [
            (f"macro-{n}", _series(cfg, cfg.m or default_truncation(n, cfg.alpha, cfg.beta, "macroscopic"), n=n))
            for n in sorted(set(cfg.n_list) | {cfg.n})
        ]
    if c == "ac":
        rho = cfg.rho[0] if len(cfg.rho) == 1 else 0.5
        m = cfg.m or default_truncation(cfg.n, cfg.alpha, cfg.beta, "mesoscopic", rho)
        return [("ac", _series(cfg, m, mode="mesoscopic", rho=rho))]
    if c == "sums":
        return [("sums", _series(cfg, cfg.m or default_truncation(cfg.n, cfg.alpha, cfg.beta, "macroscopic")))]
    return []


def run(cfg: ExperimentConfig) -> list[ResultRow]:
    cfg.validate()
    return DISPATCH[cfg.command](cfg)
