"""Reductions over replications: block exceedance rates, running maxima,
clusters of exceedances, tail-process functionals and exact oracles."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import ParameterError
from .process import PathSample
from .renewal import RenewalLaw, RenewalTables, sample_window_sets

CSV_COLUMNS = (
    "name",
    "rho",
    "y",
    "estimate",
    "se",
    "clustered_se",
    "target",
    "target_provenance",
    "z",
    "count",
    "seed",
)


@dataclass(frozen=True)
class BlockScheme:
    n: int
    rho: float
    d: int
    k: int

    def blocks(self, x: np.ndarray) -> np.ndarray:
        """``(k, d)`` view of the first ``k*d`` entries of ``x``."""
        return np.asarray(x)[: self.k * self.d].reshape(self.k, self.d)


def make_block_scheme(n: int, rho: float) -> BlockScheme:
    """Blocks of length ``floor(n**rho)``."""
    if n < 4:
        raise ParameterError("n must be >= 4")
    if not (0.0 < rho <= 1.0):
        raise ParameterError(f"rho must lie in (0, 1], got {rho}")
    d = math.floor(n**rho * (1 + 1e-12))
    if d < 2:
        raise ParameterError(f"block length floor(n**rho) = {d} is below 2")
    return BlockScheme(n=n, rho=rho, d=d, k=n // d)


def macro_block_scheme(n: int) -> BlockScheme:
    """Blocks of length ``floor(n / log n)`` (``d = o(n)``, ``log d / log n -> 1``)."""
    d = math.floor(n / math.log(n))
    return BlockScheme(n=n, rho=1.0, d=d, k=n // d)


@dataclass
class EstimateRecord:
    name: str
    estimate: float
    se: float
    count: int
    target: float = float("nan")
    target_provenance: str = ""
    clustered_se: float = float("nan")
    rho: float = float("nan")
    y: float = float("nan")
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.se < 0 or (self.clustered_se == self.clustered_se and self.clustered_se < 0):
            raise ValueError("standard errors must be nonnegative")
        if self.count < 1:
            raise ValueError("count must be >= 1")

    @property
    def z(self) -> float:
        se = self.clustered_se if self.clustered_se == self.clustered_se else self.se
        if not se > 0:
            return float("nan")
        return float((self.estimate - self.target) / se)

    def as_row(self) -> dict:
        row = {k: getattr(self, k) for k in CSV_COLUMNS}
        row["z"] = self.z
        return row


# -- block maxima ------------------------------------------------------------


def _as_array(path) -> np.ndarray:
    return path.x if isinstance(path, PathSample) else np.asarray(path)


def block_maxima(paths: Iterable, scheme: BlockScheme) -> np.ndarray:
    """``(reps, k)`` array of per-block maxima."""
    return np.stack([scheme.blocks(_as_array(p)).max(axis=1) for p in paths])


def block_exceedance_rate(
    paths,
    scheme: BlockScheme,
    b: float,
    y: float = 1.0,
    target: float = float("nan"),
    provenance: str = "",
    seed: int | None = None,
) -> EstimateRecord:
    """Estimate ``k_n P(max over a block > b*y)`` from every block of every path.

    ``paths`` is either an iterable of paths or a precomputed ``(reps, k)``
    array of block maxima.  The naive standard error treats blocks as
    independent Bernoulli trials; the clustered one uses per-path counts.
    """
    maxima = paths if isinstance(paths, np.ndarray) and paths.ndim == 2 else block_maxima(paths, scheme)
    per_path = (maxima > b * y).sum(axis=1)
    return block_exceedance_from_counts(per_path, scheme, y, target, provenance, seed)


def block_exceedance_from_counts(
    per_path,
    scheme: BlockScheme,
    y: float = 1.0,
    target: float = float("nan"),
    provenance: str = "",
    seed: int | None = None,
) -> EstimateRecord:
    """Same estimate from per-path counts of exceeding blocks."""
    per_path = np.asarray(per_path, dtype=float)
    reps, k = len(per_path), scheme.k
    total = int(per_path.sum())
    p = total / (reps * k)
    se = k * math.sqrt(p * (1 - p) / (reps * k))
    cse = float(per_path.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
    rec = EstimateRecord(
        name="block_exceedance_rate",
        estimate=k * p,
        se=se,
        clustered_se=cse,
        count=reps,
        target=target,
        target_provenance=provenance,
        rho=scheme.rho,
        y=y,
        seed=seed,
        extra={"d": scheme.d, "k": k, "exceedances": total},
    )
    if total == 0:
        rec.extra["degenerate"] = True
    return rec


def running_max_cdf(
    maxima: Sequence[float], b: float, alpha: float, theta: float, x_grid: Sequence[float], seed: int | None = None
) -> list[EstimateRecord]:
    """Empirical ``P(max_k X_k <= b x)`` against ``exp(-theta x**-alpha)``."""
    maxima = np.asarray(maxima, dtype=float)
    reps = len(maxima)
    out = []
    for x in x_grid:
        p = float((maxima <= b * x).mean())
        out.append(
            EstimateRecord(
                name="running_max_cdf",
                estimate=p,
                se=math.sqrt(p * (1 - p) / reps),
                count=reps,
                target=math.exp(-theta * x**-alpha),
                target_provenance="exp(-theta x^-alpha), theta=(1-2beta)qF2",
                y=x,
                seed=seed,
            )
        )
    return out


# -- clusters ----------------------------------------------------------------


@dataclass
class ClusterRecord:
    block: int
    times: np.ndarray
    values: np.ndarray

    @property
    def maximum(self) -> float:
        return float(self.values.max())

    @property
    def flatness(self) -> float:
        return float(self.values.min() / self.values.max())

    @property
    def size(self) -> int:
        return len(self.times)


def extract_clusters(path, scheme: BlockScheme, threshold: float) -> list[ClusterRecord]:
    """Exceedances of ``threshold`` grouped by block, shifted so the first is at 0."""
    if threshold <= 0:
        raise ParameterError("threshold must be positive")
    blocks = scheme.blocks(_as_array(path))
    out = []
    for j in np.flatnonzero(blocks.max(axis=1) > threshold):
        row = blocks[j]
        t = np.flatnonzero(row > threshold)
        out.append(ClusterRecord(block=int(j), times=t - t[0], values=row[t]))
    return out


def pooled_chi2(observed: np.ndarray, probs: np.ndarray, min_expected: float = 5.0):
    """Chi-square statistic after merging tail cells until each expects >= ``min_expected``.

    ``probs`` must sum to one (the last cell is the upper tail).  Cells are
    merged from the right.  Returns ``(stat, dof, p_value)``.
    """
    observed = np.asarray(observed, dtype=float)
    total = observed.sum()
    expected = np.asarray(probs, dtype=float) * total
    obs, exp = list(observed), list(expected)
    while len(exp) > 1 and exp[-1] < min_expected:
        e, o = exp.pop(), obs.pop()
        exp[-1] += e
        obs[-1] += o
    obs, exp = np.array(obs), np.array(exp)
    stat = float(((obs - exp) ** 2 / exp).sum())
    dof = len(obs) - 1
    return stat, dof, float(stats.chi2.sf(stat, dof)) if dof > 0 else 1.0


def geometric_probs(q: float, kmax: int) -> np.ndarray:
    """``P(G = k)`` for ``k = 1..kmax-1`` and ``P(G >= kmax)`` in the last cell."""
    k = np.arange(1, kmax)
    p = q * (1 - q) ** (k - 1)
    return np.append(p, (1 - q) ** (kmax - 1))


def _value_counts(values: np.ndarray, kmax: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    c = np.bincount(np.minimum(values, kmax), minlength=kmax + 1)
    return c[1:]


def geometric_gof(sizes, q: float, name: str = "geometric_gof", seed: int | None = None) -> EstimateRecord:
    """Chi-square fit of positive integer ``sizes`` to Geometric(q) on ``{1,2,...}``."""
    sizes = np.asarray(sizes, dtype=np.int64)
    if (sizes < 1).any():
        raise ValueError("sizes must be >= 1")
    kmax = int(sizes.max()) + 1
    stat, dof, p = pooled_chi2(_value_counts(sizes, kmax), geometric_probs(q, kmax))
    mean = float(sizes.mean())
    return EstimateRecord(
        name=name,
        estimate=mean,
        se=float(sizes.std(ddof=1) / math.sqrt(len(sizes))) if len(sizes) > 1 else 0.0,
        count=len(sizes),
        target=1.0 / q,
        target_provenance="mean of Geometric(qF2) = 1/qF2",
        seed=seed,
        extra={"chi2": stat, "dof": dof, "p_value": p},
    )


def flatness_median(clusters: Sequence[ClusterRecord], min_size: int = 2) -> float:
    """Median flatness over clusters with at least ``min_size`` exceedances.

    Single-exceedance clusters have flatness exactly 1, so they are excluded by
    default; they would pin the median at 1 whenever they form the majority.
    """
    vals = [c.flatness for c in clusters if c.size >= min_size]
    return float(np.median(vals)) if vals else float("nan")


def poisson_dispersion(counts, theta: float, seed: int | None = None) -> EstimateRecord:
    """Dispersion tests of ``counts`` for a Poisson law with target mean ``theta``.

    ``D = sum (c - mean)^2 / mean`` is compared to chi-square with ``N - 1``
    degrees of freedom, two-sided (``p_value``).  The known-mean version
    ``D0 = sum (c - theta)^2 / theta`` against chi-square with ``N`` degrees of
    freedom (``p_value_known_mean``) also rejects a wrong mean.
    """
    c = np.asarray(counts, dtype=float)
    N = len(c)
    mean = c.mean()
    if mean > 0:
        D = float(((c - mean) ** 2).sum() / mean)
        p = float(2 * min(stats.chi2.cdf(D, N - 1), stats.chi2.sf(D, N - 1)))
    else:
        D, p = float("nan"), float("nan")
    D0 = float(((c - theta) ** 2).sum() / theta)
    p0 = float(2 * min(stats.chi2.cdf(D0, N), stats.chi2.sf(D0, N)))
    return EstimateRecord(
        name="poisson_block_counts",
        estimate=float(mean),
        se=math.sqrt(mean / N) if mean > 0 else 0.0,
        count=N,
        target=theta,
        target_provenance="Poisson(theta), theta=(1-2beta)qF2",
        seed=seed,
        extra={
            "dispersion": D / (N - 1) if D == D else D,
            "p_value": p,
            "dispersion_known_mean": D0 / N,
            "p_value_known_mean": p0,
        },
    )


# -- tail process ------------------------------------------------------------


def candidate_index_estimate(counts, tables: RenewalTables, L: int, seed: int | None = None) -> EstimateRecord:
    """Fraction of tail samples with no common renewal in ``{1..L}``.

    Because the tail process is 0/1-valued with ``Theta_0 = 1``, this is
    ``E(sup_{k>=0} Theta_k^a - sup_{k>=1} Theta_k^a)`` truncated at ``L``.  The
    truncation can only raise the estimate, by at most ``sum_{k>L} u(k)^2``.
    """
    counts = np.asarray(counts)
    p = float((counts == 1).mean())
    N = len(counts)
    return EstimateRecord(
        name="candidate_extremal_index",
        estimate=p,
        se=math.sqrt(p * (1 - p) / N),
        count=N,
        target=tables.qF2,
        target_provenance="qF2 from renewal tables",
        seed=seed,
        extra={"bias_bound": tables.v_residual(L), "L": L},
    )


def two_sided_probs(q: float, kmax: int) -> np.ndarray:
    """``P(N = m) = m (1-q)^{m-1} q^2`` for ``m < kmax`` and the upper tail at ``kmax``."""
    m = np.arange(1, kmax)
    p = m * (1 - q) ** (m - 1) * q * q
    # P(N >= kmax) = (1-q)^{kmax-1} (1 + (kmax-1) q)
    return np.append(p, (1 - q) ** (kmax - 1) * (1 + (kmax - 1) * q))


def two_sided_count_identity(counts, q: float, seed: int | None = None) -> EstimateRecord:
    """Chi-square of two-sided cluster sizes against ``m (1-q)^{m-1} q^2``."""
    counts = np.asarray(counts, dtype=np.int64)
    kmax = int(counts.max()) + 1
    stat, dof, p = pooled_chi2(_value_counts(counts, kmax), two_sided_probs(q, kmax))
    return EstimateRecord(
        name="two_sided_count_identity",
        estimate=float(counts.mean()),
        se=float(counts.std(ddof=1) / math.sqrt(len(counts))),
        count=len(counts),
        target=2.0 / q - 1.0,
        target_provenance="E N = 2/q - 1 for N = G + G' - 1",
        seed=seed,
        extra={"chi2": stat, "dof": dof, "p_value": p},
    )


# -- exact oracles -----------------------------------------------------------


def finite_block_constant(tables: RenewalTables, d: int) -> float:
    """``sum_{j<d} P(Theta_1 = ... = Theta_j = 0) = sum_{j<d} Fbar*(j)``."""
    if not (1 <= d <= tables.horizon + 1):
        raise ParameterError(f"d must lie in [1, {tables.horizon + 1}]")
    return float(tables.fbar_star[:d].sum())


def pair_hit_exact(tables: RenewalTables, n: int, d: int) -> float:
    """``P(R_{n,1} ∩ R_{n,2} ∩ {1..d} != {})`` computed by last-entrance decomposition."""
    w = tables.law.w(n)
    return finite_block_constant(tables, d) / (w * w)


def hit_probability_check(
    law: RenewalLaw,
    tables: RenewalTables,
    n: int,
    d: int,
    reps: int,
    rng: np.random.Generator,
    batch: int = 200_000,
    seed: int | None = None,
) -> tuple[EstimateRecord, EstimateRecord]:
    """Monte Carlo hit probabilities of ``{1..d}`` by one window set and by a pair.

    The single-set record targets the asymptote ``C_F d^{1-beta} / w_n`` (its
    exact value ``w_d / w_n`` is kept in ``extra``); the pair record targets the
    exact ``sum_{k<d} Fbar*(k) / w_n^2`` with the asymptote ``qF2 d / w_n^2``
    in ``extra``.
    """
    if d > n:
        raise ParameterError("d must not exceed n")
    single = 0
    pair = 0
    for lo in range(0, reps, batch):
        b = min(batch, reps - lo)
        o1, p1 = sample_window_sets(law, n, d, b, rng)
        o2, p2 = sample_window_sets(law, n, d, b, rng)
        single += len(np.unique(o1))
        common = np.intersect1d(o1 * (d + 1) + p1, o2 * (d + 1) + p2, assume_unique=True)
        pair += len(np.unique(common // (d + 1)))
    w = law.w(n)
    ps, pp = single / reps, pair / reps
    exact_pair = pair_hit_exact(tables, n, d)
    r1 = EstimateRecord(
        name="single_hit_probability",
        estimate=ps,
        se=math.sqrt(ps * (1 - ps) / reps),
        count=reps,
        target=law.c_f * d ** (1 - law.beta) / w,
        target_provenance="asymptote C_F d^(1-beta)/w_n",
        seed=seed,
        extra={"exact": law.w(d) / w, "d": d, "n": n},
    )
    r2 = EstimateRecord(
        name="pair_hit_probability",
        estimate=pp,
        se=math.sqrt(pp * (1 - pp) / reps),
        count=reps,
        target=exact_pair,
        target_provenance="exact sum_{k<d} Fbar*(k) / w_n^2",
        seed=seed,
        extra={"asymptote": tables.qF2 * d / (w * w), "d": d, "n": n},
    )
    return r1, r2


# -- anticlustering ----------------------------------------------------------


def anticlustering_counts(x: np.ndarray, m_lag: int, d: int, b: float, x_level: float, y_level: float) -> tuple[int, int]:
    """Events ``X_k > b*y`` (with ``k + d - 1`` inside the path) and how many of
    them see ``max_{m_lag <= j < d} X_{k+j} > b*x``."""
    x = np.asarray(x)
    last = len(x) - d
    events = np.flatnonzero(x[: last + 1] > b * y_level)
    hits = 0
    for k in events:
        win = x[k + m_lag : k + d]
        if len(win) and win.max() > b * x_level:
            hits += 1
    return len(events), hits


def anticlustering_profile(
    paths, m_lag: int, scheme: BlockScheme, b: float, x: float = 1.0, y: float = 1.0, seed: int | None = None
) -> EstimateRecord:
    """Estimate ``P(max_{m_lag <= j < d} X_j > b x | X_0 > b y)`` from one-sided windows.

    Pairs of per-path counts ``(events, hits)`` may be passed instead of paths.
    The window is half-open so ``m_lag = d`` gives an empty window.
    """
    if m_lag > scheme.d:
        raise ParameterError("m_lag must not exceed the block length")
    pairs = []
    for p in paths:
        if isinstance(p, tuple):
            pairs.append(p)
        else:
            pairs.append(anticlustering_counts(_as_array(p), m_lag, scheme.d, b, x, y))
    ev = np.array([e for e, _ in pairs], dtype=float)
    hi = np.array([h for _, h in pairs], dtype=float)
    E = ev.sum()
    if E == 0:
        return EstimateRecord(
            name="anticlustering_profile", estimate=0.0, se=0.0, count=max(len(pairs), 1),
            rho=scheme.rho, y=y, seed=seed, extra={"low_power": True, "events": 0, "m_lag": m_lag},
        )
    r = hi.sum() / E
    P = len(pairs)
    # ratio estimator, clustered by path
    cse = float(math.sqrt(((hi - r * ev) ** 2).sum() * P / max(P - 1, 1)) / E)
    return EstimateRecord(
        name="anticlustering_profile",
        estimate=float(r),
        se=math.sqrt(r * (1 - r) / E),
        clustered_se=cse,
        count=P,
        target=0.0,
        target_provenance="0 under AC(d_n, b_n)",
        rho=scheme.rho,
        y=y,
        seed=seed,
        extra={"events": int(E), "hits": int(hi.sum()), "m_lag": m_lag, "low_power": E < 30},
    )


def ks_two_sample(a, b, name: str = "partial_sum_ks", seed: int | None = None) -> EstimateRecord:
    res = stats.ks_2samp(a, b)
    return EstimateRecord(
        name=name,
        estimate=float(res.statistic),
        se=0.0,
        count=min(len(a), len(b)),
        target=0.0,
        target_provenance="KS distance between S_n(1) and the limit series",
        seed=seed,
        extra={"p_value": float(res.pvalue)},
    )


def record_dict(rec: EstimateRecord) -> dict:
    d = asdict(rec)
    d["z"] = rec.z
    return d
