"""Samplers for the truncated double-stable series, its tail process and the
limiting marked point process.

A path on ``{1..n}`` is built from ``m`` i.i.d. window sets ``R_{n,i}`` and the
first ``m`` arrivals ``Gamma_i`` of a unit Poisson process::

    X[k] = w_n**(2/alpha) * sum_{i<j<=m} (Gamma_i Gamma_j)**(-1/alpha) 1{k in R_i, k in R_j}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .renewal import RenewalLaw, RenewalTables, intersect_sorted, sample_window_sets, scaling_b

MIN_TRUNCATION = 8


@dataclass(frozen=True)
class SeriesConfig:
    n: int
    alpha: float
    law: RenewalLaw
    m: int
    seed: int = 0
    mode: str = "macroscopic"
    rho: float | None = None
    tables: RenewalTables | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 2:
            raise ParameterError("n must be >= 2")
        if self.m < 2:
            raise ParameterError("truncation m must be >= 2")
        if not (0.0 < self.alpha < 1.0):
            raise ParameterError("alpha must lie in (0, 1)")
        if self.mode not in ("macroscopic", "mesoscopic"):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.mode == "mesoscopic" and not (self.rho is not None and 0.0 < self.rho <= 1.0):
            raise ParameterError("mesoscopic mode needs rho in (0, 1]")

    @property
    def w(self) -> float:
        return self.law.w(self.n)


@dataclass
class PathSample:
    x: np.ndarray
    gamma: np.ndarray
    contributing_pairs: list[tuple[int, int, np.ndarray]] | None = None


@dataclass
class TailProcessSample:
    L: int
    common: np.ndarray
    negative: np.ndarray | None = None

    @property
    def count(self) -> int:
        n = len(self.common)
        if self.negative is not None:
            n += len(self.negative) - 1
        return n


@dataclass
class LimitProcessSample:
    heights: np.ndarray
    marks: np.ndarray
    locations: np.ndarray


def default_truncation(n: int, alpha: float, beta: float, mode: str = "macroscopic", rho: float | None = None) -> int:
    """Geometric mean of the admissible truncation window.

    Macroscopic: ``w^2 / (n log^{1/(1-alpha)} n) << m << w^2 log n / n``.
    Mesoscopic with ``d = floor(n**rho)``: ``w / (d^beta log n) << m << w log n / d^beta``.
    """
    w = RenewalLaw(beta).w(n)
    ln = math.log(n)
    if mode == "macroscopic":
        lo = w * w / (n * ln ** (1.0 / (1.0 - alpha)))
        hi = w * w * ln / n
    elif mode == "mesoscopic":
        if rho is None:
            raise ParameterError("mesoscopic truncation needs rho")
        d = math.floor(n**rho)
        lo = w / (d**beta * ln)
        hi = w * ln / d**beta
    else:
        raise ParameterError(f"unknown mode {mode!r}")
    return max(MIN_TRUNCATION, round(math.sqrt(lo * hi)))


def arrival_times(m: int, rng: np.random.Generator) -> np.ndarray:
    return np.cumsum(rng.standard_exponential(m + 1))


def _pair_sums(times: np.ndarray, owner: np.ndarray, log_a: np.ndarray, n: int) -> np.ndarray:
    """``out[t-1] = sum_{i<j} a_i a_j`` over owners sharing time ``t``.

    ``log_a`` must be decreasing in the owner index.  Terms are accumulated as
    ``a_0 a_p * sum_{q<p} a_q / a_0`` within each time group, so no cancellation
    occurs and a lone owner contributes exactly zero.
    """
    out = np.zeros(n)
    if len(times) < 2:
        return out
    order = np.lexsort((owner, times))
    t = times[order]
    la = log_a[owner[order]]
    new = np.empty(len(t), dtype=bool)
    new[0] = True
    np.not_equal(t[1:], t[:-1], out=new[1:])
    gid = np.cumsum(new) - 1
    starts = np.flatnonzero(new)
    size = np.diff(np.append(starts, len(t)))
    multi = size[gid] >= 2
    if not multi.any():
        return out
    t, la, gid = t[multi], la[multi], gid[multi]
    new = new[multi]
    starts = np.flatnonzero(new)
    la0 = la[starts][np.cumsum(new) - 1]
    rel = np.exp(la - la0)
    csum = np.cumsum(rel)
    base = np.repeat(csum[starts] - rel[starts], np.diff(np.append(starts, len(t))))
    before = csum - rel - base  # sum of rel strictly earlier in the group
    contrib = np.exp(la0 + la) * before
    np.add.at(out, t - 1, np.where(new, 0.0, contrib))
    return out


def simulate_path(config: SeriesConfig, rng: np.random.Generator, keep_pairs: bool = False) -> PathSample:
    """One draw of the truncated series on ``{1..n}``."""
    n, m, alpha = config.n, config.m, config.alpha
    gamma = arrival_times(m, rng)
    owner, pts = sample_window_sets(config.law, n, n, m, rng)
    # a_i = w^{1/alpha} Gamma_i^{-1/alpha}, kept in logs
    log_a = (math.log(config.w) - np.log(gamma[:m])) / alpha
    x = _pair_sums(pts, owner, log_a, n)
    pairs = None
    if keep_pairs:
        pairs = _contributing_pairs(owner, pts)
    return PathSample(x=x, gamma=gamma, contributing_pairs=pairs)


def _contributing_pairs(owner: np.ndarray, pts: np.ndarray) -> list[tuple[int, int, np.ndarray]]:
    bounds = np.searchsorted(owner, np.arange(owner.max() + 2 if len(owner) else 1))
    sets = {i: pts[bounds[i] : bounds[i + 1]] for i in np.unique(owner)}
    # only owners sharing some time can intersect
    order = np.lexsort((owner, pts))
    t, o = pts[order], owner[order]
    shared = set()
    for grp in np.split(o, np.flatnonzero(np.diff(t)) + 1):
        g = list(grp)
        for a in range(len(g)):
            for b in range(a + 1, len(g)):
                shared.add((int(g[a]), int(g[b])))
    return [(i, j, intersect_sorted(sets[i], sets[j])) for i, j in sorted(shared)]


def sample_marginal(n: int, alpha: float, law: RenewalLaw, m: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draws of ``X[k]`` for a single ``k`` in ``{1..n}``.

    Each window set contains ``k`` independently with probability ``1/w_n``,
    so the owners containing ``k`` are a Bernoulli thinning of ``1..m`` with
    geometric index gaps, and ``Gamma`` at consecutive selected indices
    differs by a Gamma(gap) variable.
    """
    w = law.w(n)
    p = 1.0 / w
    logw = math.log(w)
    x = np.zeros(size)
    la0 = np.full(size, np.nan)  # log a of the first selected owner
    rel = np.zeros(size)  # sum of a_q / a_0 over selected owners so far
    idx = np.zeros(size, dtype=np.int64)
    gam = np.zeros(size)
    live = np.arange(size)
    while len(live):
        gap = rng.geometric(p, len(live))
        idx_l = idx[live] + gap
        keep = idx_l <= m
        live, gap, idx_l = live[keep], gap[keep], idx_l[keep]
        if not len(live):
            break
        g = gam[live] + rng.standard_gamma(gap.astype(float))
        idx[live] = idx_l
        gam[live] = g
        la = (logw - np.log(g)) / alpha
        first = np.isnan(la0[live])
        la0[live[first]] = la[first]
        x[live] += np.where(first, 0.0, np.exp(la0[live] + la) * rel[live])
        rel[live] += np.exp(la - la0[live])
    return x


def sample_tail_counts(law: RenewalLaw, L: int, size: int, rng: np.random.Generator, batch: int = 20000) -> np.ndarray:
    """``|tau1 ∩ tau2 ∩ {0..L}|`` for ``size`` independent pairs of renewals from 0."""
    out = np.empty(size, dtype=np.int64)
    for lo in range(0, size, batch):
        b = min(batch, size - lo)
        keys = []
        for _ in range(2):
            owner, pts = _renewals_from_zero(law, L, b, rng)
            keys.append(owner * (L + 1) + pts)
        common = np.intersect1d(keys[0], keys[1], assume_unique=True)
        out[lo : lo + b] = np.bincount(common // (L + 1), minlength=b)
    return out


def _renewals_from_zero(law: RenewalLaw, L: int, count: int, rng: np.random.Generator):
    owners = [np.arange(count, dtype=np.int64)]
    points = [np.zeros(count, dtype=np.int64)]
    ids, pos = owners[0], points[0]
    cap = float(L + 1)
    while len(ids):
        pos = pos + law.sample(rng, len(ids), cap=cap)
        keep = pos <= L
        ids, pos = ids[keep], pos[keep]
        owners.append(ids)
        points.append(pos)
    return np.concatenate(owners), np.concatenate(points)


def sample_tail_process(law: RenewalLaw, L: int, rng: np.random.Generator) -> TailProcessSample:
    """Common renewal times in ``{0..L}`` of two independent renewals from 0."""
    from .renewal import sample_renewal_path

    a = sample_renewal_path(law, 0, L, rng)
    b = sample_renewal_path(law, 0, L, rng)
    return TailProcessSample(L=L, common=intersect_sorted(a, b))


def sample_two_sided_tail(law: RenewalLaw, L: int, rng: np.random.Generator) -> TailProcessSample:
    """Two independent one-sided clusters glued at the origin.

    ``negative`` holds ``-k`` for the left cluster, so it contains 0 as well and
    the total count is ``len(common) + len(negative) - 1``.
    """
    right = sample_tail_process(law, L, rng)
    left = sample_tail_process(law, L, rng)
    return TailProcessSample(L=L, common=right.common, negative=-left.common[::-1])


def sample_two_sided_counts(law: RenewalLaw, L: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return sample_tail_counts(law, L, size, rng) + sample_tail_counts(law, L, size, rng) - 1


def sample_limit_point_process(theta: float, alpha: float, qF2: float, M: int, rng: np.random.Generator) -> LimitProcessSample:
    """First ``M`` points of ``sum_l delta(G_l (Gamma_l/theta)^{-1/alpha}, U_l)``.

    Heights are ``(Gamma_l / theta)^{-1/alpha}``; the geometric marks ``G_l``
    are the cluster sizes that multiply them in partial sums.
    """
    if M < 1:
        raise ParameterError("M must be >= 1")
    gam = np.cumsum(rng.standard_exponential(M))
    return LimitProcessSample(
        heights=(gam / theta) ** (-1.0 / alpha),
        marks=rng.geometric(qF2, M),
        locations=rng.random(M),
    )


def sample_limit_sums(theta: float, alpha: float, qF2: float, size: int, rng: np.random.Generator, M: int = 2000) -> np.ndarray:
    """Draws of ``theta^{1/alpha} sum_l G_l Gamma_l^{-1/alpha}`` truncated at ``M`` terms,
    plus the mean of the omitted terms."""
    out = np.empty(size)
    for i in range(size):
        lp = sample_limit_point_process(theta, alpha, qF2, M, rng)
        out[i] = np.dot(lp.marks, lp.heights)
    # E sum_{l>M} G_l (Gamma_l/theta)^{-1/alpha} ~ theta^{1/alpha} / q * M^{1-1/alpha} / (1/alpha - 1)
    out += theta ** (1.0 / alpha) / qF2 * M ** (1.0 - 1.0 / alpha) / (1.0 / alpha - 1.0)
    return out


def partial_sum(path, alpha: float, n: int | None = None) -> float:
    """``sum_k x_k / b_n``."""
    x = path.x if isinstance(path, PathSample) else np.asarray(path)
    n = len(x) if n is None else n
    return float(x[:n].sum() / scaling_b(n, alpha))
