"""Discrete heavy-tailed renewal processes and their two-fold intersection.

The default inter-renewal law has survival function ``Fbar(k) = (1 + k)**-beta``
on ``k >= 0``, so ``P(T > k) ~ k**-beta`` with unit constant and ``T >= 1``.

All tables are exact recursions in double precision; the only analytic input
is the power-law tail correction used for the intersection constant ``qF2``.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import special

from .errors import NumericalError, ParameterError

log = logging.getLogger(__name__)

NEGATIVITY_TOL = 1e-12
_LEAF = 64
W_EXACT_LIMIT = 10**7


@dataclass(frozen=True)
class RenewalLaw:
    """Inter-renewal law with ``Fbar(k) = (1 + k)**-beta``."""

    beta: float
    c_f: float = 1.0

    def tail(self, k):
        """``P(T > k)``; equals 1 for ``k <= 0``."""
        k = np.asarray(k, dtype=float)
        return np.where(k <= 0, 1.0, np.power(1.0 + np.maximum(k, 0.0), -self.beta))

    def cdf(self, k):
        return 1.0 - self.tail(k)

    def pmf(self, k):
        """``P(T = k) = Fbar(k - 1) - Fbar(k)``, zero for ``k < 1``."""
        k = np.asarray(k, dtype=float)
        kk = np.maximum(k, 1.0)
        # Fbar(k) ((1 + 1/k)**beta - 1), free of cancellation for large k
        return np.where(k >= 1, self.tail(kk) * np.expm1(self.beta * np.log1p(1.0 / kk)), 0.0)

    @property
    def hazard_bound(self) -> float:
        # k f(k) / Fbar(k) = k((1 + 1/k)**beta - 1) <= beta by Bernoulli's inequality
        return self.beta

    def partial_tail_sums(self, n: int) -> np.ndarray:
        """Array ``w`` of length ``n + 1`` with ``w[j] = sum_{k<j} Fbar(k)``."""
        return _partial_tail_sums(self.beta, int(n))

    def w(self, n: int) -> float:
        """``sum_{k<n} Fbar(k)``; Euler-Maclaurin beyond ``W_EXACT_LIMIT``."""
        if n > W_EXACT_LIMIT:
            b = self.beta
            return float(special.zeta(b) + n ** (1 - b) / (1 - b) + 0.5 * n**-b - b * n ** (-b - 1) / 12)
        return float(self.partial_tail_sums(n)[n])

    def sample(self, rng: np.random.Generator, size=None, cap: float = 2.0**62):
        """Exact inverse-CDF draws of ``T``.

        ``T`` is the smallest ``t >= 1`` with ``F(t) >= U``, which for this
        family is ``ceil(V**(-1/beta)) - 1`` (clamped to 1) with ``V = 1 - U``.
        Draws beyond ``cap`` are clipped to ``cap``; callers pass a cap that
        carries any position past the horizon they look at.
        """
        v = 1.0 - rng.random(size)
        t = np.ceil(np.minimum(np.power(v, -1.0 / self.beta), cap + 1.0)) - 1.0
        return np.maximum(t, 1.0).astype(np.int64)


@functools.lru_cache(maxsize=16)
def _partial_tail_sums(beta: float, n: int) -> np.ndarray:
    out = np.zeros(n + 1)
    out[1:] = np.cumsum(np.power(1.0 + np.arange(n, dtype=float), -beta))
    out.setflags(write=False)
    return out


def make_renewal_law(beta: float) -> RenewalLaw:
    if not (0.0 < beta < 0.5):
        raise ParameterError(f"beta must lie in (0, 1/2), got {beta}")
    return RenewalLaw(float(beta))


@dataclass(frozen=True)
class RenewalTables:
    """Exact renewal tables on ``0..horizon``.

    Attributes
    ----------
    u : renewal mass function, ``u[k] = P(k in tau)``.
    v : ``u**2``, renewal mass of the intersection of two independent copies.
    fstar : defective inter-arrival mass of the intersection (``fstar[0] = 0``).
    fbar_star : ``1 - cumsum(fstar)``; decreases to ``qF2``.
    w : ``w[n] = sum_{k<n} Fbar(k)``.
    qF2 : ``1 / sum_k v[k]`` with an analytic correction for ``k > horizon``.
    q_error : width of the bracket ``[q_lower, q_upper]`` that contains ``qF2``.
    """

    beta: float
    horizon: int
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    fstar: np.ndarray = field(repr=False)
    fbar_star: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    qF2: float
    q_error: float
    q_lower: float
    q_upper: float
    tail_correction: float
    asym_const: float

    @property
    def law(self) -> RenewalLaw:
        return RenewalLaw(self.beta)

    def v_residual(self, L: int) -> float:
        """Estimate of ``sum_{k > L} u(k)**2``."""
        if L < self.horizon:
            return float(self.v[L + 1 :].sum()) + self.tail_correction
        return _power_tail(self.asym_const, self.beta, L)


def _power_tail(asym_const: float, beta: float, L: float) -> float:
    # sum_{k>L} k**(2 beta - 2) <= int_L^inf x**(2 beta - 2) dx
    return asym_const**2 * L ** (2 * beta - 1) / (1 - 2 * beta)


def _online_solve(c: np.ndarray, g: np.ndarray, sign: float) -> np.ndarray:
    """Solve ``x[n] = c[n] + sign * sum_{k=1}^{n-1} g[n-k] x[k]`` for ``n >= 1``.

    Divide and conquer over index ranges with FFT convolutions for the
    cross-half contributions; ``O(N log^2 N)``.
    """
    N = len(c) - 1
    x = np.zeros(N + 1)
    acc = np.zeros(N + 1)

    def solve(lo: int, hi: int) -> None:
        if hi - lo <= _LEAF:
            for n in range(lo, hi):
                s = acc[n]
                if n > lo:
                    s += np.dot(x[lo:n], g[n - lo : 0 : -1])
                x[n] = c[n] + sign * s
            return
        mid = (lo + hi) // 2
        solve(lo, mid)
        conv = sfft.irfft(
            sfft.rfft(x[lo:mid], sfft.next_fast_len(hi - lo + mid - lo))
            * sfft.rfft(g[: hi - lo], sfft.next_fast_len(hi - lo + mid - lo)),
            sfft.next_fast_len(hi - lo + mid - lo),
        )
        acc[mid:hi] += conv[mid - lo : hi - lo]
        solve(mid, hi)

    solve(1, N + 1)
    return x


def build_tables(law: RenewalLaw, N: int = 10**6) -> RenewalTables:
    """Tabulate ``u``, ``v``, ``fstar``, ``fbar_star``, ``w`` and ``qF2`` up to ``N``."""
    if N < 2:
        raise ParameterError(f"table horizon must be >= 2, got {N}")
    beta = law.beta
    k = np.arange(N + 1, dtype=float)
    f = law.pmf(k)
    f[0] = 0.0

    # u(n) = f(n) u(0) + sum_{k=1}^{n-1} f(n-k) u(k)
    u = _online_solve(f, f, 1.0)
    u[0] = 1.0
    v = u * u
    # v(n) = sum_{k=1}^{n} fstar(k) v(n-k)  <=>  fstar(n) = v(n) - sum_{k=1}^{n-1} v(n-k) fstar(k)
    fstar = _online_solve(v, v, -1.0)
    fstar[0] = 0.0
    worst = fstar.min()
    if worst < -NEGATIVITY_TOL:
        raise NumericalError(f"intersection inter-arrival mass went negative ({worst:.3e})")
    if worst < 0:
        log.warning("clamping %d slightly negative fstar entries (min %.2e)", int((fstar < 0).sum()), worst)
        fstar = np.maximum(fstar, 0.0)
    fbar_star = 1.0 - np.cumsum(fstar)

    asym_const = 1.0 / (law.c_f * math.gamma(beta) * math.gamma(1.0 - beta))
    tail = _power_tail(asym_const, beta, N)
    total = float(v.sum())
    q = 1.0 / (total + tail)
    # q <= Fbar*(N) exactly; the lower end allows the tail to exceed its
    # asymptotic form by the squared ratio u(N) / asymptote observed at N.
    ratio = u[N] / (asym_const * N ** (beta - 1.0))
    q_upper = float(fbar_star[N])
    q_lower = 1.0 / (total + tail * max(1.0, ratio) ** 2 * (1.0 + 1.0 / N))
    q_err = q_upper - q_lower
    if not (0.0 < q < 1.0):
        raise NumericalError(f"qF2 out of (0, 1): {q}")

    w = law.partial_tail_sums(N).copy()
    for arr in (u, v, fstar, fbar_star, w):
        arr.setflags(write=False)
    return RenewalTables(
        beta=beta,
        horizon=N,
        u=u,
        v=v,
        fstar=fstar,
        fbar_star=fbar_star,
        w=w,
        qF2=q,
        q_error=q_err,
        q_lower=q_lower,
        q_upper=q_upper,
        tail_correction=tail,
        asym_const=asym_const,
    )


def asymptotic_u(tables: RenewalTables, n):
    """``n**(beta - 1) / (C_F Gamma(beta) Gamma(1 - beta))``."""
    return tables.asym_const * np.power(np.asarray(n, dtype=float), tables.beta - 1.0)


def theta_rho(beta: float, rho: float, qF2: float) -> float:
    """Mesoscopic extremal index ``(1 - 2 rho beta) qF2``."""
    if not (0.0 <= rho <= 1.0):
        raise ParameterError(f"rho must lie in [0, 1], got {rho}")
    return (1.0 - 2.0 * rho * beta) * qF2


def scaling_b(n: float, alpha: float) -> float:
    """Normalization ``((n log n) / 2)**(1/alpha)``."""
    if n <= 1:
        raise ParameterError(f"n must exceed 1, got {n}")
    if not (0.0 < alpha <= 1.0):
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    return (0.5 * n * math.log(n)) ** (1.0 / alpha)


def residual_horizon(tables: RenewalTables, frac: float = 1e-3) -> int:
    """Smallest ``L`` with ``sum_{k>L} u(k)**2 < frac * qF2``."""
    target = frac * tables.qF2
    if tables.tail_correction < target:
        tails = np.cumsum(tables.v[::-1])[::-1]  # tails[j] = sum_{k>=j} v
        res = np.append(tails[1:], 0.0) + tables.tail_correction
        return int(np.argmax(res < target))
    b = tables.beta
    L = (target * (1 - 2 * b) / tables.asym_const**2) ** (1.0 / (2 * b - 1))
    return int(math.ceil(L))


def sample_interarrival(law: RenewalLaw, rng: np.random.Generator, size=None):
    return law.sample(rng, size)


def sample_renewal_path(law: RenewalLaw, start: int, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Renewal times ``start, start + T1, ...`` that do not exceed ``horizon``."""
    if start > horizon:
        raise ParameterError("start must not exceed horizon")
    pts = [np.array([start], dtype=np.int64)]
    pos = start
    chunk = 16
    while True:
        steps = pos + np.cumsum(law.sample(rng, chunk, cap=horizon + 1))
        keep = steps[steps <= horizon]
        pts.append(keep)
        if len(keep) < chunk:
            break
        pos = int(steps[-1])
        chunk *= 2
    return np.concatenate(pts)


@dataclass(frozen=True)
class WindowSet:
    """A draw of the conditioned stationary renewal set ``R_n`` up to ``horizon``."""

    n: int
    horizon: int
    points: np.ndarray


def _first_points(w: np.ndarray, n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    # P(first = k) = Fbar(k - 1) / w_n on 1..n, i.e. CDF w_k / w_n
    target = rng.random(count) * w[n]
    return np.searchsorted(w[1 : n + 1], target, side="left").astype(np.int64) + 1


def sample_window_sets(
    law: RenewalLaw, n: int, horizon: int, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``count`` independent window sets at once.

    The first point has law ``P(first = k) = Fbar(k-1) / w_n`` on ``{1..n}``.
    This is the stationary-delay renewal (delay mass ``Fbar(d)``) conditioned
    to hit ``{1..n}``: a delay ``d >= 1`` puts the first point at ``d`` with
    mass ``Fbar(d)``, while delay 0 hits only through the next renewal, which
    lands at ``k`` with mass ``f(k)``.  ``Fbar(k) + f(k) = Fbar(k - 1)`` and the
    normalizer is ``F(n) + sum_{d=1}^n Fbar(d) = w_n``.

    Returns
    -------
    owner, points : int arrays
        ``points[owner == i]`` is the increasing point set of draw ``i``,
        truncated at ``horizon``.  A ``horizon`` below ``n`` is allowed; draws
        whose first point lies beyond it are then absent from ``owner``.
    """
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    w = law.partial_tail_sums(n)
    first = _first_points(w, n, count, rng)
    ids = np.arange(count, dtype=np.int64)
    if horizon < n:
        keep = first <= horizon
        ids, first = ids[keep], first[keep]
    owners = [ids]
    points = [first]
    pos = first
    cap = float(horizon + 1)
    while len(ids):
        pos = pos + law.sample(rng, len(ids), cap=cap)
        keep = pos <= horizon
        ids, pos = ids[keep], pos[keep]
        owners.append(ids)
        points.append(pos)
    owner = np.concatenate(owners)
    pts = np.concatenate(points)
    order = np.lexsort((pts, owner))
    return owner[order], pts[order]


def sample_window_set(
    law: RenewalLaw, tables: RenewalTables | None, n: int, horizon: int, rng: np.random.Generator
) -> WindowSet:
    if horizon < n:
        raise ParameterError("horizon must be >= n")
    _, pts = sample_window_sets(law, n, horizon, 1, rng)
    return WindowSet(n=n, horizon=horizon, points=pts)


def intersect_sorted(a, b) -> np.ndarray:
    """Intersection of two strictly increasing integer arrays."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    return np.intersect1d(a, b, assume_unique=True)


# -- persistence -----------------------------------------------------------

_HEADER_KEYS = ("beta", "horizon", "qF2", "q_error", "q_lower", "q_upper", "tail_correction", "asym_const")


def save_tables(tables: RenewalTables, path: str | Path) -> Path:
    """Write tables as ``.npz`` (binary) or ``.csv`` depending on the suffix.

    CSV layout: ``#``-prefixed ``key=value`` header lines, then columns
    ``k,u,v,fstar,Fbar_star``.
    """
    path = Path(path)
    meta = {k: getattr(tables, k) for k in _HEADER_KEYS}
    if path.suffix == ".csv":
        k = np.arange(tables.horizon + 1)
        cols = np.column_stack([k, tables.u, tables.v, tables.fstar, tables.fbar_star])
        header = "\n".join(f"{key}={val!r}" for key, val in meta.items()) + "\nk,u,v,fstar,Fbar_star"
        np.savetxt(path, cols, delimiter=",", header=header, fmt=["%d"] + ["%.17g"] * 4)
    else:
        np.savez(path, u=tables.u, fstar=tables.fstar, **{k: np.asarray(v) for k, v in meta.items()})
        if path.suffix != ".npz":
            path = path.with_name(path.name + ".npz")
    return path


def load_tables(path: str | Path) -> RenewalTables:
    path = Path(path)
    if path.suffix == ".csv":
        meta = {}
        with open(path) as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    meta[key] = float(val)
        data = np.loadtxt(path, delimiter=",", comments="#")
        u, v, fstar, fbar_star = data[:, 1], data[:, 2], data[:, 3], data[:, 4]
    else:
        with np.load(path) as z:
            meta = {k: float(z[k]) for k in _HEADER_KEYS}
            u, fstar = z["u"], z["fstar"]
        v = u * u
        fbar_star = 1.0 - np.cumsum(fstar)
    beta = meta["beta"]
    N = int(meta["horizon"])
    w = RenewalLaw(beta).partial_tail_sums(N).copy()
    for arr in (u, v, fstar, fbar_star, w):
        arr.setflags(write=False)
    return RenewalTables(
        beta=beta,
        horizon=N,
        u=u,
        v=v,
        fstar=fstar,
        fbar_star=fbar_star,
        w=w,
        qF2=meta["qF2"],
        q_error=meta["q_error"],
        q_lower=meta["q_lower"],
        q_upper=meta["q_upper"],
        tail_correction=meta["tail_correction"],
        asym_const=meta["asym_const"],
    )
