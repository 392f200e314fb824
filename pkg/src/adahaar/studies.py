"""Simulation studies of the adaptive estimator's risk behaviour.

Every statistic here is a sup over finest bins of some normalised error.
The estimator and the oracle level are step functions on finest bins, so the
sups collapse to maxima over bins; where the true density enters, per-bin
extrema are computed exactly from segment monotonicity (plus a fallback
evaluation grid on bins containing a cusp or a jump, so the sup is never
under-approximated).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from adahaar.density import (
    HolderProfile,
    OracleLevels,
    PiecewiseDensity,
    oracle_levels,
    compute_U,
)
from adahaar.dyadic import CountsPyramid, DyadicInterval, build_pyramid, max_level
from adahaar.errors import ValidationError
from adahaar.selector import chain_tables, fine_weights, sup_weights
from adahaar import _kernels

__all__ = [
    "OracleTables",
    "PropagationReport",
    "RiskReport",
    "StudyConfig",
    "adaptive_sup_risk",
    "expected_chain_matrix",
    "is_level_constant",
    "oracle_discrepancy",
    "probe_metric",
    "propagation_study",
    "run_risk_study",
    "uniform_deviation_statistic",
]

# Extra evaluation points per special bin (cusp or jump inside): guards the
# exact-extrema bookkeeping against under-approximating the sup.
_FALLBACK_GRID = 33


def _irregular_points(density: PiecewiseDensity) -> list[float]:
    pts = [s.x0 for s in density.segments if s.c1 != 0.0 and s.gamma < 1.0]
    pts += [s.b for s in density.segments[:-1]]
    return sorted({p for p in pts if 0.0 < p < 1.0})


def _range_with_fallback(density, lo, hi, special):
    vmin, vmax = density.range_over(lo, hi)
    if special:
        grid = np.linspace(lo, hi, _FALLBACK_GRID)[1:]
        vals = density.pdf(grid)
        vmin = min(vmin, float(vals.min()))
        vmax = max(vmax, float(vals.max()))
    return vmin, vmax


@dataclass(frozen=True)
class OracleTables:
    """Everything about (density, n, j_max) that replicates can share."""

    n: int
    j_max: int
    oracle: OracleLevels
    U: float
    w_star: np.ndarray      # sup normalisation at each bin's oracle level
    root_star: np.ndarray   # sqrt(n 2^-j*) per bin
    f0_lo: np.ndarray       # density extrema over each finest bin
    f0_hi: np.ndarray
    piece_bin: np.ndarray   # holder pieces: owning finest bin
    piece_rate: np.ndarray  # (n / log n)^(t / (2t + 1)) on the piece
    piece_lo: np.ndarray
    piece_hi: np.ndarray

    @classmethod
    def build(cls, density: PiecewiseDensity, n: int, j_max: int,
              Delta: float = 0.4, profile: HolderProfile | None = None,
              variant: str = "local-bias") -> "OracleTables":
        oracle = oracle_levels(density, n, j_max, Delta=Delta,
                               profile=profile, variant=variant)
        U = compute_U(density, oracle.jstar, j_max)
        w_star = sup_weights(n, oracle.jstar)
        root_star = fine_weights(n, oracle.jstar)
        B = 2**j_max
        irregular = _irregular_points(density)
        f0_lo = np.empty(B)
        f0_hi = np.empty(B)
        pieces = []
        logn = math.log(n)
        for m in range(B):
            iv = DyadicInterval(j_max, m)
            special = any(iv.left < p < iv.right for p in irregular)
            f0_lo[m], f0_hi[m] = _range_with_fallback(density, iv.left, iv.right, special)
            if profile is not None:
                cuts = [iv.left] + [b for b in profile.breakpoints()
                                    if iv.left < b < iv.right] + [iv.right]
                for a, b in zip(cuts, cuts[1:]):
                    t = profile.t_at(b)
                    rate = (n / logn) ** (t / (2.0 * t + 1.0))
                    sp = any(a < p < b for p in irregular)
                    lo, hi = _range_with_fallback(density, a, b, sp)
                    pieces.append((m, rate, lo, hi))
        if pieces:
            pb, pr, plo, phi = (np.asarray(col) for col in zip(*pieces))
        else:
            pb = np.zeros(0, dtype=np.int64)
            pr = plo = phi = np.zeros(0)
        return cls(n=n, j_max=j_max, oracle=oracle, U=U, w_star=w_star,
                   root_star=root_star, f0_lo=f0_lo, f0_hi=f0_hi,
                   piece_bin=pb.astype(np.int64), piece_rate=pr,
                   piece_lo=plo, piece_hi=phi)

    def oracle_bound(self, zeta: float, alpha: float) -> float:
        """Bound on the mean oracle discrepancy for a propagation-calibrated
        threshold: ``zeta/sqrt(log n) + sqrt(alpha/n) n^(Delta e^{4U})``."""
        n = self.n
        return (zeta / math.sqrt(math.log(n))
                + math.sqrt(alpha / n) * n ** (self.oracle.Delta * math.exp(4.0 * self.U)))


def _selection_detail(F: np.ndarray, n: int, zeta: float, J: int):
    """Selector internals shared by the statistics below."""
    sqrtF, inv_s, maxstat = chain_tables(F, n)
    sel = _kernels.select_levels(sqrtF, maxstat, zeta, J)
    fhat = np.take_along_axis(F, sel[:, None], axis=1)[:, 0]
    return sqrtF, inv_s, sel, fhat


def _discrepancy_from_F(F, n, zeta, tables: OracleTables, J: int = 0):
    """Oracle-normalised sup statistic plus the branch bookkeeping.

    Returns (sup_stat, all_at_or_above, branch_ok) where ``branch_ok``
    re-checks, bin by bin, the inequality the selector itself verified on
    bins chosen coarser than the oracle level: that comparison is part of
    the accepted test, so it can only fail if the selector is broken.
    """
    sqrtF, inv_s, sel, fhat = _selection_detail(F, n, zeta, J)
    jstar = tables.oracle.jstar
    rows = np.arange(F.shape[0])
    f_star = F[rows, jstar]
    inv_star = inv_s[rows, jstar]
    stat = float(np.max((tables.w_star * np.abs(fhat - f_star)) * inv_star))
    branch = sel < jstar
    all_above = not bool(branch.any())
    branch_ok = True
    if branch.any():
        lhs = tables.root_star[branch] * np.abs(fhat[branch] - f_star[branch])
        rhs = zeta * sqrtF[rows[branch], sel[branch]]
        branch_ok = bool(np.all((lhs <= rhs) | (lhs == 0.0)))
    return stat, all_above, branch_ok, sel, fhat


def oracle_discrepancy(pyramid: CountsPyramid, zeta: float,
                       tables: OracleTables, J: int = 0) -> float:
    """Sup over bins of the oracle-level-normalised selector error."""
    F = pyramid.chain_matrix()
    return _discrepancy_from_F(F, pyramid.n, zeta, tables, J)[0]


def _sup_risk_from_fhat(fhat, tables: OracleTables) -> float:
    err = np.maximum(np.abs(fhat - tables.f0_lo), np.abs(fhat - tables.f0_hi))
    return float(np.max(tables.w_star * err))


def adaptive_sup_risk(pyramid: CountsPyramid, zeta: float,
                      tables: OracleTables, J: int = 0) -> float:
    """Sup over (0,1] of ``sqrt(n 2^-j* / log n) |fhat - f0|``, exactly."""
    F = pyramid.chain_matrix()
    _, _, _, fhat = _selection_detail(F, pyramid.n, zeta, J)
    return _sup_risk_from_fhat(fhat, tables)


def _holder_sup_from_fhat(fhat, tables: OracleTables) -> float:
    if tables.piece_bin.size == 0:
        raise ValidationError("holder sup risk needs a smoothness profile")
    fb = fhat[tables.piece_bin]
    err = np.maximum(np.abs(fb - tables.piece_lo), np.abs(fb - tables.piece_hi))
    return float(np.max(tables.piece_rate * err))


def expected_chain_matrix(density: PiecewiseDensity, j_max: int) -> np.ndarray:
    """Expected histogram estimates: ``2^j mass(f, j, k)`` per bin and level."""
    B = 2**j_max
    out = np.empty((B, j_max + 1))
    for j in range(j_max + 1):
        edges = np.ldexp(np.arange(2**j + 1, dtype=np.float64), -j)
        masses = np.diff(density.cdf(edges))
        out[:, j] = np.repeat(np.ldexp(masses, j), B // 2**j)
    return out


def uniform_deviation_statistic(pyramid: CountsPyramid, density: PiecewiseDensity,
                                j: int, interval: DyadicInterval) -> float:
    """Sup over bins in ``interval`` and levels >= j of the centred estimate.

    ``max sqrt(n 2^-j') |f_n(j', x) - E f_n(j', x)|`` with the expectation
    from exact bin masses.
    """
    if interval.j != j:
        raise ValidationError("interval level must equal the base level j")
    if j > pyramid.j_max:
        raise ValidationError("base level exceeds the pyramid's finest level")
    F = pyramid.chain_matrix()
    Ef = expected_chain_matrix(density, pyramid.j_max)
    shift = pyramid.j_max - j
    lo, hi = interval.k << shift, (interval.k + 1) << shift
    levels = np.arange(j, pyramid.j_max + 1)
    root = fine_weights(pyramid.n, levels)
    dev = np.abs(F[lo:hi, j:] - Ef[lo:hi, j:]) * root[None, :]
    return float(dev.max())


# ---------------------------------------------------------------------------
# Propagation behaviour on locally constant densities


@dataclass(frozen=True)
class PropagationReport:
    """Detection rates and the propagation error on a locally constant truth."""

    n: int
    j_max: int
    base_level: int
    zeta: float
    reps: int
    detect_freq: np.ndarray   # per level j' >= base: frequency of jhat(j') = j'
    t2_mean: np.ndarray       # per finest bin: Monte-Carlo mean of T^2
    t2_se: np.ndarray

    @property
    def t2_worst(self) -> tuple[float, float]:
        i = int(np.argmax(self.t2_mean))
        return float(self.t2_mean[i]), float(self.t2_se[i])


def is_level_constant(density: PiecewiseDensity, j: int) -> bool:
    """True when the density is constant on every level-``j`` bin."""
    if any(s.c1 != 0.0 for s in density.segments):
        return False
    edges = {round(math.ldexp(s.b, j), 12) for s in density.segments[:-1]}
    return all(e == int(e) for e in edges)


def propagation_study(density: PiecewiseDensity, n: int, j_max: int, j: int,
                      zeta: float, reps: int, seed: int,
                      d: float = 1.0, threads: int = 1) -> PropagationReport:
    """Simulate from a level-``j`` constant density and watch the selector.

    Reports, per level ``j' >= j``, how often the selector started at ``j'``
    stays there, and per finest bin the mean squared sup statistic that the
    propagation calibration controls.
    """
    if not is_level_constant(density, j):
        raise ValidationError(f"density {density.name!r} is not constant on level-{j} bins")
    B = 2**j_max
    L = j_max - j + 1
    levels = np.arange(j, j_max + 1)
    w = sup_weights(n, levels)

    def one_rep(rep):
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=seed, spawn_key=(rep,))))
        pyramid = build_pyramid(density.sample(n, rng=rng), j_max, d=d)
        F = np.ascontiguousarray(pyramid.chain_matrix()[:, j:])
        sqrtF, inv_s, maxstat = chain_tables(F, n, j0=j)
        adm = (maxstat <= zeta * sqrtF) | (maxstat == 0.0)
        T = _kernels.t_stats(F, sqrtF, inv_s, maxstat, w, zeta)
        return adm.mean(axis=0), T * T

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_rep, range(reps)))
    else:
        results = [one_rep(r) for r in range(reps)]

    detect = np.zeros(L)
    s2 = np.zeros(B)
    s4 = np.zeros(B)
    for det, t2 in results:
        detect += det
        s2 += t2
        s4 += t2 * t2
    mean = s2 / reps
    if reps > 1:
        var = np.maximum(s4 / reps - mean * mean, 0.0) * (reps / (reps - 1))
    else:
        var = np.zeros_like(mean)
    return PropagationReport(n=n, j_max=j_max, base_level=j, zeta=zeta,
                             reps=reps, detect_freq=detect / reps,
                             t2_mean=mean, t2_se=np.sqrt(var / reps))


# ---------------------------------------------------------------------------
# The replicated risk study behind the `simulate` command


@dataclass(frozen=True)
class StudyConfig:
    """One risk study: density, sample sizes, replicates, threshold source."""

    density: PiecewiseDensity
    profile: HolderProfile | None
    n_list: tuple[int, ...]
    reps: int
    seed: int
    Delta: float = 0.4
    kappa: float | None = None
    thresholds: dict | None = None  # n -> zeta
    d: float = 1.0
    probes: tuple[float, ...] = ()
    start_level: int = 0
    variant: str = "local-bias"
    threads: int = 1

    def __post_init__(self):
        if not self.n_list or any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ValidationError("n_list must be nonempty and ascending")
        if self.reps < 1:
            raise ValidationError("reps must be >= 1")
        if (self.kappa is None) == (self.thresholds is None):
            raise ValidationError("exactly one of kappa or thresholds must be given")
        if any(not 0.0 < p <= 1.0 for p in self.probes):
            raise ValidationError("probes must lie in (0, 1]")

    def zeta_for(self, n: int) -> float:
        if self.kappa is not None:
            return self.kappa * math.sqrt(math.log(n))
        try:
            return float(self.thresholds[n])
        except KeyError:
            raise ValidationError(f"no threshold provided for n={n}") from None


@dataclass
class RiskReport:
    """Long-format study results: one row per (n, replicate, metric)."""

    rows: list = field(default_factory=list)  # (n, replicate, metric, value)

    def append(self, n, rep, metric, value):
        self.rows.append((int(n), int(rep), str(metric), float(value)))

    def metrics(self) -> tuple[str, ...]:
        return tuple(sorted({r[2] for r in self.rows}))

    def values(self, n: int, metric: str) -> np.ndarray:
        return np.asarray([v for nn, _, m, v in self.rows if nn == n and m == metric])

    def n_values(self) -> tuple[int, ...]:
        return tuple(sorted({r[0] for r in self.rows}))

    def summary(self) -> list:
        """Rows of (n, metric, count, mean, p50, p95)."""
        out = []
        for n in self.n_values():
            for metric in self.metrics():
                v = self.values(n, metric)
                if v.size:
                    out.append((n, metric, v.size, float(v.mean()),
                                float(np.percentile(v, 50)), float(np.percentile(v, 95))))
        return out

    def slope(self, metric: str) -> tuple[float, float]:
        """Least-squares slope of log mean(metric) against log(n / log n)."""
        ns = [n for n in self.n_values() if self.values(n, metric).size]
        if len(ns) < 2:
            raise ValidationError(f"need at least two sample sizes for a slope, metric {metric!r}")
        means = np.asarray([self.values(n, metric).mean() for n in ns])
        if np.any(means <= 0.0):
            raise ValidationError(f"metric {metric!r} has a zero mean; no decay to fit")
        x = np.log([n / math.log(n) for n in ns])
        slope, intercept = np.polyfit(x, np.log(means), 1)
        return float(slope), float(intercept)


def probe_metric(x: float) -> str:
    return f"err@{x:g}"


def _check_probes(config: StudyConfig, n: int):
    bad = []
    radius = n ** (-1.0 / 3.0)
    for p in config.probes:
        for pt in _irregular_points(config.density):
            if 0.0 < abs(p - pt) < radius:
                bad.append((p, pt))
    if bad:
        warnings.warn(
            f"probes {sorted({p for p, _ in bad})} lie within n^(-1/3) of an "
            "irregular point; pointwise rates are not expected to adapt there",
            RuntimeWarning, stacklevel=3)


def run_risk_study(config: StudyConfig) -> RiskReport:
    """Replicated sampling study; a pure function of the config and its seed."""
    report = RiskReport()
    density = config.density
    for n in config.n_list:
        j_max = max_level(n, config.d)
        zeta = config.zeta_for(n)
        tables = OracleTables.build(density, n, j_max, Delta=config.Delta,
                                    profile=config.profile, variant=config.variant)
        _check_probes(config, n)
        probe_bins = {p: int(np.ceil(np.ldexp(p, j_max))) - 1 for p in config.probes}
        probe_f0 = {p: density.pdf(p) for p in config.probes}

        def one_rep(rep, n=n, j_max=j_max, zeta=zeta, tables=tables):
            rng = np.random.Generator(np.random.Philox(
                np.random.SeedSequence(entropy=config.seed, spawn_key=(n, rep))))
            pyramid = build_pyramid(density.sample(n, rng=rng), j_max, d=config.d)
            F = pyramid.chain_matrix()
            stat, all_above, branch_ok, sel, fhat = _discrepancy_from_F(
                F, n, zeta, tables, config.start_level)
            out = {
                "oracle_sup": stat,
                "adaptive_sup": _sup_risk_from_fhat(fhat, tables),
                "all_at_or_above_oracle": 1.0 if all_above else 0.0,
                "branch_bound_ok": 1.0 if branch_ok else 0.0,
            }
            if config.profile is not None:
                out["holder_sup"] = _holder_sup_from_fhat(fhat, tables)
            for p in config.probes:
                out[probe_metric(p)] = abs(float(fhat[probe_bins[p]]) - probe_f0[p])
            return out

        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                metrics = list(pool.map(one_rep, range(config.reps)))
        else:
            metrics = [one_rep(r) for r in range(config.reps)]
        for rep, md in enumerate(metrics):
            for metric, value in md.items():
                report.append(n, rep, metric, value)
    return report
