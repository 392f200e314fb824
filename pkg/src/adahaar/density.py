"""Analytic ground-truth densities and the oracle quantities built from them.

A density is a piecewise sum ``c0 + c1 |x - x0|^gamma`` on segments covering
(0, 1].  All masses come from closed-form antiderivatives, all suprema from
segment monotonicity (each power term is monotone on either side of its
center), so projections, biases and the inverse CDF are exact up to floating
point.
"""

from __future__ import annotations

import bisect
import math
import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np

from adahaar.dyadic import DyadicInterval
from adahaar.errors import ValidationError

__all__ = [
    "HolderProfile",
    "HolderRegion",
    "OracleLevels",
    "PiecewiseDensity",
    "PowerSegment",
    "builtin_density",
    "builtin_names",
    "compute_U",
    "delta_conc",
    "delta_daub",
    "holder_constant",
    "load_density",
    "local_bias_deltas",
    "measure_c0",
    "monotonize_deltas",
    "oracle_level",
    "oracle_levels",
    "parse_density",
]

_MASS_TOL = 1e-12


@dataclass(frozen=True)
class PowerSegment:
    """``f(x) = c0 + c1 |x - x0|^gamma`` on the interval ``(a, b]``."""

    a: float
    b: float
    c0: float
    c1: float
    x0: float
    gamma: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValidationError(f"segment needs a < b, got [{self.a}, {self.b}]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValidationError(f"gamma must lie in (0, 1], got {self.gamma}")

    def value(self, x):
        return self.c0 + self.c1 * np.abs(np.asarray(x, dtype=np.float64) - self.x0) ** self.gamma

    def antiderivative(self, x):
        u = np.asarray(x, dtype=np.float64) - self.x0
        g1 = self.gamma + 1.0
        return self.c0 * np.asarray(x, dtype=np.float64) + self.c1 * np.sign(u) * np.abs(u) ** g1 / g1

    def mass(self, lo: float, hi: float) -> float:
        return float(self.antiderivative(hi) - self.antiderivative(lo))

    def extrema(self, lo: float, hi: float):
        """(min, max) of the segment formula over [lo, hi].

        The power term is monotone on each side of x0, so extrema sit at the
        cut endpoints or at x0 when it falls inside the cut.
        """
        cand = [float(self.value(lo)), float(self.value(hi))]
        if lo < self.x0 < hi:
            cand.append(float(self.value(self.x0)))
        return min(cand), max(cand)


class PiecewiseDensity:
    """A density on (0, 1] with closed-form segment antiderivatives.

    ``delta`` and ``big_m`` are the declared pointwise bounds; they are
    verified against the exact segment extrema at construction, and the
    total mass must equal 1 within 1e-12.
    """

    def __init__(self, segments, delta: float, big_m: float, name: str = ""):
        segs = tuple(segments)
        if not segs:
            raise ValidationError("a density needs at least one segment")
        if segs[0].a != 0.0 or segs[-1].b != 1.0:
            raise ValidationError("segments must start at 0 and end at 1")
        for s, t in zip(segs, segs[1:]):
            if s.b != t.a:
                raise ValidationError(
                    f"segments must be contiguous: {s.b!r} followed by {t.a!r}"
                )
        total = math.fsum(s.mass(s.a, s.b) for s in segs)
        if abs(total - 1.0) > _MASS_TOL:
            raise ValidationError(f"total mass is {total!r}, not 1 within {_MASS_TOL}")
        if delta < 0 or big_m <= 0 or big_m < delta:
            raise ValidationError("need 0 <= delta <= M")
        for s in segs:
            lo, hi = s.extrema(s.a, s.b)
            if lo < delta - 1e-12 or hi > big_m + 1e-12:
                raise ValidationError(
                    f"segment on ({s.a}, {s.b}] has range [{lo:g}, {hi:g}] "
                    f"outside the declared bounds [{delta}, {big_m}]"
                )
        self.segments = segs
        self.delta = float(delta)
        self.big_m = float(big_m)
        self.name = name
        self._rights = [s.b for s in segs]
        # cumulative mass up to each segment's right edge, for the inverse CDF
        self._cum = np.cumsum([s.mass(s.a, s.b) for s in segs])

    # -- pointwise evaluation ----------------------------------------------
    def _segment_of(self, x: float) -> PowerSegment:
        i = bisect.bisect_left(self._rights, x)
        return self.segments[min(i, len(self.segments) - 1)]

    def pdf(self, x):
        arr = np.asarray(x, dtype=np.float64)
        if arr.size and (np.any(arr <= 0.0) or np.any(arr > 1.0)):
            raise ValidationError("density is defined on (0, 1] only")
        idx = np.searchsorted(self._rights, arr, side="left")
        idx = np.minimum(idx, len(self.segments) - 1)
        out = np.empty_like(arr, dtype=np.float64)
        for i, seg in enumerate(self.segments):
            m = idx == i
            if np.any(m):
                out[m] = seg.value(arr[m])
        return float(out) if np.isscalar(x) or arr.ndim == 0 else out

    def cdf(self, x):
        arr = np.asarray(x, dtype=np.float64)
        idx = np.minimum(np.searchsorted(self._rights, arr, side="left"),
                         len(self.segments) - 1)
        out = np.empty_like(arr, dtype=np.float64)
        for i, seg in enumerate(self.segments):
            m = idx == i
            if np.any(m):
                prev = self._cum[i - 1] if i else 0.0
                out[m] = prev + (seg.antiderivative(arr[m]) - seg.antiderivative(seg.a))
        out = np.clip(out, 0.0, 1.0)
        return float(out) if np.isscalar(x) or arr.ndim == 0 else out

    # -- interval functionals ----------------------------------------------
    def mass_interval(self, lo: float, hi: float) -> float:
        """Exact integral of the density over (lo, hi]."""
        if hi <= lo:
            return 0.0
        total = 0.0
        for seg in self.segments:
            a = max(lo, seg.a)
            b = min(hi, seg.b)
            if a < b:
                total += seg.mass(a, b)
        return total

    def mass(self, j: int, k: int) -> float:
        iv = DyadicInterval(j, k)
        return self.mass_interval(iv.left, iv.right)

    def local_projection(self, j: int, k: int) -> float:
        """Average of the density over bin ``(j, k)`` (its projected value)."""
        return math.ldexp(self.mass(j, k), j)

    def range_over(self, lo: float, hi: float):
        """(inf, sup) of the density over ``(lo, hi]``.

        One-sided limits at segment boundaries are included, which is what
        sup-norm functionals over half-open intervals require.
        """
        vmin, vmax = math.inf, -math.inf
        for seg in self.segments:
            a = max(lo, seg.a)
            b = min(hi, seg.b)
            if a < b:
                smin, smax = seg.extrema(a, b)
                vmin = min(vmin, smin)
                vmax = max(vmax, smax)
        return vmin, vmax

    def local_bias(self, j: int, k: int) -> float:
        """``sup_{y in bin} |f(y) - projection|`` from segment extrema."""
        iv = DyadicInterval(j, k)
        c = self.local_projection(j, k)
        lo, hi = self.range_over(iv.left, iv.right)
        return max(hi - c, c - lo)

    def project(self, j: int, k: int) -> "PiecewiseDensity":
        """Replace the density on bin ``(j, k)`` by its average."""
        iv = DyadicInterval(j, k)
        c = self.local_projection(j, k)
        segs = []
        for seg in self.segments:
            left = seg.a
            for cut in (iv.left, iv.right):
                if left < cut < seg.b:
                    segs.append(PowerSegment(left, cut, seg.c0, seg.c1, seg.x0, seg.gamma))
                    left = cut
            segs.append(PowerSegment(left, seg.b, seg.c0, seg.c1, seg.x0, seg.gamma))
        out = []
        for seg in segs:
            if iv.left <= seg.a and seg.b <= iv.right:
                out.append(PowerSegment(seg.a, seg.b, c, 0.0, 0.0, 1.0))
            else:
                out.append(seg)
        lo = min(min(s.extrema(s.a, s.b)[0] for s in out), self.delta)
        hi = max(max(s.extrema(s.a, s.b)[1] for s in out), self.big_m)
        return PiecewiseDensity(out, min(self.delta, lo), max(self.big_m, hi),
                                name=f"{self.name}|proj({j},{k})")

    # -- sampling ------------------------------------------------------------
    def sample(self, n: int, seed=None, rng: np.random.Generator | None = None) -> np.ndarray:
        """Inverse-CDF draws; 60 bisection rounds pin each root far below 1e-14."""
        if rng is None:
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        u = 1.0 - rng.random(n)  # in (0, 1]: keeps draws strictly positive
        idx = np.minimum(np.searchsorted(self._cum, u, side="left"),
                         len(self.segments) - 1)
        a = np.asarray([self.segments[i].a for i in idx])
        b = np.asarray([self.segments[i].b for i in idx])
        lo, hi = a.copy(), b.copy()
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return hi

    def __repr__(self):
        return (f"PiecewiseDensity(name={self.name!r}, segments={len(self.segments)}, "
                f"delta={self.delta}, M={self.big_m})")


# ---------------------------------------------------------------------------
# Local Hoelder structure


@dataclass(frozen=True)
class HolderRegion:
    """Constant smoothness data on ``(a, b]``: exponent t, constant L, radius eta."""

    a: float
    b: float
    t: float
    L: float
    eta: float
    c0: float = 0.0  # measured fine-scale bias constant; 0 when unmeasured

    def __post_init__(self):
        if not self.a < self.b:
            raise ValidationError("region needs a < b")
        if not 0.0 < self.t <= 1.0:
            raise ValidationError(f"t must lie in (0, 1], got {self.t}")
        if self.L <= 0 or self.eta <= 0:
            raise ValidationError("L and eta must be positive")


@dataclass(frozen=True)
class HolderProfile:
    """Piecewise-constant (t, L, eta) map on a finite partition of (0, 1]."""

    regions: tuple[HolderRegion, ...]

    def __post_init__(self):
        regs = tuple(self.regions)
        if not regs or regs[0].a != 0.0 or regs[-1].b != 1.0:
            raise ValidationError("regions must cover (0, 1]")
        for r, s in zip(regs, regs[1:]):
            if r.b != s.a:
                raise ValidationError("regions must be contiguous")
        object.__setattr__(self, "regions", regs)

    def region_at(self, x: float) -> HolderRegion:
        if not 0.0 < x <= 1.0:
            raise ValidationError("profile is defined on (0, 1] only")
        for r in self.regions:
            if x <= r.b:
                return r
        return self.regions[-1]

    def t_at(self, x: float) -> float:
        return self.region_at(x).t

    def breakpoints(self) -> tuple[float, ...]:
        return tuple(r.b for r in self.regions[:-1])


def holder_constant(region: HolderRegion) -> float:
    """Bias-bound constant for one region: max of the measured fine-scale
    constant and the coarse-scale bound ``6 L (2/eta)^t``."""
    return max(region.c0, 6.0 * region.L * (2.0 / region.eta) ** region.t)


def measure_c0(density: PiecewiseDensity, region: HolderRegion,
               levels) -> float:
    """Largest observed ``local_bias / 2^{-j t}`` over bins inside the region."""
    worst = 0.0
    for j in levels:
        for k in range(2**j):
            iv = DyadicInterval(j, k)
            if region.a <= iv.left and iv.right <= region.b:
                worst = max(worst, density.local_bias(j, k) / math.ldexp(1.0, -j) ** region.t)
    return worst


# ---------------------------------------------------------------------------
# Small-bias functionals and oracle levels


def delta_conc(density: PiecewiseDensity, j: int, k: int) -> float:
    """Small-bias functional ``(M / delta^2) 2^-j local_bias^2``."""
    if density.delta <= 0:
        raise ValidationError("needs a strictly positive lower bound delta")
    b = density.local_bias(j, k)
    return (density.big_m / density.delta**2) * math.ldexp(b * b, -j)


def delta_daub(profile: HolderProfile, j: int, x: float, delta: float) -> float:
    """Smoothness-driven small-bias value ``c' 2^{-j (2 t(x) + 1)}``.

    ``c'`` is the worst region constant, so it does not depend on ``x``;
    only the exponent does.
    """
    if delta <= 0:
        raise ValidationError("needs a strictly positive lower bound delta")
    cprime = max(holder_constant(r) ** 2 * r.L / delta**2 for r in profile.regions)
    t = profile.t_at(x)
    return cprime * math.ldexp(1.0, -j) ** (2.0 * t + 1.0)


def monotonize_deltas(raw: np.ndarray) -> np.ndarray:
    """Running maximum over finer levels: the smallest nonincreasing majorant.

    Works on the last axis, so both per-point vectors and (bins, levels)
    matrices monotonize in one call.
    """
    arr = np.asarray(raw, dtype=np.float64)
    return np.maximum.accumulate(arr[..., ::-1], axis=-1)[..., ::-1]


def oracle_level(deltas, Delta: float, n: int, j_max: int) -> int:
    """Smallest level with ``n * delta_j <= Delta * log n``; finest if none."""
    if Delta <= 0:
        raise ValidationError("Delta must be positive")
    d = np.asarray(deltas, dtype=np.float64)
    if np.any(np.diff(d) > 0):
        raise ValidationError("deltas must be nonincreasing in the level (monotonize first)")
    ok = n * d[: j_max + 1] <= Delta * math.log(n)
    if not ok.any():
        warnings.warn("no level meets the small-bias budget; falling back to j_max",
                      RuntimeWarning, stacklevel=2)
        return j_max
    return int(np.argmax(ok))


@dataclass(frozen=True)
class OracleLevels:
    """Per-finest-bin balance levels, with the budget constant that made them."""

    jstar: np.ndarray
    Delta: float
    variant: str  # "local-bias" (exact projection bias) or "holder" (profile bound)

    def __post_init__(self):
        self.jstar.flags.writeable = False


def local_bias_deltas(density: PiecewiseDensity, j_max: int) -> np.ndarray:
    """Monotonized small-bias matrix, one row per finest bin."""
    B = 2**j_max
    raw = np.empty((B, j_max + 1))
    for j in range(j_max + 1):
        vals = np.asarray([delta_conc(density, j, k) for k in range(2**j)])
        raw[:, j] = np.repeat(vals, B // 2**j)
    return monotonize_deltas(raw)


def oracle_levels(density: PiecewiseDensity, n: int, j_max: int,
                  Delta: float = 0.4, profile: HolderProfile | None = None,
                  variant: str = "local-bias") -> OracleLevels:
    """Oracle level for every finest bin.

    ``local-bias`` computes the exact projection bias of the density;
    ``holder`` uses the profile's smoothness bound instead (its constants
    are conservative, so the levels are coarser).
    """
    B = 2**j_max
    if variant == "local-bias":
        deltas = local_bias_deltas(density, j_max)
    elif variant == "holder":
        if profile is None:
            raise ValidationError("the holder variant needs a profile")
        mids = (np.arange(B) + 0.5) / B
        deltas = np.empty((B, j_max + 1))
        for m, x in enumerate(mids):
            deltas[m] = [delta_daub(profile, j, float(x), density.delta)
                         for j in range(j_max + 1)]
        deltas = monotonize_deltas(deltas)
    else:
        raise ValidationError(f"unknown variant {variant!r}")
    thr = Delta * math.log(n)
    ok = n * deltas <= thr
    jstar = np.where(ok.any(axis=1), ok.argmax(axis=1), j_max).astype(np.int64)
    if not ok.any(axis=1).all():
        warnings.warn("some bins never meet the small-bias budget; using j_max there",
                      RuntimeWarning, stacklevel=2)
    return OracleLevels(jstar=jstar, Delta=Delta, variant=variant)


def compute_U(density: PiecewiseDensity, jstar: np.ndarray, j_max: int) -> float:
    """Largest log-ratio between the density and its oracle-level projection.

    ``sup_m sup_{y in I(j*_m, k*_m)} |log(f(y) / projection)|``; outside the
    projected bin the ratio is 1, so only the bin itself matters.
    """
    if density.delta <= 0:
        raise ValidationError("needs a strictly positive lower bound delta")
    seen = {}
    worst = 0.0
    for m, js in enumerate(np.asarray(jstar, dtype=np.int64)):
        j = int(js)
        k = m >> (j_max - j)
        if (j, k) in seen:
            continue
        c = density.local_projection(j, k)
        iv = DyadicInterval(j, k)
        lo, hi = density.range_over(iv.left, iv.right)
        seen[(j, k)] = True
        worst = max(worst, math.log(hi) - math.log(c), math.log(c) - math.log(lo))
    return worst


# ---------------------------------------------------------------------------
# Density spec files


def parse_density(text: str, name: str = "<density>") -> tuple[PiecewiseDensity, HolderProfile | None]:
    """Parse the density file format.

    Key/value header (``delta``, ``M``), a ``[segments]`` table with rows
    ``a b c0 c1 x0 gamma``, and an optional ``[holder]`` table with rows
    ``a b t L eta``.
    """
    kv = {}
    segments = []
    regions = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line in ("[segments]", "[holder]"):
            section = line
            continue
        try:
            if section == "[segments]":
                a, b, c0, c1, x0, gamma = (float(s) for s in line.split())
                segments.append(PowerSegment(a, b, c0, c1, x0, gamma))
            elif section == "[holder]":
                a, b, t, L, eta = (float(s) for s in line.split())
                regions.append(HolderRegion(a, b, t, L, eta))
            else:
                key, value = (s.strip() for s in line.split("=", 1))
                kv[key] = float(value)
        except (ValueError, ValidationError) as exc:
            raise ValidationError(f"{name}: line {lineno}: {exc}") from None
    for key in ("delta", "M"):
        if key not in kv:
            raise ValidationError(f"{name}: missing required key {key!r}")
    if not segments:
        raise ValidationError(f"{name}: no [segments] section")
    try:
        density = PiecewiseDensity(segments, kv["delta"], kv["M"], name=name)
        profile = HolderProfile(tuple(regions)) if regions else None
    except ValidationError as exc:
        raise ValidationError(f"{name}: {exc}") from None
    return density, profile


def load_density(path) -> tuple[PiecewiseDensity, HolderProfile | None]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_density(fh.read(), name=str(path))


def builtin_names() -> tuple[str, ...]:
    root = resources.files("adahaar").joinpath("densities")
    return tuple(sorted(p.name[: -len(".density")] for p in root.iterdir()
                        if p.name.endswith(".density")))


def builtin_density(name: str) -> tuple[PiecewiseDensity, HolderProfile | None]:
    """Load one of the densities shipped with the package."""
    res = resources.files("adahaar").joinpath("densities", f"{name}.density")
    if not res.is_file():
        raise ValidationError(
            f"unknown density {name!r}; built-ins: {', '.join(builtin_names())}"
        )
    return parse_density(res.read_text(encoding="utf-8"), name=name)
