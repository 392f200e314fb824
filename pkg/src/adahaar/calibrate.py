"""Monte-Carlo calibration of the selection threshold.

The idea: on a density that is constant on the coarse bin ``(j, k)``, the
selector started at any level ``j' >= j`` should stay put (any finer level
only adds variance).  The calibration picks the smallest threshold ``zeta``
for which the expected squared sup-statistic

    T = max_{j <= j' <= j_max} sqrt(n 2^-j' / log n)
        |fhat_n(j', x) - f_n(j', x)| / s_n(j', x)

stays below ``alpha / (n 2^(2 j_max))`` uniformly over a grid of coarse
levels ``j`` and bin masses ``p``.  On such densities ``T`` depends on the
sample only through the nested counts above one finest bin: the number of
points ``Z`` in the coarse bin is binomial(n, p), and each halving of the
interval thins the count binomially with probability 1/2.  Replicates are
therefore simulated directly as thinning chains, never as point samples.

Randomness: each (level-grid-index, mass-grid-index, block) work item owns a
Philox stream spawned from the seed, with replicates laid out in fixed-size
blocks.  Work items may run on any number of threads; partial sums are
reduced in fixed index order, so results are bitwise reproducible.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from adahaar import _kernels
from adahaar.errors import CalibrationInfeasibleError, ValidationError
from adahaar.selector import chain_tables, sup_weights

__all__ = [
    "BLOCK",
    "CalibrationConfig",
    "ChainCounts",
    "ThresholdRecord",
    "calibrate",
    "chain_t_stats",
    "estimate_lhs",
    "load_record",
    "propagation_statistic",
    "resimulate_lhs",
    "save_record",
    "simulate_chain",
]

# Replicates are simulated in blocks of this many rows; the block is the unit
# of work scheduling and of RNG stream derivation, so it must never change.
BLOCK = 8192


@dataclass(frozen=True)
class CalibrationConfig:
    """Grids, budgets and seed for one calibration run."""

    n: int
    j_max: int
    alpha: float = 1.0
    d: float = 1.0
    delta: float = 0.1
    big_m: float = 10.0
    p_points: int = 9
    reps: int = 10_000
    seed: int = 0
    level_grid: tuple[int, ...] | None = None
    zeta_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n <= 1:
            raise ValidationError(f"sample size must exceed 1, got {self.n}")
        if self.j_max < 0:
            raise ValidationError("j_max must be >= 0")
        if math.ldexp(1.0, -self.j_max) < self.d * math.log(self.n) ** 2 / self.n:
            raise ValidationError(
                f"j_max={self.j_max} violates 2^-j_max >= d (log n)^2 / n"
            )
        if self.alpha <= 0 or self.delta <= 0 or self.big_m < self.delta:
            raise ValidationError("need alpha > 0 and 0 < delta <= M")
        if self.reps < 1:
            raise ValidationError("reps must be >= 1")
        if self.p_points < 1:
            raise ValidationError("p_points must be >= 1")
        zg = self.zetas()
        if len(zg) == 0 or any(b <= a for a, b in zip(zg, zg[1:])):
            raise ValidationError("zeta grid must be nonempty and strictly ascending")
        if any(not 0 <= j <= self.j_max for j in self.levels()):
            raise ValidationError("level grid entries must lie in [0, j_max]")
        for j in self.levels():
            if np.any(self.masses(j) <= 0) or np.any(self.masses(j) > 1):
                raise ValidationError("bin masses must lie in (0, 1]")

    def levels(self) -> tuple[int, ...]:
        if self.level_grid is not None:
            return tuple(self.level_grid)
        return tuple(range(self.j_max + 1))

    def masses(self, j: int) -> np.ndarray:
        """Geometric grid of coarse-bin masses p = f 2^-j for f in [delta, M]."""
        lo = self.delta * math.ldexp(1.0, -j)
        hi = min(1.0, self.big_m * math.ldexp(1.0, -j))
        if self.p_points == 1:
            return np.asarray([hi])
        return np.geomspace(lo, hi, self.p_points)

    def zetas(self) -> tuple[float, ...]:
        if self.zeta_grid is not None:
            return tuple(self.zeta_grid)
        s = math.sqrt(math.log(self.n))
        return tuple(np.geomspace(0.1 * s, 10.0 * s, 64))

    @property
    def bound(self) -> float:
        return self.alpha / (self.n * 4.0**self.j_max)


@dataclass(frozen=True)
class ChainCounts:
    """Nested counts above one finest bin: V[l] points in the level-(j+l) bin."""

    base_level: int
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 1 or c.size == 0:
            raise ValidationError("counts must be a nonempty vector")
        if np.any(c < 0) or np.any(np.diff(c) > 0):
            raise ValidationError("chain counts must be nonnegative and nonincreasing")
        object.__setattr__(self, "counts", c)


@dataclass(frozen=True)
class ThresholdRecord:
    """Calibrated threshold together with everything that produced it."""

    zeta_n: float
    config: CalibrationConfig
    achieved: dict = field(default_factory=dict)  # (j, p) -> (lhs, se)
    bound: float = 0.0


def simulate_chain(n: int, p: float, j: int, j_max: int,
                   rng: np.random.Generator) -> ChainCounts:
    """One thinning chain: Z ~ B(n, p), then halve the interval repeatedly."""
    if not 0.0 < p <= 1.0:
        raise ValidationError(f"bin mass must lie in (0, 1], got {p}")
    if not 0 <= j <= j_max:
        raise ValidationError(f"base level {j} outside [0, {j_max}]")
    L = j_max - j + 1
    v = np.empty(L, dtype=np.int64)
    v[0] = rng.binomial(n, p)
    for l in range(1, L):
        v[l] = rng.binomial(v[l - 1], 0.5)
    return ChainCounts(j, v)


def _chain_blocks(n, p, j, j_max, j_idx, p_idx, seed, reps):
    """Yield count-matrix blocks, each drawn from its own Philox stream."""
    L = j_max - j + 1
    done = 0
    block_idx = 0
    while done < reps:
        m = min(BLOCK, reps - done)
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(j_idx, p_idx, block_idx))
        rng = np.random.Generator(np.random.Philox(ss))
        V = np.empty((m, L), dtype=np.int64)
        V[:, 0] = rng.binomial(n, p, size=m)
        for l in range(1, L):
            V[:, l] = rng.binomial(V[:, l - 1], 0.5)
        yield V
        done += m
        block_idx += 1


def chain_t_stats(V: np.ndarray, base_level: int, n: int, j_max: int,
                  zetas) -> np.ndarray:
    """Sup statistic T for every chain row, for each candidate threshold.

    ``V`` is (B, L) nested counts with columns at levels
    ``base_level .. j_max``; returns (len(zetas), B).
    """
    levels = np.arange(base_level, j_max + 1)
    F = np.ascontiguousarray(np.ldexp(V.astype(np.float64), levels[None, :]) / n)
    sqrtF, inv_s, maxstat = chain_tables(F, n, j0=base_level)
    w = sup_weights(n, levels)
    out = np.empty((len(zetas), V.shape[0]))
    for zi, z in enumerate(zetas):
        out[zi] = _kernels.t_stats(F, sqrtF, inv_s, maxstat, w, float(z))
    return out


def propagation_statistic(chain: ChainCounts, zeta: float, n: int,
                          j_max: int) -> float:
    """Sup statistic T of one chain (all estimator values from its counts)."""
    V = chain.counts[None, :]
    if V.shape[1] != j_max - chain.base_level + 1:
        raise ValidationError("chain length does not match [base_level, j_max]")
    return float(chain_t_stats(V, chain.base_level, n, j_max, [zeta])[0, 0])


def _moment_sums(V, base_level, n, j_max, zetas):
    """(sum T^2, sum T^4) per zeta over the rows of one block."""
    T = chain_t_stats(V, base_level, n, j_max, zetas)
    T2 = T * T
    return np.sum(T2, axis=1), np.sum(T2 * T2, axis=1)


def _mean_and_se(s2, s4, reps):
    mean = s2 / reps
    if reps > 1:
        var = np.maximum(s4 / reps - mean * mean, 0.0) * (reps / (reps - 1))
    else:
        var = np.zeros_like(mean)
    return mean, np.sqrt(var / reps)


def _grid_items(config: CalibrationConfig):
    for j_idx, j in enumerate(config.levels()):
        for p_idx, p in enumerate(config.masses(j)):
            yield j_idx, j, p_idx, float(p)


def _simulate_grid(config: CalibrationConfig, zetas, threads: int = 1):
    """(lhs, se) arrays over zetas for every (j, p) grid point.

    Work items are (grid point, block) pairs; partial sums are combined in
    fixed block order per grid point, so the result does not depend on the
    thread count.
    """
    items = list(_grid_items(config))
    n, j_max, reps, seed = config.n, config.j_max, config.reps, config.seed

    def run_point(item):
        j_idx, j, p_idx, p = item
        s2 = np.zeros(len(zetas))
        s4 = np.zeros(len(zetas))
        for V in _chain_blocks(n, p, j, j_max, j_idx, p_idx, seed, reps):
            b2, b4 = _moment_sums(V, j, n, j_max, zetas)
            s2 += b2
            s4 += b4
        return s2, s4

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sums = list(pool.map(run_point, items))
    else:
        sums = [run_point(it) for it in items]

    out = {}
    for (j_idx, j, p_idx, p), (s2, s4) in zip(items, sums):
        out[(j, p)] = _mean_and_se(s2, s4, reps)
    return out


def estimate_lhs(config: CalibrationConfig, j: int, p: float, zeta: float) -> tuple[float, float]:
    """Monte-Carlo mean of T^2 at one grid point, with its standard error."""
    levels = config.levels()
    if j not in levels:
        raise ValidationError(f"level {j} is not on the calibration grid")
    j_idx = levels.index(j)
    masses = config.masses(j)
    hits = np.nonzero(np.isclose(masses, p, rtol=1e-12, atol=0.0))[0]
    if hits.size == 0:
        raise ValidationError(f"bin mass {p} is not on the grid for level {j}")
    p_idx = int(hits[0])
    s2 = np.zeros(1)
    s4 = np.zeros(1)
    for V in _chain_blocks(config.n, float(masses[p_idx]), j, config.j_max,
                           j_idx, p_idx, config.seed, config.reps):
        b2, b4 = _moment_sums(V, j, config.n, config.j_max, [zeta])
        s2 += b2
        s4 += b4
    mean, se = _mean_and_se(s2, s4, config.reps)
    return float(mean[0]), float(se[0])


def resimulate_lhs(config: CalibrationConfig, zeta: float, seed: int,
                   reps: int, threads: int = 1) -> dict:
    """Fresh-seed re-simulation of the bound's left side at every grid point."""
    fresh = replace(config, seed=seed, reps=reps, zeta_grid=(zeta,))
    table = _simulate_grid(fresh, np.asarray([zeta]), threads=threads)
    return {gp: (float(lhs[0]), float(se[0])) for gp, (lhs, se) in table.items()}


def calibrate(config: CalibrationConfig, threads: int = 1) -> ThresholdRecord:
    """Smallest grid threshold meeting the propagation bound everywhere.

    The bound must hold with one standard error of slack at every (j, p)
    grid point simultaneously; this guards against optimistic Monte-Carlo
    noise since the target is an exact expectation.
    """
    zetas = np.asarray(config.zetas())
    table = _simulate_grid(config, zetas, threads=threads)
    ok = np.ones(len(zetas), dtype=bool)
    for lhs, se in table.values():
        ok &= (lhs + se) <= config.bound
    if not ok.any():
        raise CalibrationInfeasibleError(
            f"no threshold in the grid meets the bound {config.bound:g}; "
            "extend the zeta grid or raise reps"
        )
    zi = int(np.argmax(ok))
    achieved = {gp: (float(lhs[zi]), float(se[zi])) for gp, (lhs, se) in table.items()}
    return ThresholdRecord(
        zeta_n=float(zetas[zi]),
        config=config,
        achieved=achieved,
        bound=config.bound,
    )


# ---------------------------------------------------------------------------
# Threshold record files: key/value header plus the achieved table.

def save_record(record: ThresholdRecord, path) -> None:
    cfg = record.config
    lines = [
        "# adahaar threshold record v1",
        f"zeta_n = {float(record.zeta_n)!r}",
        f"n = {cfg.n}",
        f"j_max = {cfg.j_max}",
        f"alpha = {cfg.alpha!r}",
        f"d = {cfg.d!r}",
        f"delta = {cfg.delta!r}",
        f"big_m = {cfg.big_m!r}",
        f"p_points = {cfg.p_points}",
        f"reps = {cfg.reps}",
        f"seed = {cfg.seed}",
        f"level_grid = {','.join(str(int(j)) for j in cfg.levels())}",
        f"zeta_grid = {','.join(repr(float(z)) for z in cfg.zetas())}",
        f"bound = {float(record.bound)!r}",
        "",
        "[achieved]",
        "j\tp\tlhs\tse",
    ]
    for (j, p), (lhs, se) in sorted(record.achieved.items()):
        lines.append(f"{int(j)}\t{float(p)!r}\t{float(lhs)!r}\t{float(se)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_record(path) -> ThresholdRecord:
    kv = {}
    achieved = {}
    in_table = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line == "[achieved]":
                in_table = True
                continue
            try:
                if in_table:
                    if line.startswith("j\t"):
                        continue
                    j, p, lhs, se = line.split("\t")
                    achieved[(int(j), float(p))] = (float(lhs), float(se))
                else:
                    key, value = (s.strip() for s in line.split("=", 1))
                    kv[key] = value
            except ValueError:
                raise ValidationError(f"{path}: line {lineno}: cannot parse {line!r}") from None
    required = {"zeta_n", "n", "j_max", "alpha", "d", "delta", "big_m",
                "p_points", "reps", "seed", "level_grid", "zeta_grid", "bound"}
    missing = required - kv.keys()
    if missing:
        raise ValidationError(f"{path}: missing keys: {sorted(missing)}")
    try:
        config = CalibrationConfig(
            n=int(kv["n"]),
            j_max=int(kv["j_max"]),
            alpha=float(kv["alpha"]),
            d=float(kv["d"]),
            delta=float(kv["delta"]),
            big_m=float(kv["big_m"]),
            p_points=int(kv["p_points"]),
            reps=int(kv["reps"]),
            seed=int(kv["seed"]),
            level_grid=tuple(int(s) for s in kv["level_grid"].split(",")),
            zeta_grid=tuple(float(s) for s in kv["zeta_grid"].split(",")),
        )
        return ThresholdRecord(
            zeta_n=float(kv["zeta_n"]),
            config=config,
            achieved=achieved,
            bound=float(kv["bound"]),
        )
    except ValidationError:
        raise
    except ValueError as exc:
        raise ValidationError(f"{path}: bad value: {exc}") from None
