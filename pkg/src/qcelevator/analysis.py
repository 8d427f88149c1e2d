"""Dimension estimates, dilatation sampling and the Sobolev energy series."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .elevator import analytic_qc_bound, evaluate_Phi_many
from .errors import DegenerateFit, DivergentSeries
from .params import series_factor

DIRECTION_SEED = 0x5EED
GRID_SHIFTS = 4
Z99 = float(stats.norm.ppf(0.995))


@dataclass
class DimensionEstimate:
    method: str
    value: float
    per_scale_counts: list = field(default_factory=list)  # (scale, count)
    stderr: float = 0.0

    def to_json(self) -> dict:
        return {"method": self.method, "value": self.value, "stderr": self.stderr,
                "perScaleCounts": [[float(s), float(c)] for s, c in self.per_scale_counts]}


def dimension_from_profile(scales, counts, method: str = "boxCount") -> DimensionEstimate:
    """Least-squares slope of log(count) against log(1/scale)."""
    scales = [float(s) for s in scales]
    counts = [float(c) for c in counts]
    if len(scales) < 2:
        raise DegenerateFit("need at least two scales")
    if len(set(counts)) == 1:
        raise DegenerateFit(f"all cover counts equal ({counts[0]})")
    x = -np.log(np.array(scales))
    y = np.array([math.log(c) for c in counts])
    fit = stats.linregress(x, y)
    return DimensionEstimate(method, float(fit.slope), list(zip(scales, counts)), float(fit.stderr))


def cover_count(cloud: np.ndarray, scale: float, origin: np.ndarray | None = None) -> int:
    """Number of grid cubes of side ``scale`` meeting the cloud."""
    origin = cloud.min(axis=0) if origin is None else origin
    cells = np.floor((cloud - origin) / scale).astype(np.int64)
    return int(len(np.unique(cells, axis=0)))


def box_counting_dimension(cloud, scales, shifts: int = GRID_SHIFTS) -> DimensionEstimate:
    """Box-counting slope with counts averaged over ``shifts`` grid offsets per axis.

    A single grid anchored at the cloud corner biases the coarse counts;
    averaging over shifted grids removes most of that lattice effect.
    """
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    if cloud.size == 0:
        raise DegenerateFit("empty cloud")
    base = cloud.min(axis=0)
    offsets = np.array(list(itertools.product(np.arange(shifts) / shifts, repeat=cloud.shape[1])))
    counts = [float(np.mean([cover_count(cloud, s, base - s * o) for o in offsets])) for s in scales]
    return dimension_from_profile(scales, counts, "boxCount")


def moran_dimension(count: int, ratio_ln: float) -> DimensionEstimate:
    value = 0.0 if count == 1 else math.log(count) / -ratio_ln
    return DimensionEstimate("moranExact", value)


def base_dimension(instance) -> DimensionEstimate:
    """Dimension of the base Cantor set E."""
    return moran_dimension(instance.base.count, instance.params.d_ln)


def cylinder_dimension_fiber(instance, levels: int = 7) -> DimensionEstimate:
    p = instance.params
    Mp = p.Mprime
    value = 0.0 if Mp == 1 else math.log(Mp) / -p.t_ln
    profile = [(math.exp(k * p.t_ln), Mp ** k) for k in range(1, levels + 1)]
    return DimensionEstimate("cylinderExact", value, profile)


def unit_directions(n: int, count: int | None = None) -> np.ndarray:
    if n == 2:
        count = 64 if count is None else count
        ang = 2 * math.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    count = 2 * n * 16 if count is None else count
    v = np.random.default_rng(DIRECTION_SEED).standard_normal((count, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass
class QCRatioStats:
    samples: list  # (x, r, L, l, ratio)
    maxRatio: float
    analyticBound: float
    conditioningOracle: float = float("nan")

    def to_json(self) -> dict:
        return {"maxRatio": self.maxRatio, "analyticBound": self.analyticBound,
                "conditioningOracle": self.conditioningOracle, "sampleCount": len(self.samples)}


def ratio_samples(fmap, pts, radii, directions: np.ndarray) -> list:
    """(x, r, L, l, L/l) for a vectorised map ``fmap`` over circles of radius r."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    m, n = pts.shape
    D = len(directions)
    out = []
    for r in radii:
        ring = (pts[:, None, :] + r * directions[None, :, :]).reshape(-1, n)
        centre = fmap(pts)
        img = fmap(ring).reshape(m, D, n)
        dist = np.linalg.norm(img - centre[:, None, :], axis=2)
        L, l = dist.max(axis=1), dist.min(axis=1)
        for i in range(m):
            out.append((pts[i].copy(), float(r), float(L[i]), float(l[i]), float(L[i] / l[i])))
    return out


def sample_shell(instance, count: int, seed: int = 0) -> np.ndarray:
    """Uniform points of the fundamental shell (closed box minus open holes)."""
    rng = np.random.default_rng(seed)
    Q = instance.Q
    got = []
    need = count
    while need > 0:
        pts = Q.lo_arr + rng.random((2 * need + 16, Q.n)) * Q.extents
        pts = pts[instance.product.locate(pts, closed=False) == 0]
        got.append(pts[:need])
        need -= len(got[-1])
    return np.concatenate(got)


def _conditioning(jac: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(jac, compute_uv=False)
    return s[:, 0] / s[:, -1]


def qc_ratio_sample(instance, gm, points, radii, directions: int | None = None,
                    seed: int = 0) -> QCRatioStats:
    """Sampled L/l ratios of Phi; ``points`` is an array or a shell sample count.

    The conditioning oracle is the largest singular-value ratio among the
    composed affine pieces met by the samples (the chain Jacobian of phi at
    each resolved shell point; similarity factors do not change it).
    """
    pts = sample_shell(instance, points, seed) if isinstance(points, (int, np.integer)) else np.atleast_2d(points)
    dirs = unit_directions(instance.n, directions)
    oracle = 0.0
    resolved = []

    def fmap(x):
        img, _, _ = evaluate_Phi_many(instance, gm, x)
        resolved.append(x)
        return img

    samples = ratio_samples(fmap, pts, radii, dirs)
    for x in resolved:
        y = _shell_preimages(instance, x)
        if len(y):
            oracle = max(oracle, float(np.max(_conditioning(gm.evaluate(y, check_holes=False)[1]))))
    ratios = [s[4] for s in samples]
    bound = analytic_qc_bound(instance).bound
    return QCRatioStats(samples, float(max(ratios)), bound, oracle)


def _shell_preimages(instance, x, depth_limit: int = 12) -> np.ndarray:
    """Descend points of Q into the fundamental shell, dropping unresolved ones."""
    x = x[instance.Q.contains(x, closed=True)]
    for _ in range(depth_limit + 1):
        k = instance.product.locate(x, closed=False)
        if not np.any(k):
            return x
        x = x.copy()
        hit = k > 0
        x[hit] = instance.product.apply_index_inverse(k[hit], x[hit])
    return x[instance.product.locate(x, closed=False) == 0]


@dataclass
class SobolevReport:
    q: float
    shellEnergyEstimate: float | None = None
    halfwidth: float | None = None
    totalBound: float | None = None
    sampleCount: int = 0
    note: str = ""

    def to_json(self) -> dict:
        return {"q": self.q, "shellEnergyEstimate": self.shellEnergyEstimate,
                "halfwidth": self.halfwidth, "totalBound": self.totalBound,
                "sampleCount": self.sampleCount, "note": self.note}


GRID_PER_AXIS = {2: 16}
PILOT_PER_STRATUM = 32
MAX_STRATA = 16384


def _stratum_rng(seed: int, key: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, key], counter=[stream, 0, 0, 0]))


def _energy_density(instance, gm, pts: np.ndarray) -> np.ndarray:
    vals = np.zeros(len(pts))
    shell = instance.product.locate(pts, closed=False) == 0
    if np.any(shell):
        jac = gm.evaluate(pts[shell], check_holes=False)[1]
        vals[shell] = np.linalg.norm(jac, ord=2, axis=(1, 2)) ** instance.params.p
    return vals


def _draw(lo: np.ndarray, width: np.ndarray, rng, count: int) -> np.ndarray:
    return lo + rng.random((count, len(lo))) * width


def build_strata(instance, gm, seed: int = 0, max_strata: int = MAX_STRATA):
    """Pilot-driven dyadic refinement of a uniform grid over Q.

    Each round splits (in half along every axis) the quarter of the strata
    with the largest pilot spread, volume times standard deviation, until
    ``max_strata`` is reached.  Returns (lows, widths, pilot std, keys); the
    result depends only on the seed.
    """
    n = instance.n
    Q = instance.Q
    g = GRID_PER_AXIS.get(n, 4)
    width = Q.extents / g
    idx = np.array(np.unravel_index(np.arange(g ** n), (g,) * n)).T
    lows = Q.lo_arr + idx * width
    widths = np.broadcast_to(width, lows.shape).copy()
    keys = np.arange(len(lows))
    children = 2 ** n
    bits = np.array([[(c >> a) & 1 for a in range(n)] for c in range(children)])

    def pilot(lo, w, key):
        pts = np.concatenate([_draw(lo[i], w[i], _stratum_rng(seed, int(key[i]), 1), PILOT_PER_STRATUM)
                              for i in range(len(lo))])
        vals = _energy_density(instance, gm, pts).reshape(len(lo), PILOT_PER_STRATUM)
        return vals.std(axis=1, ddof=1)

    sd = pilot(lows, widths, keys)
    next_key = len(lows)
    while len(lows) + children - 1 <= max_strata:
        spread = sd * np.prod(widths, axis=1)
        room = (max_strata - len(lows)) // (children - 1)
        count = min(room, max(1, len(lows) // 4), int(np.count_nonzero(spread > 0)))
        if count == 0:
            break
        split = np.sort(np.argsort(-spread, kind="stable")[:count])
        keep = np.setdiff1d(np.arange(len(lows)), split)
        half = widths[split] / 2
        new_lo = (lows[split][:, None, :] + bits[None] * half[:, None, :]).reshape(-1, n)
        new_w = np.repeat(half, children, axis=0)
        new_key = next_key + np.arange(len(new_lo))
        next_key += len(new_lo)
        lows = np.concatenate([lows[keep], new_lo])
        widths = np.concatenate([widths[keep], new_w])
        keys = np.concatenate([keys[keep], new_key])
        sd = np.concatenate([sd[keep], pilot(new_lo, new_w, new_key)])
    return lows, widths, sd, keys


def shell_energy(instance, gm, sample_count: int, seed: int = 0, strata=None):
    """Stratified Monte Carlo of the integral of |D phi|^p over the shell.

    Half of the samples go to strata in proportion to volume and half in
    proportion to volume times pilot spread, with at least two per stratum,
    so doubling ``sample_count`` doubles every stratum.  Each stratum draws
    from its own Philox stream keyed by (seed, stratum).
    Returns (estimate, 99% halfwidth, samples used).
    """
    lows, widths, sd, keys = build_strata(instance, gm, seed) if strata is None else strata
    vols = np.prod(widths, axis=1)
    weight = vols * sd
    share = 0.5 * vols / vols.sum()
    if weight.sum() > 0:
        share = share + 0.5 * weight / weight.sum()
    else:
        share = 2 * share
    alloc = np.maximum(2, np.floor(share * sample_count).astype(np.int64))
    pts = np.concatenate([_draw(lows[s], widths[s], _stratum_rng(seed, int(keys[s]), 2), int(alloc[s]))
                          for s in range(len(vols))])
    vals = _energy_density(instance, gm, pts)
    bounds = np.concatenate([[0], np.cumsum(alloc)])
    means = np.add.reduceat(vals, bounds[:-1]) / alloc
    sq = np.add.reduceat(vals ** 2, bounds[:-1])
    var = np.maximum(sq - alloc * means ** 2, 0.0) / (alloc - 1)
    est = float(np.sum(vols * means))
    hw = Z99 * math.sqrt(float(np.sum(vols ** 2 * var / alloc)))
    return est, hw, int(alloc.sum())


def sobolev_energy(instance, gm, sample_count: int = 65536, seed: int = 0) -> SobolevReport:
    q = series_factor(instance.params)
    if not q < 1:
        raise DivergentSeries(q)
    if gm is None or instance.params.mode == "paper":
        return SobolevReport(q, note="shell estimate skipped (paper-mode magnitude)"
                             if instance.params.mode == "paper" else "shell estimate skipped (no generating map)")
    est, hw, N = shell_energy(instance, gm, sample_count, seed)
    return SobolevReport(q, est, hw, est / (1 - q), N)
