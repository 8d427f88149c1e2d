"""The generated map Phi: symbolic descent through cylinders, fiber images, analytic bound."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BadAddress, BudgetExceeded, NeedsGeneratingMap
from .ifs import Address, point_from_address

DEFAULT_DEPTH_LIMIT = 12
CLOUD_BUDGET = 10_000_000


@dataclass(frozen=True)
class FiberSpec:
    base_address: Address

    def __post_init__(self):
        if not self.base_address.symbols:
            raise BadAddress("fiber seed must be nonempty")

    def check(self, instance) -> None:
        self.base_address.check(instance.base.count)

    def base_point(self, instance, depth: int = 60) -> np.ndarray:
        """The point a of the base attractor selected by the address."""
        self.check(instance)
        pt, _ = point_from_address(instance.base, self.base_address, depth)
        return pt

    @classmethod
    def parse(cls, text: str) -> "FiberSpec":
        return cls(Address.parse(text))


@dataclass(frozen=True)
class AnalyticBound:
    rhoDom: float
    rhoTar: float
    kappa: int
    bound: float

    def to_json(self) -> dict:
        return {"rhoDom": self.rhoDom, "rhoTar": self.rhoTar, "kappa": self.kappa, "bound": self.bound}


def apply_word(system, word, pts) -> np.ndarray:
    """f_{w1} o f_{w2} o ... o f_{wm} applied to points (innermost map last in the word)."""
    out = np.asarray(pts, dtype=float)
    for k in reversed(tuple(word)):
        out = system.apply_index(k, out)
    return out


def _apply_words(system, words: np.ndarray, lengths: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Per-row words (padded, 0 = unused) applied to per-row points."""
    out = pts.copy()
    for level in range(words.shape[1] - 1, -1, -1):
        rows = np.flatnonzero(lengths > level)
        if len(rows):
            out[rows] = system.apply_index(words[rows, level], out[rows])
    return out


def evaluate_Phi_many(instance, gm, pts, depth_limit: int = DEFAULT_DEPTH_LIMIT):
    """Vectorised Phi: returns (images, error bounds, depths)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    m, n = pts.shape
    Q, S = instance.Q, instance.S
    T = instance.exterior
    out = T(pts)
    err = np.zeros(m)
    depth = np.zeros(m, dtype=np.int64)
    inside = np.flatnonzero(Q.contains(pts, closed=True))
    if len(inside) == 0:
        return out, err, depth
    words = np.zeros((len(inside), depth_limit), dtype=np.int64)
    y = pts[inside].copy()
    active = np.ones(len(inside), dtype=bool)
    level = 0
    while level < depth_limit and np.any(active):
        rows = np.flatnonzero(active)
        k = instance.product.locate(y[rows], closed=False)
        hit = k > 0
        stop = rows[~hit]
        active[stop] = False
        go = rows[hit]
        words[go, level] = k[hit]
        y[go] = instance.product.apply_index_inverse(k[hit], y[go])
        level += 1
    lengths = np.count_nonzero(words, axis=1)
    # rows still active reached the depth limit: test once more whether they sit in the shell
    deep = np.zeros(len(inside), dtype=bool)
    rows = np.flatnonzero(active)
    if len(rows):
        deep[rows] = instance.product.locate(y[rows], closed=False) > 0
    shell = ~deep
    z = np.empty_like(y)
    if np.any(shell):
        if gm is None:
            raise NeedsGeneratingMap("a generating map is required for points of the fundamental shell")
        z[shell] = gm.evaluate(y[shell], check_holes=False)[0]
    z[deep] = S.center
    out[inside] = _apply_words(instance.target, words, lengths, z)
    err[inside[deep]] = math.exp(depth_limit * instance.params.t_ln) * S.diam
    depth[inside] = lengths
    return out, err, depth


def evaluate_Phi(instance, gm, x, depth_limit: int = DEFAULT_DEPTH_LIMIT):
    """Phi at one point: (image, error bound)."""
    img, err, _ = evaluate_Phi_many(instance, gm, np.asarray(x, dtype=float)[None], depth_limit)
    return img[0], float(err[0])


@dataclass
class CylinderCheck:
    words: int
    points: int
    failures: list  # (word, point, image)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return {"ok": self.ok, "words": self.words, "points": self.points,
                "failures": [[list(w), list(map(float, x)), list(map(float, y))] for w, x, y in self.failures[:20]]}


def check_cylinder_correspondence(instance, gm, max_depth: int = 6, words: int = 200,
                                  per_word: int = 16, seed: int = 0, rel_tol: float = 1e-9) -> CylinderCheck:
    """Phi(h_w(Q)) must land in g_w(S) for sampled words w of length 1..max_depth.

    Points are h_w of shell points, so Phi resolves them without hitting the depth limit.
    """
    rng = np.random.default_rng(seed)
    K = instance.product.count
    S = instance.S
    tol = rel_tol * S.diam
    failures = []
    total = 0
    Q = instance.Q
    for _ in range(words):
        length = int(rng.integers(1, max_depth + 1))
        w = tuple(int(k) for k in rng.integers(1, K + 1, size=length))
        y = Q.lo_arr + rng.random((4 * per_word, Q.n)) * Q.extents
        y = y[instance.product.locate(y, closed=False) == 0][:per_word]
        x = apply_word(instance.product, w, y)
        img, _, _ = evaluate_Phi_many(instance, gm, x, depth_limit=max_depth + 2)
        back = img.copy()
        for k in w:
            back = instance.target.apply_index_inverse(k, back)
        # undo the contraction so the tolerance is measured in the target cylinder's scale
        slack = tol * math.exp(-length * instance.params.t_ln)
        bad = ~S.contains(back, closed=True, tol=slack)
        for i in np.flatnonzero(bad):
            failures.append((w, x[i], img[i]))
        total += len(y)
    return CylinderCheck(words, total, failures)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("QCE_THREADS", "1")))
    except ValueError:
        return 1


def fiber_image_cloud(instance, fiber: FiberSpec, depth: int) -> np.ndarray:
    """Points g_{(sigma|depth, tau)}(centre of S) for every fiber word tau, lexicographic in tau."""
    fiber.check(instance)
    Mp = instance.fiber.count
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    if depth * math.log(Mp) > math.log(CLOUD_BUDGET) + 1e-12:
        raise BudgetExceeded(f"{Mp}^{depth} points exceeds the budget of {CLOUD_BUDGET}")
    sigma = fiber.base_address.prefix(depth)
    product = instance.product
    target = instance.target
    c = instance.S.center[None, :]

    def expand(pts, levels):
        for lvl in levels:
            blocks = [target.apply_index(int(product.index(sigma[lvl], j)), pts) for j in range(1, Mp + 1)]
            pts = np.concatenate(blocks)
        return pts

    if depth == 0:
        return c.copy()
    inner = expand(c, range(depth - 1, 0, -1))
    workers = min(_threads(), Mp)
    top = [int(product.index(sigma[0], j)) for j in range(1, Mp + 1)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            blocks = list(pool.map(lambda k: target.apply_index(k, inner), top))
    else:
        blocks = [target.apply_index(k, inner) for k in top]
    return np.concatenate(blocks)


def minimal_kappa(d_ln: float, ratio_ln: float) -> int:
    """Least integer kappa >= 1 with d^(kappa-1) < ratio, from logarithms."""
    if ratio_ln > 0:
        return 1
    kappa = max(1, math.floor(ratio_ln / d_ln) + 1)
    while kappa > 1 and (kappa - 2) * d_ln < ratio_ln:
        kappa -= 1
    while not (kappa - 1) * d_ln < ratio_ln:
        kappa += 1
    return kappa


def analytic_qc_bound(instance) -> AnalyticBound:
    p = instance.params
    rho_dom, rho_tar = instance.cert_dom.rho, instance.cert_tar.rho
    ratio_ln = math.log(rho_dom) - math.log(2 * instance.Q.diam)
    kappa = minimal_kappa(p.d_ln, ratio_ln)
    bound_ln = math.log(2 * instance.S.diam) - (1 + kappa) * p.t_ln - math.log(rho_tar)
    bound = math.exp(bound_ln) if bound_ln < 700 else math.inf
    return AnalyticBound(rho_dom, rho_tar, kappa, bound)


def write_cloud_csv(path: str, pts: np.ndarray) -> None:
    n = pts.shape[1]
    header = ",".join(f"x{i + 1}" for i in range(n))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in pts:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
