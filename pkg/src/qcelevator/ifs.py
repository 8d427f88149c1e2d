"""Packed similarity systems, their products, addresses and cylinders.

Maps are never stored as lists: a packed system computes the translation of
map ``k`` from ``k`` in O(1), which is what lets paper-mode instances with
~1e15 branches exist at all.  Symbols are 1-based throughout, matching the
usual i = 1..M indexing; product index k = (i-1)*M' + j.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadAddress, InfeasibleParams, SeparationViolation
from .geometry import AffineMap, Box, SignedPermutation, Similarity, axis_cycle
from .params import InstanceParams

BRUTE_FORCE_LIMIT = 500


@dataclass(frozen=True)
class SeparationCert:
    rho: float  # half the distance from the union of image closures to the complement
    boundary_margin: float
    pairwise_gap: float

    def to_json(self) -> dict:
        gap = self.pairwise_gap if math.isfinite(self.pairwise_gap) else None
        return {"rho": self.rho, "boundary_margin": self.boundary_margin, "pairwise_gap": gap}


class PackedSystem:
    """K similarities of ratio r packed in a row along axis 1 of a non-cubical box."""

    def __init__(self, n: int, r: float, count: int, r_ln: float | None = None):
        self.n = n
        self.r = float(r)
        self.r_ln = math.log(r) if r_ln is None else r_ln
        self.count = int(count)
        ln_k = math.log(self.count)
        # a_i = K^{(n-i)/n}, i = 1..n
        self.heights = tuple(math.exp((n - i) / n * ln_k) for i in range(1, n + 1))
        self.heights_ln = tuple((n - i) / n * ln_k for i in range(1, n + 1))
        self.box = Box((0.0,) * n, self.heights)
        self.rot = axis_cycle(n)
        # image extent along output axis i comes from input axis perm[i]
        self.widths = np.array([self.r * self.heights[p] for p in self.rot.perm])
        self.gap = (self.heights[0] - self.count * self.widths[0]) / (self.count + 1)
        self.period = self.widths[0] + self.gap
        self.offsets = np.array([(self.heights[i] - self.widths[i]) / 2 for i in range(n)])
        self._base_lo = np.where(np.array(self.rot.signs) < 0, -self.widths, 0.0)

    @property
    def ratio(self) -> float:
        return self.r

    @property
    def ratio_ln(self) -> float:
        return self.r_ln

    def image_lo(self, k) -> np.ndarray:
        k = np.asarray(k)
        lo = np.broadcast_to(self.offsets, k.shape + (self.n,)).copy()
        lo[..., 0] = self.gap * k + (k - 1) * self.widths[0]
        return lo

    def shift(self, k) -> np.ndarray:
        return self.image_lo(k) - self._base_lo

    def map(self, k: int) -> Similarity:
        self._check_symbol(k)
        return Similarity(self.r, self.rot, self.shift(k))

    def image_box(self, k: int) -> Box:
        lo = self.image_lo(k)
        return Box(tuple(lo), tuple(lo + self.widths))

    def apply_index(self, k, pts) -> np.ndarray:
        return self.r * self.rot.apply(pts) + self.shift(k)

    def apply_index_inverse(self, k, pts) -> np.ndarray:
        return self.rot.inverse().apply(np.asarray(pts) - self.shift(k)) / self.r

    def locate(self, pts, closed: bool = False) -> np.ndarray:
        """Index of the image box containing each point, 0 where none."""
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        k = np.floor((p[:, 0] - self.gap) / self.period).astype(np.int64) + 1
        k = np.clip(k, 1, self.count)
        lo = self.image_lo(k)
        hi = lo + self.widths
        if closed:
            inside = np.all((p >= lo) & (p <= hi), axis=1)
        else:
            inside = np.all((p > lo) & (p < hi), axis=1)
        return np.where(inside, k, 0)

    def _check_symbol(self, k) -> None:
        if not 1 <= int(k) <= self.count:
            raise BadAddress(f"symbol {k} outside 1..{self.count}")

    def chain_holds(self) -> bool:
        """Heights chain 1/r^n = a_n/r^n > ... > a_1/r > K, compared in logs."""
        terms = [self.heights_ln[i] - (i + 1) * self.r_ln for i in range(self.n)]
        ok = all(terms[i + 1] > terms[i] for i in range(self.n - 1))
        return ok and terms[0] > math.log(self.count)

    def certificate(self) -> SeparationCert:
        margin = float(min(self.gap, *self.offsets[1:])) if self.n > 1 else float(self.gap)
        pair = float(self.gap) if self.count > 1 else math.inf
        return SeparationCert(0.5 * margin, margin, pair)

    def to_json(self) -> dict:
        return {
            "n": self.n, "r": self.r, "count": self.count, "heights": list(self.heights),
            "spacing": {"gap": float(self.gap), "period": float(self.period),
                        "offsets": [float(v) for v in self.offsets[1:]]},
        }


class ProductSystem:
    """h_{i,j}(x) = (h_i(x_1..x_{n-1}), h'_j(x_n)) on Q = Q_{n-1} x (0,1)."""

    def __init__(self, base: PackedSystem, fiber: PackedSystem):
        if fiber.n != 1:
            raise ValueError("fiber system must act on R")
        if not math.isclose(base.r, fiber.r, rel_tol=1e-15):
            raise ValueError("base and fiber ratios differ")
        self.base = base
        self.fiber = fiber
        self.n = base.n + 1
        self.count = base.count * fiber.count
        self.r = base.r
        self.r_ln = base.r_ln
        self.box = Box(base.box.lo + fiber.box.lo, base.box.hi + fiber.box.hi)
        self.rot = SignedPermutation(base.rot.perm + (base.n,), base.rot.signs + (1,))

    @property
    def ratio(self) -> float:
        return self.r

    @property
    def ratio_ln(self) -> float:
        return self.r_ln

    def pair(self, k):
        k = np.asarray(k) - 1
        return k // self.fiber.count + 1, k % self.fiber.count + 1

    def index(self, i, j):
        return (np.asarray(i) - 1) * self.fiber.count + np.asarray(j)

    def shift(self, k) -> np.ndarray:
        i, j = self.pair(k)
        return np.concatenate([self.base.shift(i), self.fiber.shift(j)], axis=-1)

    def map(self, k: int) -> Similarity:
        if not 1 <= int(k) <= self.count:
            raise BadAddress(f"symbol {k} outside 1..{self.count}")
        return Similarity(self.r, self.rot, self.shift(k))

    def map_pair(self, i: int, j: int) -> Similarity:
        return self.map(int(self.index(i, j)))

    def image_box(self, k: int) -> Box:
        i, j = self.pair(k)
        a, b = self.base.image_box(int(i)), self.fiber.image_box(int(j))
        return Box(a.lo + b.lo, a.hi + b.hi)

    def apply_index(self, k, pts) -> np.ndarray:
        return self.r * self.rot.apply(pts) + self.shift(k)

    def apply_index_inverse(self, k, pts) -> np.ndarray:
        return self.rot.inverse().apply(np.asarray(pts) - self.shift(k)) / self.r

    def locate(self, pts, closed: bool = False) -> np.ndarray:
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        i = self.base.locate(p[:, :-1], closed)
        j = self.fiber.locate(p[:, -1:], closed)
        return np.where((i > 0) & (j > 0), self.index(i, j), 0)

    def certificate(self) -> SeparationCert:
        cb, cf = self.base.certificate(), self.fiber.certificate()
        margin = min(cb.boundary_margin, cf.boundary_margin)
        return SeparationCert(0.5 * margin, margin, min(cb.pairwise_gap, cf.pairwise_gap))


@dataclass
class ExplicitSystem:
    """A hand-built list of similarities on a box (used for checks and fault injection)."""

    maps: list
    box: Box

    @property
    def count(self) -> int:
        return len(self.maps)

    @property
    def ratio(self) -> float:
        return max(m.scale for m in self.maps)

    @property
    def ratio_ln(self) -> float:
        return math.log(self.ratio)

    def map(self, k: int) -> Similarity:
        if not 1 <= k <= self.count:
            raise BadAddress(f"symbol {k} outside 1..{self.count}")
        return self.maps[k - 1]

    def image_box(self, k: int) -> Box:
        return self.map(k).image_box(self.box)


def build_rect_packing(n: int, r: float, K: int, r_ln: float | None = None) -> PackedSystem:
    r_ln = math.log(r) if r_ln is None else r_ln
    if K < 1:
        raise InfeasibleParams("K >= 1", f"K={K}")
    if not math.log(K) < -n * r_ln:
        raise InfeasibleParams("K < r^(-n)", f"K={K}, r={r}, n={n}")
    sys = PackedSystem(n, r, K, r_ln)
    if not sys.chain_holds():
        raise InfeasibleParams("height chain", f"K={K}, r={r}, n={n}")
    return sys


def _brute_force(sys) -> SeparationCert:
    box = sys.box
    imgs = [sys.image_box(k) for k in range(1, sys.count + 1)]
    margin = math.inf
    for k, b in enumerate(imgs, 1):
        m = box.inner_margin(b)
        if not m > 0:
            raise SeparationViolation("image closure not inside the open box", (k,))
        margin = min(margin, m)
    gap = math.inf
    if sys.count > 1:
        lo = np.array([b.lo for b in imgs])
        hi = np.array([b.hi for b in imgs])
        for a in range(sys.count - 1):
            sep = np.maximum(0.0, np.maximum(lo[a + 1:] - hi[a], lo[a] - hi[a + 1:]))
            dist = np.linalg.norm(sep, axis=1)
            worst = int(np.argmin(dist))
            if not dist[worst] > 0:
                raise SeparationViolation("image closures intersect", (a + 1, a + 2 + worst))
            gap = min(gap, float(dist[worst]))
    return SeparationCert(0.5 * margin, margin, gap)


def verify_strong_separation(sys) -> SeparationCert:
    """Certify strong separation; returns margins or raises with a witness."""
    if isinstance(sys, ExplicitSystem):
        return _brute_force(sys)
    cert = sys.certificate()
    if not cert.boundary_margin > 0:
        raise SeparationViolation("no positive margin to the boundary", ("boundary",))
    if sys.count > 1 and not cert.pairwise_gap > 0:
        raise SeparationViolation("adjacent images touch", (1, 2))
    if sys.count <= BRUTE_FORCE_LIMIT:
        bf = _brute_force(sys)
        if not math.isclose(bf.boundary_margin, cert.boundary_margin, rel_tol=1e-9, abs_tol=1e-15):
            raise SeparationViolation("analytic margin disagrees with brute force", ("margin",))
    return cert


def similarity_dimension(sys) -> float:
    if sys.count == 1:
        return 0.0
    return math.log(sys.count) / -sys.ratio_ln


@dataclass(frozen=True)
class Address:
    """Finite symbol sequence; a positive ``period`` repeats the last symbols forever."""

    symbols: tuple
    period: int = 0

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))
        if self.period < 0 or self.period > len(self.symbols):
            raise BadAddress(f"period {self.period} invalid for {len(self.symbols)} symbols")

    @property
    def infinite(self) -> bool:
        return self.period > 0

    def prefix(self, depth: int) -> tuple:
        s = self.symbols
        if depth <= len(s):
            return s[:depth]
        if not self.infinite:
            raise BadAddress(f"finite address of length {len(s)} has no depth-{depth} prefix")
        tail = s[len(s) - self.period:]
        extra = depth - len(s)
        return s + tuple(tail[i % self.period] for i in range(extra))

    def check(self, count: int) -> None:
        for sym in self.symbols:
            if not 1 <= sym <= count:
                raise BadAddress(f"symbol {sym} outside 1..{count}")

    def __str__(self) -> str:
        body = ",".join(str(s) for s in self.symbols)
        return f"{body}|{self.period}" if self.period else body

    @classmethod
    def parse(cls, text: str) -> "Address":
        body, _, per = text.partition("|")
        try:
            syms = tuple(int(s) for s in body.split(",") if s.strip())
            period = int(per) if per else 0
        except ValueError as exc:
            raise BadAddress(f"cannot parse address {text!r}") from exc
        if not syms:
            raise BadAddress("empty address")
        return cls(syms, period)


def compose_address(sys, symbols) -> Similarity:
    """f_sigma = f_{s1} o f_{s2} o ... o f_{sk}."""
    out = Similarity.identity(sys.box.n)
    for s in symbols:
        out = out.compose(sys.map(s))
    return out


def point_from_address(sys, addr: Address, depth: int):
    addr.check(sys.count)
    prefix = addr.prefix(depth)
    x = sys.box.center
    for s in reversed(prefix):
        x = sys.map(s).apply(x)
    return x, math.exp(depth * sys.ratio_ln) * sys.box.diam


def locate_addresses(sys, pts, depth: int, closed: bool = True) -> np.ndarray:
    """Cylinder addresses (m, depth) of points; 0 once a point leaves every cylinder."""
    y = np.atleast_2d(np.array(pts, dtype=float))
    out = np.zeros((len(y), depth), dtype=np.int64)
    alive = np.ones(len(y), dtype=bool)
    for level in range(depth):
        idx = np.where(alive)[0]
        if not len(idx):
            break
        k = sys.locate(y[idx], closed=closed)
        hit = k > 0
        out[idx[hit], level] = k[hit]
        alive[idx[~hit]] = False
        y[idx[hit]] = sys.apply_index_inverse(k[hit], y[idx[hit]])
    return out


@dataclass
class ConstructionInstance:
    params: InstanceParams
    base: PackedSystem
    fiber: PackedSystem
    product: ProductSystem
    target: PackedSystem
    cert_dom: SeparationCert
    cert_tar: SeparationCert
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def Q(self) -> Box:
        return self.product.box

    @property
    def S(self) -> Box:
        return self.target.box

    @property
    def exterior(self) -> AffineMap:
        """Diagonal positive affine map carrying Q onto S."""
        return AffineMap.box_to_box(self.Q, self.S)

    def index(self, i, j):
        return self.product.index(i, j)

    def pair(self, k):
        return self.product.pair(k)

    def prescribed_hole_map(self, k: int) -> AffineMap:
        """g_k o T o h_k^{-1}: the value the generating map must take on hole k's boundary."""
        T = self.exterior
        return self.target.map(k).as_affine().compose(T).compose(self.product.map(k).inverse().as_affine())

    def hole_rotation(self) -> SignedPermutation:
        """Signed-permutation factor of the hole maps after the exterior map."""
        T = self.exterior
        lin = self.prescribed_hole_map(1).matrix @ np.linalg.inv(T.matrix)
        return SignedPermutation.from_matrix(np.where(np.abs(lin) > 1e-300, lin, 0.0))

    def to_json(self) -> dict:
        return {
            "schemaVersion": 1,
            "params": self.params.to_json(),
            "systems": {
                "base": self.base.to_json(),
                "fiber": self.fiber.to_json(),
                "target": self.target.to_json(),
            },
            "certificates": {
                "rho_dom": self.cert_dom.rho,
                "rho_tar": self.cert_tar.rho,
                "pairwise_gap": {"domain": self.cert_dom.to_json()["pairwise_gap"],
                                 "target": self.cert_tar.to_json()["pairwise_gap"]},
            },
        }


def build_instance_systems(params: InstanceParams) -> ConstructionInstance:
    n = params.n
    if not math.log(params.M) + math.log(params.Mprime) < -n * params.t_ln:
        raise InfeasibleParams("M M' < t^(-n)", f"M M'={params.M * params.Mprime}")
    base = build_rect_packing(n - 1, params.d, params.M, params.d_ln)
    fiber = build_rect_packing(1, params.d, params.Mprime, params.d_ln)
    product = ProductSystem(base, fiber)
    target = build_rect_packing(n, params.t, params.M * params.Mprime, params.t_ln)
    cert_dom = verify_strong_separation(product)
    cert_tar = verify_strong_separation(target)
    # paper-mode margins are analytic and legitimately far below double resolution
    for cert, box in ((cert_dom, product.box), (cert_tar, target.box)):
        if params.mode == "direct" and not cert.rho >= 1e-15 * box.diam:
            raise SeparationViolation("separation margin below resolution", ("margin", cert.rho))
    return ConstructionInstance(params, base, fiber, product, target, cert_dom, cert_tar)
