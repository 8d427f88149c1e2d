"""Boxes, signed-permutation similarities, affine maps and simplices.

Rotation parts are restricted to signed axis permutations so that every
composition stays exactly representable.  A signed permutation acts by
``out[i] = signs[i] * x[perm[i]]`` (0-based ``perm``).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEGENERACY_TOL = 1e-14


@dataclass(frozen=True)
class Box:
    """Open axis-aligned box ``prod (lo_i, hi_i)``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lo and hi must be nonempty and of equal length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_center(cls, center, half) -> "Box":
        c = np.asarray(center, dtype=float)
        h = np.broadcast_to(np.asarray(half, dtype=float), c.shape)
        return cls(tuple(c - h), tuple(c + h))

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def lo_arr(self) -> np.ndarray:
        return np.array(self.lo)

    @property
    def hi_arr(self) -> np.ndarray:
        return np.array(self.hi)

    @property
    def extents(self) -> np.ndarray:
        return self.hi_arr - self.lo_arr

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo_arr + self.hi_arr)

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(self.extents))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def expand(self, margin: float) -> "Box":
        return Box(tuple(self.lo_arr - margin), tuple(self.hi_arr + margin))

    def contains(self, pts, closed: bool = False, tol: float = 0.0) -> np.ndarray:
        """Membership test for points of shape (..., n)."""
        p = np.asarray(pts, dtype=float)
        lo, hi = self.lo_arr, self.hi_arr
        if closed:
            return np.all((p >= lo - tol) & (p <= hi + tol), axis=-1)
        return np.all((p > lo + tol) & (p < hi - tol), axis=-1)

    def contains_box(self, other: "Box") -> bool:
        """True when the closure of ``other`` lies in this open box."""
        return bool(np.all(other.lo_arr > self.lo_arr) and np.all(other.hi_arr < self.hi_arr))

    def inner_margin(self, other: "Box") -> float:
        """Distance from the closure of ``other`` to the complement of this box."""
        return float(min(np.min(other.lo_arr - self.lo_arr), np.min(self.hi_arr - other.hi_arr)))

    def distance(self, other: "Box") -> float:
        """Euclidean distance between closures (0 when they meet)."""
        gap = np.maximum(0.0, np.maximum(other.lo_arr - self.hi_arr, self.lo_arr - other.hi_arr))
        return float(np.linalg.norm(gap))

    def corners(self) -> np.ndarray:
        """The 2^n corners; corner ``c`` has bit ``i`` set when it sits at ``hi_i``."""
        out = np.empty((2 ** self.n, self.n))
        for c in range(2 ** self.n):
            for i in range(self.n):
                out[c, i] = self.hi[i] if (c >> i) & 1 else self.lo[i]
        return out

    def sample_boundary(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Points on the boundary, faces chosen proportionally to their measure."""
        ext = self.extents
        face_area = np.array([np.prod(np.delete(ext, i)) for i in range(self.n)])
        probs = np.repeat(face_area, 2) / (2 * face_area.sum())
        faces = rng.choice(2 * self.n, size=count, p=probs)
        pts = self.lo_arr + rng.random((count, self.n)) * ext
        axis = faces // 2
        side = faces % 2
        rows = np.arange(count)
        pts[rows, axis] = np.where(side == 1, self.hi_arr[axis], self.lo_arr[axis])
        return pts

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_json(cls, data: dict) -> "Box":
        return cls(tuple(data["lo"]), tuple(data["hi"]))


def _perm_sign(perm: Sequence[int]) -> int:
    sign = 1
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


@dataclass(frozen=True)
class SignedPermutation:
    perm: tuple
    signs: tuple

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        signs = tuple(int(s) for s in self.signs)
        if sorted(perm) != list(range(len(perm))) or len(signs) != len(perm):
            raise ValueError(f"not a signed permutation: {perm}, {signs}")
        if any(s not in (-1, 1) for s in signs):
            raise ValueError("signs must be +1 or -1")
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "signs", signs)

    @classmethod
    def identity(cls, n: int) -> "SignedPermutation":
        return cls(tuple(range(n)), (1,) * n)

    @classmethod
    def from_matrix(cls, mat) -> "SignedPermutation":
        mat = np.asarray(mat, dtype=float)
        perm, signs = [], []
        for row in mat:
            nz = np.flatnonzero(np.abs(row) > 0)
            if len(nz) != 1:
                raise ValueError("matrix is not a scaled signed permutation")
            perm.append(int(nz[0]))
            signs.append(1 if row[nz[0]] > 0 else -1)
        return cls(tuple(perm), tuple(signs))

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def det(self) -> int:
        return _perm_sign(self.perm) * math.prod(self.signs)

    @property
    def is_identity(self) -> bool:
        return self.perm == tuple(range(self.n)) and all(s == 1 for s in self.signs)

    def matrix(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        for i, (p, s) in enumerate(zip(self.perm, self.signs)):
            m[i, p] = s
        return m

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x[..., list(self.perm)] * np.array(self.signs, dtype=float)

    def compose(self, other: "SignedPermutation") -> "SignedPermutation":
        """``self ∘ other``."""
        perm = tuple(other.perm[p] for p in self.perm)
        signs = tuple(s * other.signs[p] for s, p in zip(self.signs, self.perm))
        return SignedPermutation(perm, signs)

    def inverse(self) -> "SignedPermutation":
        perm = [0] * self.n
        signs = [1] * self.n
        for i, (p, s) in enumerate(zip(self.perm, self.signs)):
            perm[p] = i
            signs[p] = s
        return SignedPermutation(tuple(perm), tuple(signs))

    def to_json(self) -> dict:
        return {"perm": list(self.perm), "signs": list(self.signs)}

    @classmethod
    def from_json(cls, data: dict) -> "SignedPermutation":
        return cls(tuple(data["perm"]), tuple(data["signs"]))


def axis_cycle(n: int) -> SignedPermutation:
    """Orientation-preserving rotation part sending L_n -> L_1 -> ... -> L_{n-1} -> L_n.

    For even ``n`` the raw cycle has determinant -1; the sign on the axis
    receiving L_n is flipped to fix it.
    """
    perm = (n - 1,) + tuple(range(n - 1))
    signs = [1] * n
    rot = SignedPermutation(perm, tuple(signs))
    if rot.det < 0:
        signs[0] = -1
        rot = SignedPermutation(perm, tuple(signs))
    return rot


@dataclass(frozen=True)
class Similarity:
    """x -> scale * rot(x) + shift."""

    scale: float
    rot: SignedPermutation
    shift: tuple

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("similarity scale must be positive")
        shift = tuple(float(v) for v in np.asarray(self.shift, dtype=float).ravel())
        if len(shift) != self.rot.n:
            raise ValueError("shift dimension mismatch")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "shift", shift)

    @classmethod
    def identity(cls, n: int) -> "Similarity":
        return cls(1.0, SignedPermutation.identity(n), (0.0,) * n)

    @property
    def n(self) -> int:
        return self.rot.n

    @property
    def shift_arr(self) -> np.ndarray:
        return np.array(self.shift)

    def linear(self) -> np.ndarray:
        return self.scale * self.rot.matrix()

    def apply(self, x) -> np.ndarray:
        return self.scale * self.rot.apply(x) + self.shift_arr

    __call__ = apply

    def compose(self, other: "Similarity") -> "Similarity":
        """``self ∘ other``."""
        return Similarity(
            self.scale * other.scale,
            self.rot.compose(other.rot),
            self.scale * self.rot.apply(other.shift_arr) + self.shift_arr,
        )

    def inverse(self) -> "Similarity":
        inv = self.rot.inverse()
        return Similarity(1.0 / self.scale, inv, -inv.apply(self.shift_arr) / self.scale)

    def apply_inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.rot.inverse().apply(y - self.shift_arr) / self.scale

    def image_box(self, box: Box) -> Box:
        a = self.apply(box.lo_arr)
        b = self.apply(box.hi_arr)
        return Box(tuple(np.minimum(a, b)), tuple(np.maximum(a, b)))

    def as_affine(self) -> "AffineMap":
        return AffineMap(self.linear(), self.shift_arr)

    def to_json(self) -> dict:
        return {"scale": self.scale, "rot": self.rot.to_json(), "shift": list(self.shift)}


def compose(s1: Similarity, s2: Similarity) -> Similarity:
    return s1.compose(s2)


def invert(s: Similarity) -> Similarity:
    return s.inverse()


def apply(s: Similarity, x) -> np.ndarray:
    return s.apply(x)


class AffineMap:
    """x -> matrix @ x + offset."""

    def __init__(self, matrix, offset):
        self.matrix = np.array(matrix, dtype=float)
        self.offset = np.array(offset, dtype=float)

    @classmethod
    def identity(cls, n: int) -> "AffineMap":
        return cls(np.eye(n), np.zeros(n))

    @classmethod
    def box_to_box(cls, src: Box, dst: Box, rot: SignedPermutation | None = None) -> "AffineMap":
        """The affine map ``rot ∘ diag`` carrying ``src`` onto ``dst`` (about centers)."""
        n = src.n
        rot = rot or SignedPermutation.identity(n)
        R = rot.matrix()
        # rot maps axis perm[i] of the source to axis i of the target
        scale = np.empty(n)
        for i, p in enumerate(rot.perm):
            scale[p] = dst.extents[i] / src.extents[p]
        mat = R @ np.diag(scale)
        return cls(mat, dst.center - mat @ src.center)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.matrix.T + self.offset

    def compose(self, other: "AffineMap") -> "AffineMap":
        return AffineMap(self.matrix @ other.matrix, self.matrix @ other.offset + self.offset)

    def inverse(self) -> "AffineMap":
        inv = np.linalg.inv(self.matrix)
        return AffineMap(inv, -inv @ self.offset)


def signed_volume(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    n = v.shape[1]
    return float(np.linalg.det(v[1:] - v[0]) / math.factorial(n))


def simplex_orientation(vertices) -> str:
    """'positive', 'negative' or 'degenerate' for n+1 vertices in R^n."""
    v = np.asarray(vertices, dtype=float)
    edges = v[1:] - v[0]
    det = np.linalg.det(edges)
    scale = float(np.max(np.linalg.norm(edges, axis=1))) if len(edges) else 0.0
    if scale == 0.0 or abs(det) <= DEGENERACY_TOL * scale ** v.shape[1]:
        return "degenerate"
    return "positive" if det > 0 else "negative"


class AffinePiece:
    """A simplex with its image simplex; the affine map is fixed by vertex correspondence."""

    __slots__ = ("dom", "tgt", "linear", "offset", "_bary")

    def __init__(self, dom, tgt):
        self.dom = np.array(dom, dtype=float)
        self.tgt = np.array(tgt, dtype=float)
        n = self.dom.shape[1]
        if self.dom.shape != (n + 1, n) or self.tgt.shape != (n + 1, n):
            raise ValueError("a piece needs n+1 vertices in R^n on each side")
        de = (self.dom[1:] - self.dom[0]).T
        te = (self.tgt[1:] - self.tgt[0]).T
        try:
            self._bary = np.linalg.inv(de)
        except np.linalg.LinAlgError:
            self._bary = np.full((n, n), np.nan)
        self.linear = te @ self._bary
        self.offset = self.tgt[0] - self.linear @ self.dom[0]

    @property
    def n(self) -> int:
        return self.dom.shape[1]

    def barycentric(self, pts) -> np.ndarray:
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        lam = (p - self.dom[0]) @ self._bary.T
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    def __call__(self, x) -> np.ndarray:
        # anchored at the nearest vertex so thin simplices stay accurate
        x = np.asarray(x, dtype=float)
        p = np.atleast_2d(x)
        near = np.argmin(np.sum((self.dom[None] - p[:, None]) ** 2, axis=2), axis=1)
        out = self.tgt[near] + (p - self.dom[near]) @ self.linear.T
        return out.reshape(x.shape)

    def dom_volume(self) -> float:
        return signed_volume(self.dom)

    def tgt_volume(self) -> float:
        return signed_volume(self.tgt)

    def conditioning(self) -> float:
        s = np.linalg.svd(self.linear, compute_uv=False)
        return float(s[0] / s[-1])


def cube_vertices(n: int):
    return list(itertools.product((0, 1), repeat=n))
