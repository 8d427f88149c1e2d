"""Locally supported piecewise-linear moves.

Every move is a PL homeomorphism of a closed support box W minus an inner
box A onto W minus B that fixes the boundary of W pointwise.  The frame is
cut into 2n frusta (one per face direction, corners of the inner box joined
to the matching corners of W) and each frustum is split with the Kuhn
pattern on its combinatorial cube, so neighbouring frusta agree on shared
faces.  Domain and target use the same vertex indices.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import LocationFailure, MoveValidationFailure, PointInHole
from ..geometry import AffineMap, AffinePiece, Box, SignedPermutation, simplex_orientation

FRAME = "frameRemap"
CORRIDOR = "corridorTranslate"
TWIST = "twist"
MAX_TWIST_LAYERS = 16
LOCATE_TOL = 1e-9


def _kuhn_paths(n: int):
    out = []
    for perm in itertools.permutations(range(n)):
        u = [0] * n
        verts = [tuple(u)]
        for m in perm:
            u[m] = 1
            verts.append(tuple(u))
        out.append(verts)
    return out


MAX_STRIP_PIECES = 64


def _quad_pair(od, ot, a, b, c, e):
    """Split quad a-b-c-e (outer a, b; inner c, e) along the better diagonal."""
    options = (((a, b, c), (a, c, e)), ((a, b, e), (b, c, e)))
    best = None
    for tri in options:
        pieces = []
        for t in tri:
            t = list(t)
            if np.linalg.det(od[t[1:]] - od[t[0]]) < 0:
                t[0], t[1] = t[1], t[0]
            pieces.append(AffinePiece(od[t], ot[t]))
        dets = [np.linalg.det(q.dom[1:] - q.dom[0]) for q in pieces] + \
               [np.linalg.det(q.tgt[1:] - q.tgt[0]) for q in pieces]
        score = max(q.conditioning() for q in pieces) if min(dets) > 0 else math.inf
        if best is None or score < best[0]:
            best = (score, pieces)
    return best[1]


def _planar_frustum_cells(layers_dom, layers_tgt, axis: int, side: int, flip: int) -> list[AffinePiece]:
    """A planar frustum cut into proportional strips of aspect near one.

    Each face edge maps affinely, so neighbouring frusta stay continuous
    whatever their strip counts.
    """
    other = 1 - axis
    ends = [side << axis, (side << axis) | (1 << other)]
    o_d, i_d = layers_dom[0][ends], layers_dom[1][ends]
    o_t, i_t = layers_tgt[0][ends], layers_tgt[1][ends]
    pieces = 1
    for o, i in ((o_d, i_d), (o_t, i_t)):
        thick = abs(o[0, axis] - i[0, axis])
        length = max(abs(o[1, other] - o[0, other]), abs(i[1, other] - i[0, other]))
        if thick > 0:
            pieces = max(pieces, math.ceil(length / thick))
    pieces = min(pieces, MAX_STRIP_PIECES)
    s = np.linspace(0.0, 1.0, pieces + 1)[:, None]
    od = np.concatenate([(1 - s) * o_d[0] + s * o_d[1], (1 - s) * i_d[0] + s * i_d[1]])
    ot = np.concatenate([(1 - s) * o_t[0] + s * o_t[1], (1 - s) * i_t[0] + s * i_t[1]])
    m = pieces + 1
    cells = []
    for j in range(pieces):
        quad = (j, j + 1, m + j + 1, m + j)
        cells.extend(_quad_pair(od, ot, *quad))
    return cells


def frustum_cells(layers_dom, layers_tgt, axis: int, side: int, flip: int = 0) -> list[AffinePiece]:
    """Kuhn simplices of one frustum; ``flip`` reflects the Kuhn origin on the given axes."""
    n = layers_dom[0].shape[1]
    if n == 2:
        return _planar_frustum_cells(layers_dom, layers_tgt, axis, side, flip)
    face_axes = [i for i in range(n) if i != axis]
    cells = []
    for path in _kuhn_paths(n):
        dom, tgt = [], []
        for u in path:
            corner = side << axis
            for idx, ax in enumerate(face_axes):
                corner |= (u[idx] ^ ((flip >> ax) & 1)) << ax
            layer = u[n - 1]
            dom.append(layers_dom[layer][corner])
            tgt.append(layers_tgt[layer][corner])
        dom, tgt = np.array(dom), np.array(tgt)
        if np.linalg.det(dom[1:] - dom[0]) < 0:
            dom[[0, 1]] = dom[[1, 0]]
            tgt[[0, 1]] = tgt[[1, 0]]
        cells.append(AffinePiece(dom, tgt))
    return cells


def frame_cells(outer_dom, inner_dom, outer_tgt, inner_tgt, flip=0) -> list[AffinePiece]:
    """Simplices of the frame between two nested corner sets.

    Corner arrays are indexed by bitmask (bit i set = upper side on axis i).
    ``flip`` is one mask for every frustum, or a callable (axis, side) -> mask;
    per-frustum masks are only conforming when n == 2.
    """
    outer_dom = np.asarray(outer_dom, dtype=float)
    n = outer_dom.shape[1]
    layers_dom = (outer_dom, np.asarray(inner_dom, dtype=float))
    layers_tgt = (np.asarray(outer_tgt, dtype=float), np.asarray(inner_tgt, dtype=float))
    pick = flip if callable(flip) else (lambda a, s: flip)
    cells = []
    for axis in range(n):
        for side in (0, 1):
            cells.extend(frustum_cells(layers_dom, layers_tgt, axis, side, pick(axis, side)))
    return cells


@dataclass
class MoveReport:
    ok: bool
    failures: list = field(default_factory=list)  # (check, simplex id or None, detail)
    max_conditioning: float = float("nan")

    def to_json(self) -> dict:
        return {"ok": self.ok, "failures": [list(f) for f in self.failures],
                "max_conditioning": self.max_conditioning}


class Move:
    def __init__(self, kind: str, support: Box, inner_before: Box, inner_after: Box,
                 cells: list[AffinePiece], boundary_map: AffineMap,
                 rotation: SignedPermutation | None = None, layers: int = 0,
                 plane: tuple | None = None):
        self.kind = kind
        self.support = support
        self.inner_before = inner_before
        self.inner_after = inner_after
        self.rotation = rotation
        self.layers = layers
        self.plane = plane
        self.boundary_map = boundary_map
        self.set_cells(cells)

    def set_cells(self, cells) -> None:
        self.cells = list(cells)
        self._dom0 = np.array([c.dom[0] for c in self.cells])
        self._bary = np.array([c._bary for c in self.cells])
        self._lin = np.array([c.linear for c in self.cells])
        self._off = np.array([c.offset for c in self.cells])
        self._dverts = np.array([c.dom for c in self.cells])
        self._tverts = np.array([c.tgt for c in self.cells])
        self._scale = self.support.diam
        self._grid = None

    def _candidates(self):
        """Bucket grid over the support listing the cells that meet each bucket."""
        if self._grid is None:
            W = self.support
            g = max(1, min(64, int(round(len(self.cells) ** (1.0 / self.n)))))
            size = W.extents / g
            lo = np.floor((self._dverts.min(axis=1) - W.lo_arr) / size - 1e-9).astype(np.int64)
            hi = np.floor((self._dverts.max(axis=1) - W.lo_arr) / size + 1e-9).astype(np.int64)
            lo, hi = np.clip(lo, 0, g - 1), np.clip(hi, 0, g - 1)
            buckets = [[] for _ in range(g ** self.n)]
            for c in range(len(self.cells)):
                for idx in itertools.product(*[range(a, b + 1) for a, b in zip(lo[c], hi[c])]):
                    buckets[int(np.ravel_multi_index(idx, (g,) * self.n))].append(c)
            width = max(len(b) for b in buckets)
            table = np.full((len(buckets), width), -1, dtype=np.int64)
            for i, b in enumerate(buckets):
                table[i, :len(b)] = b
            self._grid = (g, size, table)
        return self._grid

    @property
    def n(self) -> int:
        return self.support.n

    def _barycentric(self, pts: np.ndarray) -> np.ndarray:
        """min barycentric coordinate of each point in each cell, shape (m, cells)."""
        rel = pts[:, None, :] - self._dom0[None, :, :]
        lam = np.einsum("cij,mcj->mci", self._bary, rel)
        lam0 = 1.0 - lam.sum(axis=2)
        return np.minimum(lam0, lam.min(axis=2))

    def _locate(self, sub: np.ndarray):
        """Best cell (largest min barycentric) and its score for each point."""
        if len(self.cells) <= 16:
            minlam = self._barycentric(sub)
            best = np.argmax(minlam, axis=1)
            return best, minlam[np.arange(len(sub)), best]
        g, size, table = self._candidates()
        cell = np.clip(np.floor((sub - self.support.lo_arr) / size).astype(np.int64), 0, g - 1)
        cand = table[np.ravel_multi_index(tuple(cell.T), (g,) * self.n)]
        safe = np.maximum(cand, 0)
        rel = sub[:, None, :] - self._dom0[safe]
        lam = np.einsum("mcij,mcj->mci", self._bary[safe], rel)
        minlam = np.minimum(1.0 - lam.sum(axis=2), lam.min(axis=2))
        minlam[cand < 0] = -np.inf
        k = np.argmax(minlam, axis=1)
        rows = np.arange(len(sub))
        return safe[rows, k], minlam[rows, k]

    def apply(self, pts, jac=None, cell_ids=None):
        """Map points in place-free fashion; returns (images, jacobians)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = pts.copy()
        jac = np.broadcast_to(np.eye(self.n), (len(pts), self.n, self.n)).copy() if jac is None else jac.copy()
        inside = self.support.contains(pts, closed=True, tol=1e-12 * self._scale)
        idx = np.flatnonzero(inside)
        for start in range(0, len(idx), 4096):
            chunk = idx[start:start + 4096]
            sub = pts[chunk]
            best, score = self._locate(sub)
            bad = score < -LOCATE_TOL
            if np.any(bad):
                p = sub[np.flatnonzero(bad)[0]]
                if self.inner_before.contains(p, tol=LOCATE_TOL * self.inner_before.diam):
                    raise PointInHole(p, self.kind)
                raise LocationFailure(f"{self.kind} move could not locate point {tuple(p)}")
            # evaluate from the nearest vertex of the cell to keep sliver cells accurate
            dv = self._dverts[best]
            near = np.argmin(np.sum((dv - sub[:, None, :]) ** 2, axis=2), axis=1)
            rows = np.arange(len(chunk))
            base_d = dv[rows, near]
            base_t = self._tverts[best][rows, near]
            out[chunk] = base_t + np.einsum("mij,mj->mi", self._lin[best], sub - base_d)
            jac[chunk] = np.einsum("mij,mjk->mik", self._lin[best], jac[chunk])
            if cell_ids is not None:
                cell_ids[chunk] = best
        return out, jac

    def locate_one(self, x: np.ndarray, hint: int = 0) -> int:
        """Brute-force scan starting at ``hint``; -1 when outside the support."""
        if not self.support.contains(x, closed=True, tol=1e-12 * self._scale):
            return -1
        order = itertools.chain([hint], range(len(self.cells)))
        best, best_score = -1, -math.inf
        for c in order:
            if not 0 <= c < len(self.cells):
                continue
            lam = self.cells[c].barycentric(x)[0]
            s = lam.min()
            if s >= -LOCATE_TOL:
                return c
            if s > best_score:
                best, best_score = c, s
        if self.inner_before.contains(x, tol=LOCATE_TOL * self.inner_before.diam):
            raise PointInHole(x, self.kind)
        raise LocationFailure(f"{self.kind} move could not locate point {tuple(x)}")

    def validate(self) -> MoveReport:
        return validate_move(self)

    def to_json(self, vertex_sink=None) -> dict:
        data = {
            "kind": self.kind,
            "support": self.support.to_json(),
            "innerBefore": self.inner_before.to_json(),
            "innerAfter": self.inner_after.to_json(),
            "rotation": self.rotation.to_json() if self.rotation is not None else None,
            "plane": list(self.plane) if self.plane is not None else None,
            "layers": self.layers,
            "boundaryMap": {"matrix": self.boundary_map.matrix.tolist(),
                            "offset": self.boundary_map.offset.tolist()},
        }
        dom = np.array([c.dom for c in self.cells])
        tgt = np.array([c.tgt for c in self.cells])
        if vertex_sink is None:
            data["cells"] = {"dom": dom.tolist(), "tgt": tgt.tolist()}
        else:
            data["cells"] = {"dom": vertex_sink(dom), "tgt": vertex_sink(tgt),
                             "shape": list(dom.shape)}
        return data

    @classmethod
    def from_json(cls, data: dict, vertex_source=None) -> "Move":
        cells = data["cells"]
        if vertex_source is None:
            dom, tgt = np.array(cells["dom"]), np.array(cells["tgt"])
        else:
            shape = tuple(cells["shape"])
            dom = vertex_source(cells["dom"]).reshape(shape)
            tgt = vertex_source(cells["tgt"]).reshape(shape)
        bm = data["boundaryMap"]
        rot = data.get("rotation")
        return cls(
            data["kind"], Box.from_json(data["support"]), Box.from_json(data["innerBefore"]),
            Box.from_json(data["innerAfter"]),
            [AffinePiece(a, b) for a, b in zip(dom, tgt)],
            AffineMap(bm["matrix"], bm["offset"]),
            SignedPermutation.from_json(rot) if rot else None,
            int(data.get("layers", 0)),
            tuple(data["plane"]) if data.get("plane") else None,
        )


def validate_move(move: Move, vol_rtol: float = 1e-9, bnd_tol: float = 1e-12) -> MoveReport:
    """Orientation of every simplex, tiling by volume, and boundary conditions."""
    failures = []
    conds = []
    for i, c in enumerate(move.cells):
        if simplex_orientation(c.dom) != "positive":
            failures.append(("domain orientation", i, simplex_orientation(c.dom)))
        o = simplex_orientation(c.tgt)
        if o != "positive":
            failures.append(("target orientation", i, o))
        else:
            conds.append(c.conditioning())
    W, A, B = move.support, move.inner_before, move.inner_after
    dom_vol = sum(c.dom_volume() for c in move.cells)
    tgt_vol = sum(c.tgt_volume() for c in move.cells)
    for name, got, want in (("domain tiling volume", dom_vol, W.volume - A.volume),
                            ("target tiling volume", tgt_vol, W.volume - B.volume)):
        if not math.isclose(got, want, rel_tol=vol_rtol):
            failures.append((name, None, f"{got!r} != {want!r}"))
    tol = bnd_tol * W.diam
    P = np.concatenate([c.dom for c in move.cells])
    Qv = np.concatenate([c.tgt for c in move.cells])
    owner = np.repeat(np.arange(len(move.cells)), [len(c.dom) for c in move.cells])
    outer = np.any(np.isclose(P, W.lo_arr, rtol=0, atol=tol) | np.isclose(P, W.hi_arr, rtol=0, atol=tol), axis=1)
    moved = np.max(np.abs(P - Qv), axis=1) > tol
    for j in np.flatnonzero(outer & moved):
        failures.append(("outer boundary fixed", int(owner[j]), f"{P[j]} -> {Qv[j]}"))
    on_inner = ~outer & A.contains(P, closed=True, tol=tol) & ~A.contains(P, tol=-tol)
    if np.any(on_inner):
        rows = np.flatnonzero(on_inner)
        off = np.max(np.abs(move.boundary_map(P[rows]) - Qv[rows]), axis=1) > tol
        for j in rows[off]:
            failures.append(("inner boundary affine", int(owner[j]), f"{P[j]} -> {Qv[j]}"))
    return MoveReport(not failures, failures, max(conds) if conds else float("nan"))


def require_valid(move: Move) -> Move:
    """Return ``move`` or raise on its first failed check, naming the simplex."""
    rep = validate_move(move)
    if not rep.ok:
        check, sid, detail = rep.failures[0]
        raise MoveValidationFailure(f"{move.kind} failed {check}: {detail}", sid)
    return move


def _require_inside(W: Box, inner: Box, what: str) -> None:
    if not W.contains_box(inner):
        raise ValueError(f"{what} closure must lie strictly inside the support")


def _graded_boxes(W: Box, inner: Box, layers: int) -> list[np.ndarray]:
    """Corner sets from W (index 0) to ``inner`` (index ``layers``).

    Per axis the layer extents grow geometrically from the inner box out to W,
    which keeps the frame close to a log-radial profile.
    """
    ratio = W.extents / inner.extents
    out = []
    for i in range(layers + 1):
        f = (layers - i) / layers
        w = np.where(ratio > 1 + 1e-12, (ratio ** f - 1) / np.maximum(ratio - 1, 1e-300), f)
        lo = inner.lo_arr - (inner.lo_arr - W.lo_arr) * w
        hi = inner.hi_arr + (W.hi_arr - inner.hi_arr) * w
        out.append(Box(tuple(lo), tuple(hi)).corners() if 0 < i < layers else
                   (W.corners() if i == 0 else inner.corners()))
    return out


def auto_layers(W: Box, A: Box, B: Box) -> int:
    """One layer per doubling of the larger inner/outer size ratio."""
    ratio = max(float(np.max(W.extents / A.extents)), float(np.max(W.extents / B.extents)))
    return max(1, math.ceil(math.log2(ratio)))


def build_frame_remap(W: Box, A: Box, B: Box, kind: str = FRAME, layers: int = 1) -> Move:
    _require_inside(W, A, "inner box A")
    _require_inside(W, B, "inner box B")
    layers = max(1, int(layers))
    dom = _graded_boxes(W, A, layers)
    tgt = _graded_boxes(W, B, layers)
    cells = []
    for i in range(layers):
        cells.extend(frame_cells(dom[i], dom[i + 1], tgt[i], tgt[i + 1]))
    return require_valid(Move(kind, W, A, B, cells, AffineMap.box_to_box(A, B), layers=layers))


def plane_rotation(n: int, plane: tuple, theta: float) -> np.ndarray:
    i, j = plane
    R = np.eye(n)
    c, s = math.cos(theta), math.sin(theta)
    R[i, i], R[i, j], R[j, i], R[j, j] = c, -s, s, c
    return R


def quarter_turn(n: int, plane: tuple) -> SignedPermutation:
    """The 90 degree rotation e_i -> e_j, e_j -> -e_i in plane (i, j)."""
    i, j = plane
    perm = list(range(n))
    signs = [1] * n
    perm[i], perm[j] = j, i
    signs[i] = -1
    return SignedPermutation(tuple(perm), tuple(signs))


def planar_factors(rho: SignedPermutation) -> list[tuple]:
    """Quarter-turn planes whose successive application equals ``rho``.

    Returns planes in application order: the first entry is applied first.
    """
    if rho.det != 1:
        raise ValueError("rotation part must preserve orientation")
    n = rho.n
    cur = rho
    left = []  # factors R with R_m ... R_1 rho = id
    for k in range(n):
        col = cur.matrix()[:, k]
        m = int(np.flatnonzero(col)[0])
        s = int(col[m])
        if m == k and s == 1:
            continue
        if m == k:
            other = k + 1
            for _ in range(2):
                left.append((k, other))
                cur = quarter_turn(n, (k, other)).compose(cur)
            continue
        plane = (m, k) if s == 1 else (k, m)
        left.append(plane)
        cur = quarter_turn(n, plane).compose(cur)
    if not cur.is_identity:
        raise ValueError("failed to factor rotation")
    # rho = R_1^{-1} ... R_m^{-1}; R^{-1} for plane (a, b) is the quarter turn in (b, a)
    return [(b, a) for (a, b) in reversed(left)]


def _positive(cells) -> bool:
    return all(np.linalg.det(c.tgt[1:] - c.tgt[0]) > 0 for c in cells)


def _twist_layers(W: Box, A: Box, plane: tuple, L: int, exact_end: np.ndarray):
    """Domain and target corner sets; half-sizes shrink geometrically toward A."""
    n = W.n
    c = A.center
    half0, half1 = W.extents / 2, A.extents / 2
    w0, w1 = W.center, A.center
    out = []
    for ell in range(L + 1):
        f = ell / L
        half = half0 * (half1 / half0) ** f
        dom = Box.from_center(w0 + (w1 - w0) * f, half).corners()
        if ell == 0:
            tgt = dom.copy()
        elif ell == L:
            tgt = exact_end
        else:
            R = plane_rotation(n, plane, f * math.pi / 2)
            tgt = (dom - c) @ R.T + c
        out.append((dom, tgt))
    return out


def _twist_cells(W: Box, A: Box, plane: tuple, L: int, exact_end: np.ndarray) -> list[AffinePiece]:
    n = W.n
    layers = _twist_layers(W, A, plane, L, exact_end)
    pairs = [((d0, d1), (t0, t1)) for (d0, t0), (d1, t1) in zip(layers, layers[1:])]
    if n == 2:
        # frusta meet only along edges, so each picks its own diagonal
        cells = []
        for ld, lt in pairs:
            for axis in range(n):
                for side in (0, 1):
                    options = [frustum_cells(ld, lt, axis, side, fl) for fl in range(2 ** n)]
                    cells.extend(next((o for o in options if _positive(o)), options[0]))
        return cells
    best = None
    for fl in range(2 ** n):
        cells = [c for ld, lt in pairs for c in frame_cells(ld[0], ld[1], lt[0], lt[1], fl)]
        if _positive(cells):
            return cells
        best = best or cells
    return best


def rotated_box(A: Box, rho: SignedPermutation) -> Box:
    """Image of A under ``rho`` applied about A's centre."""
    c = A.center
    pts = c + rho.apply(A.corners() - c)
    return Box(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))


RING_INNER_PAD = 1.05  # innermost circle radius over the half-diagonal of A
RING_OUTER_FILL = 0.9  # outermost circle radius over the inradius of W


def _unit_square_ring(m: int) -> np.ndarray:
    """4m points on the boundary of [-1, 1]^2, counterclockwise from (-1, -1)."""
    s = np.linspace(-1.0, 1.0, m + 1)[:-1]
    one = np.ones(m)
    return np.concatenate([np.column_stack([s, -one]), np.column_stack([one, s]),
                           np.column_stack([-s, one]), np.column_stack([-one, -s])])


def _ring_cells(rings_dom, rings_tgt) -> list[AffinePiece]:
    """Triangulate the strips between consecutive rings, picking each quad's diagonal."""
    cells = []
    N = len(rings_dom[0])
    for (od, idm), (ot, it) in zip(zip(rings_dom, rings_dom[1:]), zip(rings_tgt, rings_tgt[1:])):
        for j in range(N):
            k = (j + 1) % N
            options = [
                ([od[j], od[k], idm[k]], [ot[j], ot[k], it[k]], [od[j], idm[k], idm[j]], [ot[j], it[k], it[j]]),
                ([od[j], od[k], idm[j]], [ot[j], ot[k], it[j]], [od[k], idm[k], idm[j]], [ot[k], it[k], it[j]]),
            ]
            best = None
            for d1, t1, d2, t2 in options:
                pieces = [AffinePiece(d1, t1), AffinePiece(d2, t2)]
                dets = [np.linalg.det(p.dom[1:] - p.dom[0]) for p in pieces] + \
                       [np.linalg.det(p.tgt[1:] - p.tgt[0]) for p in pieces]
                score = max(p.conditioning() for p in pieces) if min(dets) > 0 else math.inf
                if best is None or score < best[0]:
                    best = (score, pieces)
            cells.extend(best[1])
    return cells


def _planar_twist_cells(W: Box, A: Box, rho: SignedPermutation, L: int):
    """Quarter turn in the plane through circular rings.

    The rotation is spread over L strips between concentric circles; the strip
    from the boundary of W to the outer circle stays fixed and the strip from
    the inner circle to A turns rigidly.  Returns None when no circle fits
    between A and W.
    """
    cw, ca = W.center, A.center
    h_out = RING_OUTER_FILL * float(np.min(W.extents)) / 2 - float(np.max(np.abs(ca - cw)))
    h_in = RING_INNER_PAD * float(np.linalg.norm(A.extents)) / 2
    if not h_in < h_out:
        return None
    q = (h_out / h_in) ** (1.0 / L)
    m = max(2, math.ceil(2.0 / (1.0 - 1.0 / q)))
    unit = _unit_square_ring(m)
    # circles carry W's ring directions outside and A's inside; the blend is a
    # tangential reparametrisation absorbed by the turning strips
    ang_w = np.unwrap(np.arctan2(unit[:, 1] * W.extents[1], unit[:, 0] * W.extents[0]))
    ang_a = np.unwrap(np.arctan2(unit[:, 1] * A.extents[1], unit[:, 0] * A.extents[0]))
    R = rho.matrix()
    sign = 1.0 if R[1, 0] > 0 else -1.0
    dom = [cw + unit * W.extents / 2]
    tgt = [dom[0].copy()]
    for k in range(L + 1):
        ang = ang_w + (ang_a - ang_w) * k / L
        ring = ca + h_out * q ** (-k) * np.column_stack([np.cos(ang), np.sin(ang)])
        dom.append(ring)
        if k == L:
            tgt.append(ca + (ring - ca) @ R.T)
        else:
            tgt.append(ca + (ring - ca) @ plane_rotation(2, (0, 1), sign * k / L * math.pi / 2).T)
    inner = ca + unit * A.extents / 2
    dom.append(inner)
    tgt.append(ca + (inner - ca) @ R.T)
    return _ring_cells(dom, tgt)


def build_twist(W: Box, A: Box, rho: SignedPermutation, L: int = 4) -> Move:
    """Rotate the box A about its centre by a quarter turn while fixing the boundary of W.

    ``rho`` must be the identity or a single quarter turn in some coordinate
    plane; use :func:`build_twists` for general rotations.  The inner box
    after the move is ``rotated_box(A, rho)``.
    """
    _require_inside(W, A, "inner box A")
    n = W.n
    if rho.is_identity:
        outer = W.corners()
        cells = frame_cells(outer, A.corners(), outer, A.corners())
        return Move(TWIST, W, A, A, cells, AffineMap.identity(n), rho, L)
    planes = planar_factors(rho)
    if len(planes) != 1:
        raise ValueError("build_twist takes a single quarter turn; use build_twists")
    plane = planes[0]
    B = rotated_box(A, rho)
    _require_inside(W, B, "rotated inner box")
    c = A.center
    bmap = AffineMap(rho.matrix(), c - rho.matrix() @ c)
    if n == 2:
        cells = _planar_twist_cells(W, A, rho, max(1, int(L)))
        if cells is None:
            raise MoveValidationFailure("twist failed: no circle fits between the inner box and the support", None)
        move = Move(TWIST, W, A, B, cells, bmap, rho, max(1, int(L)), plane)
        rep = validate_move(move)
        if not rep.ok:
            check, sid, detail = rep.failures[0]
            raise MoveValidationFailure(f"twist failed {check}: {detail}", sid)
        return move
    exact_end = c + rho.apply(A.corners() - c)
    # a box that is not square in the plane turns rigidly inside its square hull
    half = A.extents / 2
    half[list(plane)] = max(half[plane[0]], half[plane[1]])
    C = Box.from_center(c, half)
    _require_inside(W, C, "square hull of A")
    core = []
    if not np.allclose(C.extents, A.extents, rtol=1e-12, atol=0.0):
        tiny = 1e-12 * float(np.prod(C.extents))
        for piece in frame_cells(C.corners(), A.corners(), C.corners(), A.corners()):
            # faces A shares with C leave zero-thickness frusta
            if abs(np.linalg.det(piece.dom[1:] - piece.dom[0])) > tiny:
                core.append(AffinePiece(piece.dom, bmap(piece.tgt)))
        exact_end = c + rho.apply(C.corners() - c)
    layers = max(1, int(L))
    last = None
    while True:
        cells = _twist_cells(W, C, plane, layers, exact_end) + core
        move = Move(TWIST, W, A, B, cells, bmap, rho, layers, plane)
        rep = validate_move(move)
        if rep.ok:
            return move
        last = rep.failures[0]
        if layers >= MAX_TWIST_LAYERS:
            break
        layers = min(2 * layers, MAX_TWIST_LAYERS)
    check, sid, detail = last
    raise MoveValidationFailure(f"twist failed {check} with {layers} layers: {detail}", sid)


def build_twists(W: Box, A: Box, rho: SignedPermutation, L: int = 4) -> list[Move]:
    moves = []
    for p in planar_factors(rho):
        moves.append(build_twist(W, A, quarter_turn(W.n, p), L))
        A = moves[-1].inner_after
    return moves
