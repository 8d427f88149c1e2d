"""Move planning for the generating map.

Phases: shrink every source hole about its centre to a small similar copy,
route the copies one at a time to their target centres along
obstacle-avoiding axis-parallel paths, then per hole apply the rotation part
and grow the rotated copy onto its target.  On each hole boundary the
composition is the similarity (t/d)R, so keeping the holes similar to their
sources keeps every stage close to conformal.  Shrinking everything first
keeps the routing space free of large holes.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import MoveValidationFailure, PlanningFailure
from ..geometry import Box
from .moves import CORRIDOR, Move, auto_layers, build_frame_remap, build_twists

log = logging.getLogger(__name__)

MAX_HOLES = 1_000_000
SIZE_FACTOR = 0.7
EPS_FLOOR_FACTOR = 1e-4
TWIST_FILL = 0.9


@dataclass
class Plan:
    moves: list
    eps: float  # smallest extent of the routed boxes
    scale: float  # similarity factor from source holes to routed boxes
    phases: dict = field(default_factory=dict)  # phase name -> (first, last) move index


def free_gap(boxes: list[Box], region: Box) -> float:
    """Smallest distance between boxes or from a box to the region's complement."""
    if not boxes:
        return math.inf
    lo = np.array([b.lo for b in boxes])
    hi = np.array([b.hi for b in boxes])
    best = float(min(np.min(lo - region.lo_arr), np.min(region.hi_arr - hi)))
    for i in range(len(boxes) - 1):
        gap = np.maximum(0.0, np.maximum(lo[i + 1:] - hi[i], lo[i] - hi[i + 1:]))
        best = min(best, float(np.min(np.linalg.norm(gap, axis=1))))
    return best


def _clearance(box: Box, obstacles_lo, obstacles_hi, region: Box) -> float:
    d = region.inner_margin(box)
    if len(obstacles_lo):
        gap = np.maximum(0.0, np.maximum(obstacles_lo - box.hi_arr, box.lo_arr - obstacles_hi))
        d = min(d, float(np.min(np.linalg.norm(gap, axis=1))))
    return d


def _free(W_lo, W_hi, olo, ohi, region: Box, a: int, up: bool) -> float:
    """Free distance from one side of W to the region or an obstacle in its shadow."""
    other = [i for i in range(len(W_lo)) if i != a]
    shadow = np.all((olo[:, other] < W_hi[other]) & (ohi[:, other] > W_lo[other]), axis=1)
    if up:
        stops = olo[shadow & (olo[:, a] >= W_hi[a]), a]
        return min([region.hi[a]] + list(stops)) - W_hi[a]
    stops = ohi[shadow & (ohi[:, a] <= W_lo[a]), a]
    return W_lo[a] - max([region.lo[a]] + list(stops))


def roomy_support(inner: Box, obstacles: list[Box], region: Box, base: float,
                  frac: float = 0.5) -> Box:
    """``inner`` grown by ``base`` and then greedily by ``frac`` of the free room per side.

    Sides are grown tightest first, each against obstacles in the shadow of
    the box grown so far, so the narrow margins get as much room as they can.
    """
    n = inner.n
    olo = np.array([b.lo for b in obstacles]).reshape(-1, n)
    ohi = np.array([b.hi for b in obstacles]).reshape(-1, n)
    lo0 = inner.lo_arr - base
    hi0 = inner.hi_arr + base
    sides = [(a, up) for a in range(n) for up in (False, True)]
    sides.sort(key=lambda sd: _free(lo0, hi0, olo, ohi, region, *sd))
    for f in (frac, 0.5 * frac, 0.0):
        lo, hi = lo0.copy(), hi0.copy()
        for a, up in sides:
            room = max(0.0, f * _free(lo, hi, olo, ohi, region, a, up))
            if up:
                hi[a] += room
            else:
                lo[a] -= room
        W = Box(tuple(lo), tuple(hi))
        if region.contains_box(W) and _clearance(W, olo, ohi, region) >= 0.5 * base:
            return W
    return inner.expand(base)


def route(start: np.ndarray, goal: np.ndarray, half, obstacles: list[Box],
          region: Box, clearance: float) -> list[np.ndarray]:
    """Axis-parallel waypoints for a box of half-extents ``half`` from start to goal.

    Dijkstra on the grid spanned by obstacle faces offset by the box size
    plus clearance and the midlines between them.  Edge cost is length
    weighted by 1 + clearance/room so tight passages are avoided; ties are
    broken lexicographically on node coordinates.
    """
    n = len(start)
    half = np.broadcast_to(np.asarray(half, dtype=float), (n,))
    olo = np.array([b.lo for b in obstacles]).reshape(-1, n)
    ohi = np.array([b.hi for b in obstacles]).reshape(-1, n)
    axes = []
    for i in range(n):
        off = half[i] + 1.01 * clearance
        vals = {start[i], goal[i], region.lo[i] + off, region.hi[i] - off}
        vals.update(olo[:, i] - off)
        vals.update(ohi[:, i] + off)
        vals = sorted(v for v in vals if region.lo[i] + off <= v <= region.hi[i] - off
                      or v in (start[i], goal[i]))
        # channel midlines let paths keep away from obstacles
        vals = sorted(set(vals) | {0.5 * (a + b) for a, b in zip(vals, vals[1:])})
        axes.append(vals)

    def cube(p):
        return Box.from_center(p, half)

    def swept(a, b):
        return Box(tuple(np.minimum(a, b) - half), tuple(np.maximum(a, b) + half))

    def coords(node):
        return np.array([axes[i][k] for i, k in enumerate(node)])

    s_node = tuple(axes[i].index(start[i]) for i in range(n))
    g_node = tuple(axes[i].index(goal[i]) for i in range(n))
    ok_cache = {}

    def node_ok(node):
        if node not in ok_cache:
            ok_cache[node] = node in (s_node, g_node) or _clearance(cube(coords(node)), olo, ohi, region) >= clearance
        return ok_cache[node]

    dist = {s_node: 0.0}
    prev = {}
    heap = [(0.0, s_node)]
    done = set()
    while heap:
        du, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == g_node:
            break
        pu = coords(u)
        for i in range(n):
            for step in (-1, 1):
                k = u[i] + step
                if not 0 <= k < len(axes[i]):
                    continue
                v = u[:i] + (k,) + u[i + 1:]
                if v in done or not node_ok(v):
                    continue
                pv = coords(v)
                room = _clearance(swept(pu, pv), olo, ohi, region)
                if room < clearance:
                    continue
                dv = du + abs(axes[i][k] - axes[i][u[i]]) * (1.0 + clearance / room)
                if dv < dist.get(v, math.inf) or (dv == dist.get(v) and u < prev[v]):
                    dist[v] = dv
                    prev[v] = u
                    heapq.heappush(heap, (dv, v))
    if g_node not in done:
        raise PlanningFailure(f"no corridor from {tuple(start)} to {tuple(goal)}")
    path = [g_node]
    while path[-1] != s_node:
        path.append(prev[path[-1]])
    pts = [coords(v) for v in reversed(path)]
    # merge collinear legs
    out = [pts[0]]
    for a, b in zip(pts[1:], pts[2:] + [None]):
        if b is not None:
            d1 = np.flatnonzero(a - out[-1])
            d2 = np.flatnonzero(b - a)
            if len(d1) == 1 and len(d2) == 1 and d1[0] == d2[0]:
                continue
        out.append(a)
    return out


def _min_spacing(boxes: list[Box]) -> float:
    """Smallest Chebyshev distance between box centres."""
    if len(boxes) < 2:
        return math.inf
    c = np.array([b.center for b in boxes])
    best = math.inf
    for i in range(len(c) - 1):
        best = min(best, float(np.min(np.max(np.abs(c[i + 1:] - c[i]), axis=1))))
    return best


def grow_schedule(boxes: list[Box], tgt: list[Box], tgt_gap: float) -> list[float]:
    """Size fractions of the targets for the grow rounds, ending at 1.

    All holes grow together; the free gap around them halves each round, so
    no single round squeezes a wide margin into the final thin one.
    """
    lam0 = max(float(np.max(b.extents / t.extents)) for b, t in zip(boxes, tgt))
    ext = min(float(np.min(t.extents)) for t in tgt)
    gap0 = tgt_gap + (1 - lam0) * ext
    rounds = max(1, math.ceil(math.log2(gap0 / tgt_gap)))
    out = []
    for r in range(1, rounds):
        gap = gap0 * (tgt_gap / gap0) ** (r / rounds)
        out.append(1 - (gap - tgt_gap) / ext)
    return out + [1.0]


def _plan_once(instance, scale: float, src: list[Box], tgt: list[Box], src_gap: float,
               tgt_gap: float, twist_layers: int) -> Plan:
    S = instance.S
    n = instance.n
    K = len(src)
    centers_src = [b.center for b in src]
    centers_tgt = [b.center for b in tgt]
    halves = [scale * b.extents / 2 for b in src]
    small = [Box.from_center(c, h) for c, h in zip(centers_src, halves)]
    eps = float(min(np.min(b.extents) for b in small))
    moves: list[Move] = []
    phases = {}

    first = len(moves)
    for k in range(K):
        W = roomy_support(src[k], src[:k] + src[k + 1:], S, 0.5 * src_gap)
        moves.append(build_frame_remap(W, src[k], small[k], layers=auto_layers(W, src[k], small[k])))
    phases["shrink"] = (first, len(moves))

    first = len(moves)
    current = list(small)
    # long trips first, while the target row is still empty
    order = sorted(range(K), key=lambda k: (-float(np.sum(np.abs(centers_tgt[k] - centers_src[k]))), k))
    for k in order:
        obstacles = current[:k] + current[k + 1:]
        half = halves[k]
        waypoints = route(centers_src[k], centers_tgt[k], half, obstacles, S, eps)
        olo = np.array([b.lo for b in obstacles]).reshape(-1, n)
        ohi = np.array([b.hi for b in obstacles]).reshape(-1, n)
        for a, b in zip(waypoints, waypoints[1:]):
            sw = Box(tuple(np.minimum(a, b) - half), tuple(np.maximum(a, b) + half))
            W = roomy_support(sw, obstacles, S, 0.5 * _clearance(sw, olo, ohi, S))
            moves.append(build_frame_remap(W, Box.from_center(a, half),
                                           Box.from_center(b, half), kind=CORRIDOR))
        current[k] = Box.from_center(centers_tgt[k], half)
    phases["route"] = (first, len(moves))

    first = len(moves)
    rho = instance.hole_rotation()
    for k in range(K):
        # widest centred cube inside the target leaves the twist the most room
        support = Box.from_center(centers_tgt[k], TWIST_FILL * 0.5 * float(np.min(tgt[k].extents)))
        if not rho.is_identity:
            if not (tgt[k].contains_box(support) and support.contains_box(current[k])):
                raise PlanningFailure(f"twist support does not fit inside target {k + 1}")
            moves.extend(build_twists(support, current[k], rho, twist_layers))
            current[k] = moves[-1].inner_after
    phases["twist"] = (first, len(moves))

    first = len(moves)
    for lam in grow_schedule(current, tgt, tgt_gap):
        for k in range(K):
            box = tgt[k] if lam == 1.0 else Box.from_center(centers_tgt[k], lam * tgt[k].extents / 2)
            others = current[:k] + current[k + 1:]
            olo = np.array([b.lo for b in others]).reshape(-1, n)
            ohi = np.array([b.hi for b in others]).reshape(-1, n)
            W = roomy_support(box, others, S, 0.5 * _clearance(box, olo, ohi, S))
            moves.append(build_frame_remap(W, current[k], box, layers=auto_layers(W, current[k], box)))
            current[k] = box
    phases["grow"] = (first, len(moves))
    return Plan(moves, eps, scale, phases)


def plan_moves(instance, twist_layers: int = 4) -> Plan:
    """Deterministic move script; the similarity factor halves on failure."""
    product = instance.product
    K = product.count
    if K >= MAX_HOLES:
        raise PlanningFailure(f"{K} holes is beyond the supported planning size")
    T = instance.exterior
    S = instance.S
    src = []
    for k in range(1, K + 1):
        b = product.image_box(k)
        src.append(Box(tuple(T(b.lo_arr)), tuple(T(b.hi_arr))))
    tgt = [instance.target.image_box(k) for k in range(1, K + 1)]
    src_gap = free_gap(src, S)
    tgt_gap = free_gap(tgt, S)
    floor = EPS_FLOOR_FACTOR * src_gap
    if tgt_gap < floor:
        raise PlanningFailure(f"target gap {tgt_gap:.3g} is below {EPS_FLOOR_FACTOR:g} x domain gap")
    # routed boxes must turn inside the twist support and pass between
    # neighbouring centres, so their diagonal sets the scale
    room = min(TWIST_FILL * min(float(np.min(b.extents)) for b in tgt),
               _min_spacing(src), _min_spacing(tgt))
    diag = max(b.diam for b in src)
    scale = min(1.0, SIZE_FACTOR * room / diag)
    min_ext = min(float(np.min(b.extents)) for b in src)
    last = None
    while scale * min_ext >= floor:
        try:
            plan = _plan_once(instance, scale, src, tgt, src_gap, tgt_gap, twist_layers)
            log.info("planned %d moves with scale=%.3g", len(plan.moves), scale)
            return plan
        except (PlanningFailure, MoveValidationFailure) as exc:
            last = exc
            log.info("planning with scale=%.3g failed: %s", scale, exc)
            scale /= 2
    raise PlanningFailure(f"no plan above eps floor {floor:.3g}: {last}")
