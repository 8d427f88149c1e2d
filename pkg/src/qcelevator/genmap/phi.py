"""The PL generating map: the exterior map followed by the planned moves."""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..errors import LocationFailure, PointInHole
from ..geometry import Box
from .moves import Move, validate_move
from .planner import plan_moves

SCHEMA_VERSION = 1


class GeneratingMap:
    def __init__(self, instance, moves: list[Move], eps: float | None = None, phases=None):
        self.instance = instance
        self.moves = list(moves)
        self.eps = eps
        self.phases = dict(phases or {})
        self._hints = [0] * len(self.moves)

    @property
    def n(self) -> int:
        return self.instance.n

    def __call__(self, pts):
        return self.evaluate(pts)[0]

    def evaluate(self, pts, check_holes: bool = True):
        """Images and Jacobians of points of the closed domain with the open holes removed."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if check_holes:
            hole = self.instance.product.locate(pts, closed=False)
            if np.any(hole):
                i = int(np.flatnonzero(hole)[0])
                raise PointInHole(pts[i], int(hole[i]))
        T = self.instance.exterior
        out = T(pts)
        jac = np.broadcast_to(T.matrix, (len(pts), self.n, self.n)).copy()
        for mv in self.moves:
            out, jac = mv.apply(out, jac)
        return out, jac

    def evaluate_one(self, x) -> np.ndarray:
        """Scalar evaluation with a per-map last-hit cache over each move's simplices."""
        x = np.asarray(x, dtype=float)
        hole = int(self.instance.product.locate(x[None], closed=False)[0])
        if hole:
            raise PointInHole(x, hole)
        y = self.instance.exterior(x)
        for i, mv in enumerate(self.moves):
            c = mv.locate_one(y, self._hints[i])
            if c >= 0:
                self._hints[i] = c
                y = mv.cells[c](y)
        return y

    def to_json(self, sidecar: str | None = None) -> dict:
        """Script document; vertex data goes to a little-endian float64 sidecar when given."""
        sink = None
        chunks = []
        if sidecar is not None:
            offset = [0]

            def sink(arr):
                data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
                ref = {"offset": offset[0], "count": int(arr.size)}
                offset[0] += len(data)
                chunks.append(data)
                return ref
        doc = {
            "schemaVersion": SCHEMA_VERSION,
            "eps": self.eps,
            "phases": {k: list(v) for k, v in self.phases.items()},
            "moves": [m.to_json(sink) for m in self.moves],
        }
        if sidecar is not None:
            blob = b"".join(chunks)
            with open(sidecar, "wb") as fh:
                fh.write(blob)
            doc["sidecar"] = {"file": os.path.basename(sidecar),
                              "sha256": hashlib.sha256(blob).hexdigest()}
        return doc

    @classmethod
    def from_json(cls, instance, doc: dict, base_dir: str = ".") -> "GeneratingMap":
        if doc.get("schemaVersion") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schemaVersion {doc.get('schemaVersion')}")
        source = None
        if "sidecar" in doc:
            path = os.path.join(base_dir, doc["sidecar"]["file"])
            with open(path, "rb") as fh:
                blob = fh.read()
            if hashlib.sha256(blob).hexdigest() != doc["sidecar"]["sha256"]:
                raise ValueError("sidecar checksum mismatch")

            def source(ref):
                return np.frombuffer(blob, dtype="<f8", count=ref["count"], offset=ref["offset"]).copy()
        moves = [Move.from_json(m, source) for m in doc["moves"]]
        phases = {k: tuple(v) for k, v in doc.get("phases", {}).items()}
        return cls(instance, moves, doc.get("eps"), phases)


def build_generating_map(instance, twist_layers: int = 4) -> GeneratingMap:
    plan = plan_moves(instance, twist_layers)
    return GeneratingMap(instance, plan.moves, plan.eps, plan.phases)


@dataclass
class PhiReport:
    ok: bool
    checks: dict = field(default_factory=dict)  # name -> {"ok": bool, ...}
    move_failures: list = field(default_factory=list)  # (move index, check, simplex id, detail)

    def to_json(self) -> dict:
        return {"ok": self.ok, "checks": self.checks,
                "moveFailures": [list(f) for f in self.move_failures]}


def _sample_domain(instance, count: int, rng) -> np.ndarray:
    """Uniform points of Q outside the open holes."""
    Q = instance.Q
    out = []
    need = count
    while need > 0:
        pts = Q.lo_arr + rng.random((2 * need + 16, Q.n)) * Q.extents
        pts = pts[instance.product.locate(pts, closed=False) == 0]
        out.append(pts[:need])
        need -= len(out[-1])
    return np.concatenate(out)


def validate_generating_map(gm: GeneratingMap, samples: int = 1000, injectivity_samples: int = 100_000,
                            seed: int = 0, rel_tol: float = 1e-10) -> PhiReport:
    inst = gm.instance
    rng = np.random.default_rng(seed)
    diamS = inst.S.diam
    checks = {}
    failures = []
    for i, mv in enumerate(gm.moves):
        rep = validate_move(mv)
        for check, sid, detail in rep.failures:
            failures.append((i, check, sid, detail))
    checks["moves"] = {"ok": not failures, "count": len(gm.moves)}

    # outer boundary: phi agrees with the exterior map
    bpts = inst.Q.sample_boundary(samples, rng)
    err = float(np.max(np.abs(gm(bpts) - inst.exterior(bpts))))
    checks["outer boundary"] = {"ok": err <= rel_tol * diamS, "maxError": err}

    # conjugacy on each hole boundary: phi(h_k(y)) = g_k(phi(y)) for y on the boundary of Q
    worst = 0.0
    per_hole = max(1, samples)
    for k in range(1, inst.product.count + 1):
        y = inst.Q.sample_boundary(per_hole, rng)
        lhs = gm(inst.product.apply_index(k, y))
        rhs = inst.target.apply_index(k, inst.exterior(y))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    checks["hole conjugacy"] = {"ok": worst <= rel_tol * diamS, "maxError": worst}

    # injectivity: no two distinct samples share an image
    pts = _sample_domain(inst, injectivity_samples, rng)
    img, jac = gm.evaluate(pts, check_holes=False)
    tree = cKDTree(img)
    pairs = tree.query_pairs(1e-12 * diamS, output_type="ndarray")
    collisions = int(sum(1 for a, b in pairs if np.max(np.abs(pts[a] - pts[b])) > 1e-12 * inst.Q.diam))
    checks["injectivity"] = {"ok": collisions == 0, "samples": len(pts), "collisions": collisions}

    dets = np.linalg.det(jac)
    checks["jacobian sign"] = {"ok": bool(np.all(dets > 0)), "minDet": float(np.min(dets))}
    ok = all(c["ok"] for c in checks.values())
    return PhiReport(ok, checks, failures)
