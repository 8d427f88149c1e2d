"""Command line: plan, build, verify, sample, render, report.

Exit codes: 0 success, 1 malformed flags or files, 2 infeasible parameters,
3 a failed hard invariant.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, elevator
from .errors import (BadAddress, BudgetExceeded, InfeasibleParams, MoveValidationFailure,
                     PlanningFailure, QCEError, SeparationViolation)
from .genmap import GeneratingMap, build_generating_map, validate_generating_map, validate_move
from .ifs import build_instance_systems
from .params import (InstanceParams, TheoremInputs, check_direct_params, derive_paper_params,
                     dimension_margins)

SCHEMA_VERSION = 1
EXIT_USAGE, EXIT_INFEASIBLE, EXIT_INVARIANT = 1, 2, 3
MAX_SVG_POINTS = 10_000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _dump(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schemaVersion") != SCHEMA_VERSION:
        raise UsageError(f"{path}: missing or unsupported schemaVersion")
    return doc


def _params_from(doc: dict) -> InstanceParams:
    data = doc.get("params", doc)
    try:
        return InstanceParams.from_json(data)
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"malformed instance: {exc}") from exc


def _load_construction(path):
    """(instance, generating map or None, document) from an instance or construction file."""
    doc = _load(path)
    params = _params_from(doc)
    inst = build_instance_systems(params)
    gm = None
    gdoc = doc.get("genmap")
    if isinstance(gdoc, dict):
        try:
            gm = GeneratingMap.from_json(inst, gdoc, base_dir=str(Path(path).parent))
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"malformed generating map: {exc}") from exc
    return inst, gm, doc


# ---------------------------------------------------------------- plan

def cmd_plan(args) -> int:
    if args.direct:
        need = {"d": args.d, "M": args.M, "Mprime": args.Mprime, "t": args.t}
        missing = [k for k, v in need.items() if v is None]
        if missing or args.alpha is not None or args.beta is not None:
            raise UsageError("--direct takes --n --p --d --M --Mprime --t only" +
                             (f" (missing {', '.join(missing)})" if missing else ""))
        params = check_direct_params(args.n, args.p, args.d, args.M, args.Mprime, args.t)
    else:
        if args.alpha is None or args.beta is None or any(v is not None for v in (args.d, args.M, args.Mprime, args.t)):
            raise UsageError("paper mode takes --n --p --alpha --beta only")
        params = derive_paper_params(TheoremInputs(args.n, args.p, args.alpha, args.beta))
    _dump(args.output, params.to_json())
    return 0


# ---------------------------------------------------------------- build

def cmd_build(args) -> int:
    params = _params_from(_load(args.input))
    inst = build_instance_systems(params)
    doc = inst.to_json()
    if params.mode == "paper":
        doc["genmap"] = "skipped (paper-mode magnitude)"
    elif args.no_genmap:
        doc["genmap"] = "skipped (--no-genmap)"
    elif params.n != 2:
        doc["genmap"] = "skipped (generating map is built for n = 2 only)"
    else:
        gm = build_generating_map(inst)
        reports = [validate_move(m) for m in gm.moves]
        bad = [(i, r.failures[0]) for i, r in enumerate(reports) if not r.ok]
        if bad:
            i, (check, sid, detail) = bad[0]
            raise MoveValidationFailure(f"move {i}: {check}: {detail}", sid)
        sidecar = str(Path(args.output).with_suffix(".bin"))
        doc["genmap"] = gm.to_json(sidecar)
        doc["moveReports"] = [r.to_json() for r in reports]
    _dump(args.output, doc)
    return 0


# ---------------------------------------------------------------- verify

def _check(checks, name, passed, hard=True, **detail):
    checks.append({"name": name, "ok": bool(passed), "hard": hard, "detail": detail})


def run_verify(inst, gm, energy_samples: int = 65536, qc_points: int = 200) -> dict:
    p = inst.params
    checks = []
    numbers = {"betaAchieved": p.betaAchieved, "alphaAchieved": p.alphaAchieved, "q": p.q,
               "M": p.M, "Mprime": p.Mprime, "d": p.d, "t": p.t}

    _check(checks, "domain strong separation", inst.cert_dom.rho > 0, rho=inst.cert_dom.rho)
    _check(checks, "target strong separation", inst.cert_tar.rho > 0, rho=inst.cert_tar.rho)

    dimE = analysis.base_dimension(inst).value
    fib = analysis.cylinder_dimension_fiber(inst)
    numbers["dimE"] = dimE
    numbers["fiberImageDimension"] = fib.value
    beta = p.beta if p.beta is not None else 0.0
    alpha = p.alpha if p.alpha is not None else 1.0
    mb, ma = dimension_margins(p, alpha, beta)
    _check(checks, "dim E > beta", mb > 0, value=dimE, beta=beta, logMargin=mb)
    _check(checks, "fiber image dimension > alpha", ma > 0, value=fib.value, alpha=alpha, logMargin=ma)
    profile = analysis.dimension_from_profile(*zip(*fib.per_scale_counts), method="cylinderProfile")
    _check(checks, "cylinder profile slope", abs(profile.value - fib.value) <= 1e-12, value=profile.value)

    bound = elevator.analytic_qc_bound(inst)
    numbers["analyticBound"] = bound.to_json()
    _check(checks, "q < 1", p.q < 1, q=p.q)

    if gm is not None:
        rep = validate_generating_map(gm)
        _check(checks, "generating map", rep.ok, report=rep.to_json())
        cyl = elevator.check_cylinder_correspondence(inst, gm)
        _check(checks, "cylinder correspondence", cyl.ok, report=cyl.to_json())

        cloud = elevator.fiber_image_cloud(inst, elevator.FiberSpec.parse("1|1"), 8 if p.Mprime ** 8 <= 10**6 else 4)
        scales = [p.t ** k for k in range(1, 8)]
        try:
            bc = analysis.box_counting_dimension(cloud, scales)
            _check(checks, "box-count dimension", abs(bc.value - fib.value) <= 0.05, hard=False, **bc.to_json())
        except QCEError as exc:
            _check(checks, "box-count dimension", False, hard=False, error=str(exc))

        qc = analysis.qc_ratio_sample(inst, gm, qc_points, [1e-3 * inst.Q.diam, 1e-4 * inst.Q.diam])
        numbers["qc"] = qc.to_json()
        _check(checks, "qc ratio within conditioning oracle", qc.maxRatio <= 1.1 * qc.conditioningOracle,
               **qc.to_json())
        sob = analysis.sobolev_energy(inst, gm, energy_samples)
        numbers["energy"] = sob.to_json()
    else:
        numbers["energy"] = analysis.sobolev_energy(inst, None).to_json()

    hard_ok = all(c["ok"] for c in checks if c["hard"])
    return {"schemaVersion": SCHEMA_VERSION, "ok": hard_ok, "params": p.to_json(),
            "numbers": numbers, "checks": checks}


def cmd_verify(args) -> int:
    inst, gm, _ = _load_construction(args.input)
    report = run_verify(inst, gm, energy_samples=args.samples)
    out = args.output or str(Path(args.input).with_name("report.json"))
    _dump(out, report)
    for c in report["checks"]:
        if not c["ok"] and not c["hard"]:
            print(f"warning: soft check failed: {c['name']}", file=sys.stderr)
    failed = [c["name"] for c in report["checks"] if c["hard"] and not c["ok"]]
    if failed:
        print("hard checks failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_INVARIANT
    return 0


# ---------------------------------------------------------------- sample

def cmd_sample(args) -> int:
    inst, _, _ = _load_construction(args.input)
    fiber = elevator.FiberSpec.parse(args.sigma)
    cloud = elevator.fiber_image_cloud(inst, fiber, args.depth)
    elevator.write_cloud_csv(args.output, cloud)
    return 0


# ---------------------------------------------------------------- render

def _fmt(v: float) -> str:
    return f"{v:.6f}".rstrip("0").rstrip(".")


def render_svg(inst, depth: int, sigma: str = "1|1", width: int = 800) -> str:
    if inst.n != 2:
        raise UsageError("render requires n = 2")
    S = inst.S
    sx = width / S.extents[0]
    height = int(math.ceil(S.extents[1] * sx))

    def rect(box, cls):
        x0, y0 = box.lo_arr
        w, h = box.extents
        # flip y so the picture has the usual orientation
        return (f'<rect class="{cls}" x="{_fmt((x0 - S.lo[0]) * sx)}" y="{_fmt((S.hi[1] - y0 - h) * sx)}" '
                f'width="{_fmt(w * sx)}" height="{_fmt(h * sx)}"/>')

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             "<style>.frame{fill:none;stroke:#000;stroke-width:1}"
             ".hole{fill:none;stroke:#1f4e99;stroke-width:0.5}"
             ".pt{fill:#c0392b}</style>",
             rect(S, "frame")]
    K = inst.target.count
    boxes = [S]
    for level in range(1, depth + 1):
        nxt = []
        for parent in boxes:
            for k in range(1, K + 1):
                corners = inst.target.apply_index(k, np.array([parent.lo_arr, parent.hi_arr]))
                nxt.append(type(S)(tuple(corners.min(axis=0)), tuple(corners.max(axis=0))))
        boxes = nxt
        lines.append(f'<g class="level" data-level="{level}">')
        lines.extend(rect(b, "hole") for b in boxes)
        lines.append("</g>")
    Mp = inst.fiber.count
    cloud_depth = max(1, int(math.log(MAX_SVG_POINTS) // math.log(Mp))) if Mp > 1 else 1
    cloud = elevator.fiber_image_cloud(inst, elevator.FiberSpec.parse(sigma), cloud_depth)[:MAX_SVG_POINTS]
    r = _fmt(max(0.5, 0.002 * width))
    lines.append('<g class="fiber">')
    for x, y in cloud:
        lines.append(f'<circle class="pt" cx="{_fmt((x - S.lo[0]) * sx)}" cy="{_fmt((S.hi[1] - y) * sx)}" r="{r}"/>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_render(args) -> int:
    inst, _, _ = _load_construction(args.input)
    Path(args.output).write_text(render_svg(inst, args.depth, args.sigma), encoding="utf-8")
    return 0


# ---------------------------------------------------------------- report

def format_report(report: dict) -> str:
    out = []
    n = report.get("numbers", {})
    out.append("status: " + ("PASS" if report.get("ok") else "FAIL"))
    for key in ("dimE", "fiberImageDimension", "q", "betaAchieved", "alphaAchieved"):
        if key in n:
            out.append(f"  {key:<22} {n[key]:.6g}")
    if "analyticBound" in n:
        b = n["analyticBound"]
        out.append(f"  {'kappa':<22} {b['kappa']}")
        out.append(f"  {'analytic qc bound':<22} {b['bound']:.6g}")
    e = n.get("energy") or {}
    if e.get("shellEnergyEstimate") is not None:
        out.append(f"  {'shell energy':<22} {e['shellEnergyEstimate']:.6g} +- {e['halfwidth']:.3g}")
        out.append(f"  {'total energy bound':<22} {e['totalBound']:.6g}")
    out.append("checks:")
    for c in report.get("checks", []):
        tag = "ok" if c["ok"] else ("FAIL" if c["hard"] else "warn")
        out.append(f"  [{tag:>4}] {c['name']}")
    return "\n".join(out)


def cmd_report(args) -> int:
    print(format_report(_load(args.input)))
    return 0


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qce", description="Similarity-elevator construction and checks.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", help="derive or certify instance parameters")
    p.add_argument("--direct", action="store_true")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--d", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--Mprime", type=int)
    p.add_argument("--t", type=float)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("build", help="build systems, certificates and the generating map")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-genmap", action="store_true")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("verify", help="run every invariant suite and write report.json")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output")
    p.add_argument("--samples", type=int, default=65536, help="Monte Carlo energy samples")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sample", help="write a point cloud as CSV")
    p.add_argument("what", choices=["fiber"])
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--sigma", required=True, help="base address, e.g. 1|1 or 1,2,3|2")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("render", help="write an SVG of target holes and a fiber image")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--sigma", default="1|1")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("report", help="pretty-print a stored report")
    p.add_argument("-i", "--input", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def _distinct_paths(args) -> None:
    paths = [getattr(args, k, None) for k in ("input", "output")]
    paths = [os.path.abspath(x) for x in paths if x]
    if len(set(paths)) != len(paths):
        raise UsageError("input and output paths must differ")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _distinct_paths(args)
        return args.func(args)
    except InfeasibleParams as exc:
        print(f"infeasible: {exc.constraint}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SeparationViolation, MoveValidationFailure, PlanningFailure) as exc:
        print(f"invariant failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (UsageError, BadAddress, BudgetExceeded, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
