"""Parameter derivation for the dimension-distorting construction.

Paper-mode quantities reach magnitudes like d ~ 1e-16 and M' ~ 1e15 for
ordinary inputs, and far beyond double range for harder ones, so every
comparison here is made on natural logarithms.  Integer branch counts are
produced with mpmath at a working precision sized to the integer, then
audited at +-1.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import mpmath

from .errors import InfeasibleParams

LN2 = math.log(2.0)
LN3 = math.log(3.0)

BOUND_LABELS = ("(1)", "(2)", "(3)", "(4)", "(5)", "(6)", "(7)")


@dataclass(frozen=True)
class TheoremInputs:
    n: int
    p: float
    alpha: float
    beta: float

    @property
    def beta_hat(self) -> float:
        return (self.n - 1) - self.p * (1.0 - 1.0 / self.alpha)


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)  # (name, passed, detail)
    beta_hat: float = float("nan")

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def first_failure(self):
        for name, ok, detail in self.checks:
            if not ok:
                return name, detail
        return None

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append((name, bool(ok), detail))


@dataclass(frozen=True)
class InstanceParams:
    n: int
    p: float
    d: float
    M: int
    Mprime: int
    t: float
    betaAchieved: float
    alphaAchieved: float
    q: float
    mode: str
    bounds: tuple | None = None
    d_ln: float = 0.0
    t_ln: float = 0.0
    M_ln: float = 0.0
    Mprime_ln: float = 0.0
    alpha: float | None = None
    beta: float | None = None
    notes: tuple = ()

    @property
    def q_ln(self) -> float:
        return series_factor_ln(self.n, self.p, self.d_ln, self.t_ln, self.M, self.Mprime)

    def to_json(self) -> dict:
        data = asdict(self)
        data["bounds"] = list(self.bounds) if self.bounds is not None else None
        data["notes"] = list(self.notes)
        return {"schemaVersion": 1, **data}

    @classmethod
    def from_json(cls, data: dict) -> "InstanceParams":
        data = dict(data)
        version = data.pop("schemaVersion", 1)
        if version != 1:
            raise ValueError(f"unsupported schemaVersion {version}")
        if data.get("bounds") is not None:
            data["bounds"] = tuple(data["bounds"])
        data["notes"] = tuple(data.get("notes", ()))
        data["M"] = int(data["M"])
        data["Mprime"] = int(data["Mprime"])
        return cls(**data)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def series_factor_ln(n: int, p: float, d_ln: float, t_ln: float, M: int, Mprime: int) -> float:
    """ln of M*M'*(t/d)^p*d^n."""
    return math.log(M) + math.log(Mprime) + p * (t_ln - d_ln) + n * d_ln


def series_factor(params: InstanceParams) -> float:
    """q recomputed from the stored fields (so edited params are honoured)."""
    return math.exp(params.q_ln)


def dimension_margins(params: InstanceParams, alpha: float, beta: float) -> tuple[float, float]:
    """(ln M - beta ln(1/d), ln M' - alpha ln(1/t)) at high precision.

    Both are positive exactly when the achieved dimensions strictly exceed
    beta and alpha; paper-mode margins sit far below double resolution.
    """
    with mpmath.workdps(_workdps(max(params.M_ln, params.Mprime_ln, math.log(params.M), math.log(params.Mprime)))):
        mb = mpmath.log(params.M) + _decimal(beta) * mpmath.mpf(params.d_ln)
        ma = mpmath.log(params.Mprime) + _decimal(alpha) * mpmath.mpf(params.t_ln)
        return float(mb), float(ma)


def validate_theorem_inputs(inputs: TheoremInputs) -> ValidationReport:
    rep = ValidationReport()
    n, p, a, b = inputs.n, inputs.p, inputs.alpha, inputs.beta
    rep.add("n >= 2 integer", isinstance(n, int) and n >= 2, f"n={n}")
    rep.add("p > n", p > n, f"p={p}, n={n}")
    rep.add("alpha >= 1", a >= 1, f"alpha={a}")
    upper = p / (p - (n - 1)) if p > n - 1 else math.inf
    rep.add("alpha < p/(p-(n-1))", a < upper, f"alpha={a}, bound={upper:.6g}")
    rep.beta_hat = inputs.beta_hat if a > 0 else float("nan")
    rep.add("beta > 0", b > 0, f"beta={b}")
    rep.add("beta < betaHat", b < rep.beta_hat, f"beta={b}, betaHat={rep.beta_hat:.6g}")
    return rep


def paper_bounds_ln(inputs: TheoremInputs) -> list[float]:
    """Logs of the seven smallness requirements on d."""
    n, p, a, b = inputs.n, inputs.p, inputs.alpha, inputs.beta
    bh = inputs.beta_hat
    return [
        -LN2 / b,
        math.log(math.expm1(b * LN2)) / b,
        -b * LN2 / (n - 1 - b),
        -(1 + a) * LN2,
        math.log(-math.expm1(-a * LN2)),
        (-b * LN2 - n * LN3) / (n / a - b - 1),
        (-b * LN2 - p * LN3) / (bh - b),
    ]


def _decimal(x) -> mpmath.mpf:
    """The decimal a user typed for ``x`` (1.2, not the double nearest to it)."""
    return mpmath.mpf(repr(float(x)))


def _workdps(log_value: float) -> int:
    return max(30, int(log_value / math.log(10)) + 30)


def _smallest_int_above(coef: float, log_base: float, strict: bool) -> int:
    """Smallest integer > exp(coef*log_base) (strict) or >= it.

    The product is formed in extended precision: for M' ~ 1e15 a double
    rounding of the exponent already shifts the integer by several units.
    """
    with mpmath.workdps(_workdps(abs(coef * log_base))):
        lk = _decimal(coef) * mpmath.mpf(log_base)
        x = mpmath.exp(lk)
        k = int(mpmath.floor(x)) + 1 if strict else int(mpmath.ceil(x))
        # exactness audit at +-1 around the candidate
        ok_k = mpmath.log(k) > lk if strict else mpmath.log(k) >= lk
        below = k - 1
        ok_below = below < 1 or (mpmath.log(below) <= lk if strict else mpmath.log(below) < lk)
        if not (ok_k and ok_below):
            raise InfeasibleParams("integer rounding audit", f"candidate {k} for exp({coef}*{log_base})")
    return k


def derive_paper_params(inputs: TheoremInputs) -> InstanceParams:
    rep = validate_theorem_inputs(inputs)
    if not rep.passed:
        name, detail = rep.first_failure()
        raise InfeasibleParams(name, detail)
    n, p, a, b = inputs.n, inputs.p, inputs.alpha, inputs.beta
    bh = inputs.beta_hat
    bounds_ln = paper_bounds_ln(inputs)
    d_ln = min(bounds_ln) - LN2
    L = -d_ln  # ln(1/d)

    M = _smallest_int_above(b, L, strict=True)
    M_ln = math.log(M)

    lo = LN2 + d_ln / a
    hi = min(-LN2 / a, math.log(math.expm1(a * LN2)) / a, LN3 + d_ln / a)
    t_ln = float(mpmath.log((mpmath.exp(lo) + mpmath.exp(hi)) / 2))
    Mp = _smallest_int_above(-a, t_ln, strict=False)
    Mp_ln = math.log(Mp)
    q_ln = series_factor_ln(n, p, d_ln, t_ln, M, Mp)

    with mpmath.workdps(_workdps(max(M_ln, Mp_ln))):
        m_gap = mpmath.log(M) - _decimal(b) * mpmath.mpf(L)
        mp_gap = mpmath.log(Mp) + _decimal(a) * mpmath.mpf(t_ln)
    checks = [
        ("d < min bounds", all(d_ln < bl for bl in bounds_ln)),
        ("2 < (1/d)^beta", LN2 < b * L),
        ("(1/d)^beta < M", m_gap > 0),
        ("M < (2/d)^beta", M_ln < b * (LN2 + L)),
        ("(2/d)^beta < (1/d)^(n-1)", b * (LN2 + L) < (n - 1) * L),
        ("2d^(1/alpha) < t", lo < t_ln),
        ("t < min{2^(-1/alpha), (2^alpha-1)^(1/alpha), 3d^(1/alpha)}", t_ln < hi),
        ("2 < (1/t)^alpha", LN2 < -a * t_ln),
        ("(1/t)^alpha <= M'", mp_gap >= 0),
        ("M' < (2/t)^alpha", Mp_ln < a * (LN2 - t_ln)),
        ("(2/t)^alpha < 1/d", a * (LN2 - t_ln) < L),
        ("M M' < t^(-n)", M_ln + Mp_ln < -n * t_ln),
        ("q < 1", q_ln < 0),
        ("q <= 2^beta 3^p d^(betaHat-beta)", q_ln <= b * LN2 + p * LN3 + (bh - b) * d_ln),
    ]
    for name, ok in checks:
        if not ok:
            raise InfeasibleParams(name, "derived parameters violate a proven inequality")

    return InstanceParams(
        n=n, p=p, d=math.exp(d_ln), M=M, Mprime=Mp, t=math.exp(t_ln),
        betaAchieved=M_ln / L, alphaAchieved=Mp_ln / -t_ln, q=math.exp(q_ln),
        mode="paper", bounds=tuple(math.exp(v) for v in bounds_ln),
        d_ln=d_ln, t_ln=t_ln, M_ln=M_ln, Mprime_ln=Mp_ln, alpha=a, beta=b,
    )


def check_direct_params(n: int, p: float, d: float, M: int, Mprime: int, t: float,
                        alpha: float | None = None, beta: float | None = None) -> InstanceParams:
    """Certify user-chosen parameters against the structural constraints only."""
    if not (0 < d < 1):
        raise InfeasibleParams("0 < d < 1", f"d={d}")
    if not (0 < t < 1):
        raise InfeasibleParams("0 < t < 1", f"t={t}")
    if M < 1 or Mprime < 1:
        raise InfeasibleParams("M >= 1 and M' >= 1", f"M={M}, M'={Mprime}")
    d_ln, t_ln = math.log(d), math.log(t)
    M_ln, Mp_ln = math.log(M), math.log(Mprime)
    q_ln = series_factor_ln(n, p, d_ln, t_ln, M, Mprime)
    structural = [
        ("M < d^(-(n-1))", M_ln < -(n - 1) * d_ln, f"M={M}, d^(-(n-1))={d ** -(n - 1):.6g}"),
        ("M' < 1/d", Mp_ln < -d_ln, f"M'={Mprime}, 1/d={1 / d:.6g}"),
        ("M M' < t^(-n)", M_ln + Mp_ln < -n * t_ln, f"M M'={M * Mprime}, t^(-n)={t ** -n:.6g}"),
        ("q < 1", q_ln < 0, f"q={math.exp(q_ln):.6g}"),
    ]
    for name, ok, detail in structural:
        if not ok:
            raise InfeasibleParams(name, detail)
    alpha_ach = Mp_ln / -t_ln
    notes = []
    if n - 1 < p:
        cap = p / (p - (n - 1))
        rel = "<" if alpha_ach < cap else ">="
        notes.append(f"fiber-image dimension {alpha_ach:.6g} {rel} p/(p-(n-1)) = {cap:.6g}")
    return InstanceParams(
        n=n, p=p, d=d, M=M, Mprime=Mprime, t=t,
        betaAchieved=M_ln / -d_ln, alphaAchieved=alpha_ach, q=math.exp(q_ln),
        mode="direct", bounds=None, d_ln=d_ln, t_ln=t_ln, M_ln=M_ln, Mprime_ln=Mp_ln,
        alpha=alpha, beta=beta, notes=tuple(notes),
    )
