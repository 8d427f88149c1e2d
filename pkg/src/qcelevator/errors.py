"""Exception types raised across the package."""


class QCEError(Exception):
    """Base class for construction and verification errors."""


class InfeasibleParams(QCEError):
    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        self.detail = detail
        msg = f"infeasible parameters: {constraint}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SeparationViolation(QCEError):
    """Strong separation fails; ``witness`` names the offending pair or map."""

    def __init__(self, message: str, witness):
        self.witness = witness
        super().__init__(f"{message}: witness={witness}")


class BadAddress(QCEError):
    pass


class MoveValidationFailure(QCEError):
    def __init__(self, message: str, simplex_id=None):
        self.simplex_id = simplex_id
        if simplex_id is not None:
            message = f"{message} (simplex {simplex_id})"
        super().__init__(message)


class PlanningFailure(QCEError):
    pass


class PointInHole(QCEError):
    def __init__(self, point, hole):
        self.point = point
        self.hole = hole
        super().__init__(f"point {tuple(point)} lies inside hole {hole}")


class LocationFailure(QCEError):
    pass


class NeedsGeneratingMap(QCEError):
    pass


class BudgetExceeded(QCEError):
    pass


class DegenerateFit(QCEError):
    pass


class DivergentSeries(QCEError):
    def __init__(self, q: float):
        self.q = q
        super().__init__(f"energy series diverges: q = {q:.6g} >= 1")
