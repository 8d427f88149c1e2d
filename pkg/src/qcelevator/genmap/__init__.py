from .moves import (Move, MoveReport, build_frame_remap, build_twist, build_twists, require_valid,
                    validate_move)
from .phi import GeneratingMap, PhiReport, build_generating_map, validate_generating_map
from .planner import Plan, plan_moves

__all__ = [
    "GeneratingMap", "Move", "MoveReport", "Plan", "PhiReport", "build_frame_remap",
    "build_generating_map", "build_twist", "build_twists", "plan_moves", "require_valid",
    "validate_generating_map", "validate_move",
]
