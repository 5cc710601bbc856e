"""Low-level policy: the five path primitives of one object.

A directional primitive slides the object's footprint one cell at a time
until the next placement would collide or leave the grid. The A* primitive
routes the object to its target around everything else, which stays put.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import kernels
from .geometry import DIRECTIONAL, Path, Pose, PrimitiveAction, PrimitiveKind


class UnknownObject(IndexError):
    pass


def _check_object(state, obj: int) -> None:
    if not 0 <= obj < len(state.scenario.objects):
        raise UnknownObject(f"object id {obj} out of range")


def free_placements(state, obj: int) -> np.ndarray:
    """``[y, x]`` mask of reference cells object ``obj`` may occupy."""
    w, h = state.scenario.sizes[obj]
    return kernels.placement_free(state.occ, obj, int(w), int(h))


def _pose(state, obj, x, y) -> Pose:
    return Pose(int(x), int(y), state.scenario.initial[obj].phi)


def directional_sweep(state, obj: int, kind: PrimitiveKind) -> Path:
    """Path of a directional sweep; a 1-element path means no motion."""
    _check_object(state, obj)
    kind = PrimitiveKind(kind)
    if kind not in DIRECTIONAL:
        raise ValueError(f"{kind} is not a directional primitive")
    x, y = (int(v) for v in state.poses[obj])
    dx, dy = kernels.DIRS[int(kind)]
    _, _, n = kernels.sweep(free_placements(state, obj), x, y, dx, dy)
    return tuple(_pose(state, obj, x + s * dx, y + s * dy) for s in range(n + 1))


def astar_path(state, obj: int) -> Optional[Path]:
    """Shortest collision-free route to the object's target, or ``None``."""
    _check_object(state, obj)
    tx, ty = state.scenario.targets[obj]
    x, y = state.poses[obj]
    route = kernels.astar(free_placements(state, obj), int(x), int(y), int(tx), int(ty))
    if route is None:
        return None
    return tuple(_pose(state, obj, px, py) for px, py in route)


def expand_primitive(state, action: PrimitiveAction) -> Optional[Path]:
    """The path ``step`` would execute, or ``None`` when the primitive is
    unusable (zero displacement, unreachable target, immovable object)."""
    obj = action.object
    _check_object(state, obj)
    if obj >= state.n_objects:
        return None
    if action.kind == PrimitiveKind.ASTAR:
        if state.at_target[obj]:
            return None
        return astar_path(state, obj)
    path = directional_sweep(state, obj, action.kind)
    return path if len(path) > 1 else None
