"""Deterministic grid simulator for non-prehensile multi-object rearrangement.

Coordinates: ``x`` is the column, ``y`` the row, ``(0, 0)`` is the top-left
cell and "up" decreases ``y``. Grid arrays are indexed ``[y, x]``.

Movable objects carry ids ``0 .. N-1``. Objects flagged ``movable=False``
come after them, stay at their initial pose and are drawn in the immovable
channel together with the free-standing ``immovable`` rectangles.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import kernels, pathfind
from .geometry import ORIENTATIONS, Path, Pose, PrimitiveAction, PrimitiveKind, Rect

T_MAX = 50
N_MAX = 20
PLACEMENT_RETRIES = 1000

MOVE_REWARD = -1.0
ARRIVAL_REWARD = 4.0
LEAVE_REWARD = -4.0
SUCCESS_REWARD = 50.0


class ScenarioError(ValueError):
    """Scenario violates a layout invariant."""


class PlacementFailure(RuntimeError):
    """Random placement ran out of retries."""


class IllegalAction(ValueError):
    pass


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class ObjectSpec:
    id: int
    w: int = 1
    h: int = 1
    movable: bool = True


@dataclass(frozen=True, eq=False)
class Scenario:
    M: int
    objects: Tuple[ObjectSpec, ...]
    initial: Tuple[Pose, ...]
    target: Tuple[Optional[Pose], ...]
    immovable: Tuple[Rect, ...] = ()
    seed: int = 0
    # derived arrays, filled in __post_init__
    walls: np.ndarray = field(init=False, repr=False, compare=False)
    sizes: np.ndarray = field(init=False, repr=False, compare=False)
    targets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "initial", tuple(self.initial))
        object.__setattr__(self, "target", tuple(self.target))
        object.__setattr__(self, "immovable", tuple(self.immovable))
        self._validate()
        n = self.n_objects
        walls = np.full((self.M, self.M), kernels.FREE, dtype=np.int32)
        for r in self.obstacle_rects():
            walls[r.y:r.y + r.h, r.x:r.x + r.w] = kernels.WALL
        sizes = np.array([[o.w, o.h] for o in self.objects[:n]], dtype=np.int32).reshape(n, 2)
        targets = np.array([[p.x, p.y] for p in self.target[:n]], dtype=np.int32).reshape(n, 2)
        walls.setflags(write=False)
        sizes.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "targets", targets)

    @property
    def n_objects(self) -> int:
        return sum(1 for o in self.objects if o.movable)

    def obstacle_rects(self):
        """Every static obstacle as a rectangle (immovable objects included)."""
        rects = list(self.immovable)
        for o, p in zip(self.objects, self.initial):
            if not o.movable:
                rects.append(Rect(p.x, p.y, o.w, o.h))
        return rects

    def footprint(self, i: int, pose: Pose) -> Rect:
        o = self.objects[i]
        return Rect(pose.x, pose.y, o.w, o.h)

    def _validate(self):
        M = self.M
        if M < 1:
            raise ScenarioError(f"M must be positive, got {M}")
        n_all = len(self.objects)
        if len(self.initial) != n_all or len(self.target) != n_all:
            raise ScenarioError("initial/target must have one pose per object")
        seen_fixed = False
        for i, o in enumerate(self.objects):
            if o.id != i:
                raise ScenarioError(f"object ids must be 0..{n_all - 1} in order (got {o.id} at {i})")
            if o.w < 1 or o.h < 1:
                raise ScenarioError(f"object {i}: footprint must be at least 1x1")
            if not o.movable:
                seen_fixed = True
                if self.target[i] is not None:
                    raise ScenarioError(f"object {i}: immovable objects have no target")
            elif seen_fixed:
                raise ScenarioError("movable objects must precede immovable ones")
            elif self.target[i] is None:
                raise ScenarioError(f"object {i}: movable object needs a target")
        for r in self.immovable:
            if r.w < 1 or r.h < 1 or not _rect_inside(r, M):
                raise ScenarioError(f"immovable {r} lies outside the grid")

        def check_layout(name, poses):
            grid = np.zeros((M, M), dtype=np.int32)
            for r in self.immovable:
                grid[r.y:r.y + r.h, r.x:r.x + r.w] += 1
            for i, (o, p) in enumerate(zip(self.objects, poses)):
                if p is None:
                    p = self.initial[i]
                if p.phi not in ORIENTATIONS:
                    raise ScenarioError(f"{name}[{i}]: orientation must be one of {ORIENTATIONS}")
                r = Rect(p.x, p.y, o.w, o.h)
                if not _rect_inside(r, M):
                    raise ScenarioError(f"{name}[{i}]: footprint leaves the grid")
                grid[r.y:r.y + r.h, r.x:r.x + r.w] += 1
            if (grid > 1).any():
                raise ScenarioError(f"{name}: footprints overlap")

        check_layout("initial", self.initial)
        check_layout("target", self.target)
        for i in range(self.n_objects):
            if self.target[i].phi != self.initial[i].phi:
                raise ScenarioError(f"target[{i}]: orientation differs from initial; objects never rotate")

    def structurally_equal(self, other: "Scenario") -> bool:
        return (
            self.M == other.M
            and self.objects == other.objects
            and self.initial == other.initial
            and self.target == other.target
            and self.immovable == other.immovable
            and self.seed == other.seed
        )

    __eq__ = structurally_equal

    def __hash__(self):
        return hash((self.M, self.objects, self.initial, self.target, self.immovable, self.seed))

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "n_objects": self.n_objects,
            "objects": [{"id": o.id, "w": o.w, "h": o.h, "movable": o.movable} for o in self.objects],
            "initial": [{"x": p.x, "y": p.y, "phi": p.phi} for p in self.initial],
            "target": [None if p is None else {"x": p.x, "y": p.y, "phi": p.phi} for p in self.target],
            "immovable": [{"x": r.x, "y": r.y, "w": r.w, "h": r.h} for r in self.immovable],
            "seed": self.seed,
        }


def _rect_inside(r: Rect, M: int) -> bool:
    return r.x >= 0 and r.y >= 0 and r.x + r.w <= M and r.y + r.h <= M


class WorldState:
    """One episode state. Treated as a value: ``step`` returns a new instance."""

    __slots__ = ("scenario", "poses", "at_target", "t", "prev_action", "t_max", "occ", "_table", "_blocks")

    def __init__(self, scenario: Scenario, poses: np.ndarray, t: int = 0,
                 prev_action: Optional[PrimitiveAction] = None, t_max: int = T_MAX):
        self.scenario = scenario
        self.poses = poses
        self.t = t
        self.prev_action = prev_action
        self.t_max = t_max
        n = scenario.n_objects
        self.at_target = np.all(poses == scenario.targets, axis=1) if n else np.zeros(0, dtype=bool)
        occ = scenario.walls.copy()
        sizes = scenario.sizes
        for i in range(n):
            x, y = poses[i]
            occ[y:y + sizes[i, 1], x:x + sizes[i, 0]] = i
        self.occ = occ
        self._table = None
        self._blocks = None

    @property
    def n_objects(self) -> int:
        return self.scenario.n_objects

    @property
    def current_poses(self) -> Tuple[Pose, ...]:
        sc = self.scenario
        moving = tuple(Pose(int(x), int(y), sc.initial[i].phi) for i, (x, y) in enumerate(self.poses))
        return moving + sc.initial[sc.n_objects:]

    @property
    def success(self) -> bool:
        return bool(self.at_target.all())

    @property
    def done(self) -> bool:
        return self.success or self.t >= self.t_max

    def key(self) -> bytes:
        """Hashable layout key (ignores t and the previous action)."""
        return self.poses.tobytes()

    def table(self):
        """Cached ``(lengths, ends)`` of all primitives; see ``kernels.primitive_table``."""
        if self._table is None:
            n = self.n_objects
            self._table = kernels.primitive_table(
                self.occ, self.poses, self.scenario.sizes, self.scenario.targets,
                np.ones(n, dtype=np.uint8))
        return self._table

    def arrival_blocks(self) -> np.ndarray:
        """Cached per-object flags; see ``kernels.arrival_blocks``."""
        if self._blocks is None:
            sc = self.scenario
            self._blocks = kernels.arrival_blocks(sc.walls, self.poses, sc.sizes, sc.targets,
                                                  self.at_target.astype(np.uint8))
        return self._blocks

    def __repr__(self):
        return f"WorldState(t={self.t}, poses={self.poses.tolist()}, at_target={self.at_target.tolist()})"


@dataclass
class StepOutcome:
    reward: float
    done: bool
    success: bool
    moved_path: Path
    arrived: bool = False
    left: bool = False


def initial_state(scenario: Scenario, t_max: int = T_MAX) -> WorldState:
    n = scenario.n_objects
    poses = np.array([[p.x, p.y] for p in scenario.initial[:n]], dtype=np.int32).reshape(n, 2)
    return WorldState(scenario, poses, t_max=t_max)


def legal_mask(state: WorldState) -> np.ndarray:
    """Boolean ``(N, 5)`` legality table."""
    return state.table()[0] >= 0


def legal_actions(state: WorldState) -> Tuple[PrimitiveAction, ...]:
    ii, kk = np.nonzero(legal_mask(state))
    return tuple(PrimitiveAction(int(i), PrimitiveKind(int(k))) for i, k in zip(ii, kk))


def candidate_mask(state: WorldState) -> np.ndarray:
    """Actions offered to learned policies and the tree search.

    Legal primitives of unfinished objects; if none exists, every legal
    primitive (so no artificial dead end is introduced).
    """
    legal = legal_mask(state)
    cand = legal & ~state.at_target[:, None]
    return cand if cand.any() else legal


def is_success(state: WorldState) -> bool:
    return state.success


def step(state: WorldState, action: PrimitiveAction):
    """Execute one primitive. Returns ``(next_state, StepOutcome)``."""
    if state.done:
        raise EpisodeFinished(f"episode already finished at t={state.t}")
    i, k = action.object, int(action.kind)
    if not 0 <= i < state.n_objects or state.table()[0][i, k] < 0:
        raise IllegalAction(f"{action} is not legal at t={state.t}")
    path = pathfind.expand_primitive(state, action)
    end = path[-1]
    poses = state.poses.copy()
    poses[i] = end.x, end.y
    nxt = WorldState(state.scenario, poses, state.t + 1, action, state.t_max)
    was, now = bool(state.at_target[i]), bool(nxt.at_target[i])
    arrived = now and not was
    left = was and not now
    success = nxt.success
    reward = MOVE_REWARD + ARRIVAL_REWARD * arrived + LEAVE_REWARD * left + SUCCESS_REWARD * success
    return nxt, StepOutcome(reward, nxt.done, success, path, arrived, left)


def encode_observation(state: WorldState, n_max: int = N_MAX) -> np.ndarray:
    """Binary ``(M, M, 2 * n_max + 1)`` volume indexed ``[y, x, channel]``.

    Channel ``2i`` is object i's current footprint, ``2i + 1`` its target
    footprint and the last channel the immovable obstacles.
    """
    sc = state.scenario
    n = sc.n_objects
    if n > n_max:
        raise ValueError(f"{n} objects exceed n_max={n_max}")
    obs = np.zeros((sc.M, sc.M, 2 * n_max + 1), dtype=np.uint8)
    obs[:, :, 2 * n_max] = sc.walls == kernels.WALL
    for i in range(n):
        w, h = sc.sizes[i]
        x, y = state.poses[i]
        obs[y:y + h, x:x + w, 2 * i] = 1
        tx, ty = sc.targets[i]
        obs[ty:ty + h, tx:tx + w, 2 * i + 1] = 1
    return obs


def random_scenario(n_objects: int, M: int, seed: int, n_immovable: int = 0) -> Scenario:
    """Random 1x1 layout drawn by rejection sampling.

    Initial and target cells never overlap within a layout, every object's
    target differs from its start cell, and with immovable cells present
    every target is reachable once the movable objects are ignored.
    """
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    if M * M - n_immovable < n_objects or (n_objects == 1 and M * M - n_immovable < 2):
        raise PlacementFailure(f"{n_objects} objects do not fit twice on a {M}x{M} grid")
    if n_objects > N_MAX:
        raise ValueError(f"n_objects must be <= {N_MAX}")
    rng = np.random.default_rng(seed)
    for _ in range(PLACEMENT_RETRIES):
        sc = _draw_layout(rng, n_objects, M, seed, n_immovable)
        if n_immovable == 0 or _targets_reachable(sc):
            return sc
    raise PlacementFailure(f"no solvable layout in {PLACEMENT_RETRIES} draws")


def _draw_layout(rng, n_objects, M, seed, n_immovable):
    taken = np.zeros((M, M), dtype=bool)

    def draw(forbid=None):
        for _ in range(PLACEMENT_RETRIES):
            x, y = (int(v) for v in rng.integers(0, M, size=2))
            if not taken[y, x] and (x, y) != forbid:
                taken[y, x] = True
                return x, y
        raise PlacementFailure(f"no free cell found in {PLACEMENT_RETRIES} tries")

    walls = [draw() for _ in range(n_immovable)]
    init = [draw() for _ in range(n_objects)]
    for x, y in init:
        taken[y, x] = False
    tgt = [draw(forbid=init[i]) for i in range(n_objects)]
    return Scenario(
        M=M,
        objects=tuple(ObjectSpec(i) for i in range(n_objects)),
        initial=tuple(Pose(x, y) for x, y in init),
        target=tuple(Pose(x, y) for x, y in tgt),
        immovable=tuple(Rect(x, y) for x, y in walls),
        seed=seed,
    )


def _targets_reachable(sc: Scenario) -> bool:
    for i in range(sc.n_objects):
        w, h = (int(v) for v in sc.sizes[i])
        free = kernels.placement_free(sc.walls, i, w, h)
        (x, y), (tx, ty) = sc.initial[i].cell(), sc.target[i].cell()
        if kernels.astar(free, x, y, tx, ty) is None:
            return False
    return True


def scenario_from_dict(d: dict) -> Scenario:
    objects = tuple(ObjectSpec(int(o["id"]), int(o.get("w", 1)), int(o.get("h", 1)), bool(o.get("movable", True)))
                    for o in d["objects"])
    return Scenario(
        M=int(d["M"]),
        objects=objects,
        initial=tuple(Pose(int(p["x"]), int(p["y"]), int(p.get("phi", 0))) for p in d["initial"]),
        target=tuple(None if p is None else Pose(int(p["x"]), int(p["y"]), int(p.get("phi", 0)))
                     for p in d["target"]),
        immovable=tuple(Rect(int(r["x"]), int(r["y"]), int(r.get("w", 1)), int(r.get("h", 1)))
                        for r in d.get("immovable", [])),
        seed=int(d.get("seed", 0)),
    )


def replay(scenario: Scenario, actions: Sequence[PrimitiveAction], t_max: int = T_MAX):
    """Re-execute ``actions``; returns the final state and the outcomes."""
    state = initial_state(scenario, t_max)
    outcomes = []
    for a in actions:
        state, out = step(state, a)
        outcomes.append(out)
    return state, outcomes


def trace_record(t: int, action: PrimitiveAction, out: StepOutcome) -> dict:
    return {
        "t": t,
        "object": action.object,
        "primitive": action.kind.label,
        "path": [[p.x, p.y, p.phi] for p in out.moved_path],
        "reward": out.reward,
        "done": out.done,
    }
