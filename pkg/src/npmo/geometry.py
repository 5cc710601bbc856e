"""Small value types shared by the simulator, the primitives and the planners."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple

ORIENTATIONS = (0, 90, 180, 270)


class PrimitiveKind(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    ASTAR = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, name: str) -> "PrimitiveKind":
        return cls[name.upper()]


N_KINDS = len(PrimitiveKind)
DIRECTIONAL = (PrimitiveKind.UP, PrimitiveKind.DOWN, PrimitiveKind.LEFT, PrimitiveKind.RIGHT)


@dataclass(frozen=True)
class Pose:
    x: int
    y: int
    phi: int = 0

    def cell(self) -> Tuple[int, int]:
        return self.x, self.y


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int = 1
    h: int = 1

    def cells(self):
        for j in range(self.h):
            for i in range(self.w):
                yield self.x + i, self.y + j


@dataclass(frozen=True, order=True)
class PrimitiveAction:
    """``<object, primitive>`` pair; ``index`` flattens it to ``object * 5 + kind``."""

    object: int
    kind: PrimitiveKind

    @property
    def index(self) -> int:
        return self.object * N_KINDS + int(self.kind)

    @classmethod
    def from_index(cls, index: int) -> "PrimitiveAction":
        return cls(int(index) // N_KINDS, PrimitiveKind(int(index) % N_KINDS))

    def __str__(self) -> str:
        return f"({self.object}, {self.kind.label})"


# Ordered waypoints of one object; the first entry is the start pose.
Path = Tuple[Pose, ...]


def path_length(path: Path) -> int:
    return max(len(path) - 1, 0)
