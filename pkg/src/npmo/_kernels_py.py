"""Pure-Python grid kernels.

Reference implementation of the hot loops used by the path primitives. The
Cython module ``_kernels`` exposes the exact same functions and must produce
identical results (same A* tie-breaking, same arrays).

Grid arrays are indexed ``[y, x]``. ``occ`` holds -1 for a free cell, -2 for
an immovable cell and ``k >= 0`` for a cell covered by movable object ``k``.
"""
from __future__ import annotations

import heapq

import numpy as np

FREE = -1
WALL = -2

# up, down, left, right
DIRS = ((0, -1), (0, 1), (-1, 0), (1, 0))


def placement_free(occ, obj, w, h):
    """Reference cells where a ``w x h`` footprint fits without touching
    anything but object ``obj`` itself."""
    M = occ.shape[0]
    blocked = (occ != FREE) & (occ != obj)
    free = np.zeros((M, M), dtype=np.uint8)
    if w > M or h > M:
        return free
    # summed-area table of blocked cells
    sat = np.zeros((M + 1, M + 1), dtype=np.int32)
    sat[1:, 1:] = blocked.cumsum(0).cumsum(1)
    ny, nx = M - h + 1, M - w + 1
    cnt = sat[h:h + ny, w:w + nx] - sat[0:ny, w:w + nx] - sat[h:h + ny, 0:nx] + sat[0:ny, 0:nx]
    free[:ny, :nx] = cnt == 0
    return free


def sweep(free, x, y, dx, dy):
    """Advance from (x, y) while the next placement is free; returns the end
    cell and the number of cells moved."""
    M = free.shape[0]
    n = 0
    while True:
        nx, ny = x + dx, y + dy
        if nx < 0 or ny < 0 or nx >= M or ny >= M or not free[ny, nx]:
            return x, y, n
        x, y = nx, ny
        n += 1


def astar(free, sx, sy, gx, gy):
    """Shortest 4-connected route over ``free`` placements.

    Manhattan heuristic, unit cost. The open list is ordered by (f, push
    counter) and neighbours are pushed in up/down/left/right order, so ties
    resolve to the first-found path. Returns an ``(L + 1, 2)`` int32 array of
    (x, y) or ``None`` when the goal is unreachable.
    """
    M = free.shape[0]
    if not free[sy, sx] or not free[gy, gx]:
        return None
    start = sy * M + sx
    goal = gy * M + gx
    g = {start: 0}
    parent = {start: -1}
    closed = set()
    counter = 0
    heap = [(abs(sx - gx) + abs(sy - gy), counter, start)]
    while heap:
        _, _, node = heapq.heappop(heap)
        if node in closed:
            continue
        if node == goal:
            out = []
            while node != -1:
                out.append((node % M, node // M))
                node = parent[node]
            return np.array(out[::-1], dtype=np.int32)
        closed.add(node)
        cx, cy = node % M, node // M
        gn = g[node] + 1
        for dx, dy in DIRS:
            nx, ny = cx + dx, cy + dy
            if nx < 0 or ny < 0 or nx >= M or ny >= M or not free[ny, nx]:
                continue
            nb = ny * M + nx
            if nb in closed or g.get(nb, 1 << 30) <= gn:
                continue
            g[nb] = gn
            parent[nb] = node
            counter += 1
            heapq.heappush(heap, (gn + abs(nx - gx) + abs(ny - gy), counter, nb))
    return None


def primitive_table(occ, poses, sizes, targets, active):
    """Lengths and end cells of the five primitives for every object.

    ``lengths[i, k]`` is -1 when primitive ``k`` of object ``i`` is unusable
    (inactive object, zero displacement or unreachable target).
    """
    n = poses.shape[0]
    lengths = np.full((n, 5), -1, dtype=np.int32)
    ends = np.zeros((n, 5, 2), dtype=np.int32)
    for i in range(n):
        if not active[i]:
            continue
        x, y = int(poses[i, 0]), int(poses[i, 1])
        free = placement_free(occ, i, int(sizes[i, 0]), int(sizes[i, 1]))
        for k, (dx, dy) in enumerate(DIRS):
            ex, ey, m = sweep(free, x, y, dx, dy)
            if m > 0:
                lengths[i, k] = m
                ends[i, k] = ex, ey
        tx, ty = int(targets[i, 0]), int(targets[i, 1])
        if tx < 0 or (tx == x and ty == y):
            continue
        path = astar(free, x, y, tx, ty)
        if path is not None:
            lengths[i, 4] = len(path) - 1
            ends[i, 4] = tx, ty
    return lengths, ends


def _reachable(free, sx, sy, gx, gy):
    M = free.shape[0]
    if not free[sy, sx] or not free[gy, gx]:
        return False
    seen = np.zeros((M, M), dtype=bool)
    seen[sy, sx] = True
    stack = [(sx, sy)]
    while stack:
        x, y = stack.pop()
        if x == gx and y == gy:
            return True
        for dx, dy in DIRS:
            nx, ny = x + dx, y + dy
            if 0 <= nx < M and 0 <= ny < M and free[ny, nx] and not seen[ny, nx]:
                seen[ny, nx] = True
                stack.append((nx, ny))
    return False


def arrival_blocks(walls, poses, sizes, targets, at_target):
    """``out[i] = 1`` when parking unfinished object ``i`` on its target
    leaves some other unfinished object without a route to its own target.

    Routes only avoid immovables and parked (finished) objects; the other
    unfinished objects are ignored.
    """
    n = poses.shape[0]
    out = np.zeros(n, dtype=np.uint8)
    base = np.array(walls, dtype=np.int32)
    for j in range(n):
        if at_target[j]:
            tx, ty = int(targets[j, 0]), int(targets[j, 1])
            base[ty:ty + sizes[j, 1], tx:tx + sizes[j, 0]] = j
    for i in range(n):
        if at_target[i]:
            continue
        occ = base.copy()
        tx, ty = int(targets[i, 0]), int(targets[i, 1])
        occ[ty:ty + sizes[i, 1], tx:tx + sizes[i, 0]] = i
        for j in range(n):
            if j == i or at_target[j]:
                continue
            free = placement_free(occ, j, int(sizes[j, 0]), int(sizes[j, 1]))
            if not _reachable(free, int(poses[j, 0]), int(poses[j, 1]), int(targets[j, 0]), int(targets[j, 1])):
                out[i] = 1
                break
    return out
