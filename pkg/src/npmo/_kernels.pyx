# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid kernels. Same API and results as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free as cfree

cnp.import_array()

DEF FREE = -1

cdef int DX[4]
cdef int DY[4]
DX[:] = [0, 0, -1, 1]
DY[:] = [-1, 1, 0, 0]


cdef void _placement(const int[:, ::1] occ, int obj, int w, int h, unsigned char* out) noexcept nogil:
    cdef int M = occ.shape[0]
    cdef int x, y, i, j, v, ok
    for y in range(M):
        for x in range(M):
            out[y * M + x] = 0
    if w > M or h > M:
        return
    for y in range(M - h + 1):
        for x in range(M - w + 1):
            ok = 1
            for j in range(h):
                for i in range(w):
                    v = occ[y + j, x + i]
                    if v != FREE and v != obj:
                        ok = 0
                        break
                if not ok:
                    break
            out[y * M + x] = ok


cdef int _sweep(const unsigned char* free, int M, int x, int y, int dx, int dy, int* ex, int* ey) noexcept nogil:
    cdef int n = 0
    cdef int nx, ny
    while True:
        nx = x + dx
        ny = y + dy
        if nx < 0 or ny < 0 or nx >= M or ny >= M or not free[ny * M + nx]:
            ex[0] = x
            ey[0] = y
            return n
        x = nx
        y = ny
        n += 1


cdef inline bint _less(int* hf, int* hc, int a, int b) noexcept nogil:
    if hf[a] != hf[b]:
        return hf[a] < hf[b]
    return hc[a] < hc[b]


cdef inline void _swap(int* hf, int* hc, int* hn, int a, int b) noexcept nogil:
    cdef int t
    t = hf[a]; hf[a] = hf[b]; hf[b] = t
    t = hc[a]; hc[a] = hc[b]; hc[b] = t
    t = hn[a]; hn[a] = hn[b]; hn[b] = t


cdef int _astar(const unsigned char* free, int M, int sx, int sy, int gx, int gy, int* parent) noexcept nogil:
    """Fills ``parent`` and returns the path length, or -1 if unreachable."""
    cdef int n = M * M
    cdef int cap = 4 * n + 4
    cdef int* g = <int*> malloc(n * sizeof(int))
    cdef unsigned char* closed = <unsigned char*> malloc(n)
    cdef int* hf = <int*> malloc(cap * sizeof(int))
    cdef int* hc = <int*> malloc(cap * sizeof(int))
    cdef int* hn = <int*> malloc(cap * sizeof(int))
    cdef int size = 0, counter = 0, result = -1
    cdef int i, node, cx, cy, nx, ny, nb, gn, k, c, p
    for i in range(n):
        g[i] = 1 << 30
        closed[i] = 0
        parent[i] = -1
    if free[sy * M + sx] and free[gy * M + gx]:
        g[sy * M + sx] = 0
        hf[0] = abs(sx - gx) + abs(sy - gy)
        hc[0] = 0
        hn[0] = sy * M + sx
        size = 1
    while size > 0:
        node = hn[0]
        size -= 1
        if size > 0:
            hf[0] = hf[size]; hc[0] = hc[size]; hn[0] = hn[size]
            i = 0
            while True:
                c = 2 * i + 1
                if c >= size:
                    break
                if c + 1 < size and _less(hf, hc, c + 1, c):
                    c += 1
                if _less(hf, hc, c, i):
                    _swap(hf, hc, hn, c, i)
                    i = c
                else:
                    break
        if closed[node]:
            continue
        if node == gy * M + gx:
            result = g[node]
            break
        closed[node] = 1
        cx = node % M
        cy = node // M
        gn = g[node] + 1
        for k in range(4):
            nx = cx + DX[k]
            ny = cy + DY[k]
            if nx < 0 or ny < 0 or nx >= M or ny >= M or not free[ny * M + nx]:
                continue
            nb = ny * M + nx
            if closed[nb] or g[nb] <= gn:
                continue
            g[nb] = gn
            parent[nb] = node
            counter += 1
            i = size
            size += 1
            hf[i] = gn + abs(nx - gx) + abs(ny - gy)
            hc[i] = counter
            hn[i] = nb
            while i > 0:
                p = (i - 1) // 2
                if _less(hf, hc, i, p):
                    _swap(hf, hc, hn, i, p)
                    i = p
                else:
                    break
    cfree(g); cfree(closed); cfree(hf); cfree(hc); cfree(hn)
    return result


def placement_free(occ, int obj, int w, int h):
    cdef const int[:, ::1] o = np.ascontiguousarray(occ, dtype=np.int32)
    cdef int M = o.shape[0]
    out = np.zeros((M, M), dtype=np.uint8)
    cdef unsigned char[:, ::1] ov = out
    _placement(o, obj, w, h, &ov[0, 0])
    return out


def sweep(free, int x, int y, int dx, int dy):
    cdef const unsigned char[:, ::1] f = np.ascontiguousarray(free, dtype=np.uint8)
    cdef int ex, ey, n
    n = _sweep(&f[0, 0], f.shape[0], x, y, dx, dy, &ex, &ey)
    return ex, ey, n


def astar(free, int sx, int sy, int gx, int gy):
    cdef const unsigned char[:, ::1] f = np.ascontiguousarray(free, dtype=np.uint8)
    cdef int M = f.shape[0]
    parent = np.empty(M * M, dtype=np.int32)
    cdef int[::1] pv = parent
    cdef int length = _astar(&f[0, 0], M, sx, sy, gx, gy, &pv[0])
    if length < 0:
        return None
    out = np.empty((length + 1, 2), dtype=np.int32)
    cdef int[:, ::1] ov = out
    cdef int node = gy * M + gx
    cdef int i = length
    while i >= 0:
        ov[i, 0] = node % M
        ov[i, 1] = node // M
        node = pv[node]
        i -= 1
    return out


def primitive_table(occ, poses, sizes, targets, active):
    cdef const int[:, ::1] o = np.ascontiguousarray(occ, dtype=np.int32)
    cdef const int[:, ::1] ps = np.ascontiguousarray(poses, dtype=np.int32)
    cdef const int[:, ::1] sz = np.ascontiguousarray(sizes, dtype=np.int32)
    cdef const int[:, ::1] tg = np.ascontiguousarray(targets, dtype=np.int32)
    cdef const unsigned char[::1] act = np.ascontiguousarray(active, dtype=np.uint8)
    cdef int n = ps.shape[0]
    cdef int M = o.shape[0]
    lengths = np.full((n, 5), -1, dtype=np.int32)
    ends = np.zeros((n, 5, 2), dtype=np.int32)
    cdef int[:, ::1] lv = lengths
    cdef int[:, :, ::1] ev = ends
    cdef unsigned char* fr = <unsigned char*> malloc(M * M)
    cdef int* parent = <int*> malloc(M * M * sizeof(int))
    cdef int i, k, x, y, tx, ty, ex, ey, m
    with nogil:
        for i in range(n):
            if not act[i]:
                continue
            x = ps[i, 0]
            y = ps[i, 1]
            _placement(o, i, sz[i, 0], sz[i, 1], fr)
            for k in range(4):
                m = _sweep(fr, M, x, y, DX[k], DY[k], &ex, &ey)
                if m > 0:
                    lv[i, k] = m
                    ev[i, k, 0] = ex
                    ev[i, k, 1] = ey
            tx = tg[i, 0]
            ty = tg[i, 1]
            if tx < 0 or (tx == x and ty == y):
                continue
            m = _astar(fr, M, x, y, tx, ty, parent)
            if m >= 0:
                lv[i, 4] = m
                ev[i, 4, 0] = tx
                ev[i, 4, 1] = ty
    cfree(fr)
    cfree(parent)
    return lengths, ends


cdef bint _reachable(const unsigned char* free, int M, int sx, int sy, int gx, int gy, int* stack,
                     unsigned char* seen) noexcept nogil:
    cdef int i, top, node, x, y, k, nx, ny, nb
    if not free[sy * M + sx] or not free[gy * M + gx]:
        return False
    for i in range(M * M):
        seen[i] = 0
    seen[sy * M + sx] = 1
    stack[0] = sy * M + sx
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        x = node % M
        y = node // M
        if x == gx and y == gy:
            return True
        for k in range(4):
            nx = x + DX[k]
            ny = y + DY[k]
            if nx < 0 or ny < 0 or nx >= M or ny >= M:
                continue
            nb = ny * M + nx
            if free[nb] and not seen[nb]:
                seen[nb] = 1
                stack[top] = nb
                top += 1
    return False


def arrival_blocks(walls, poses, sizes, targets, at_target):
    base_arr = np.ascontiguousarray(walls, dtype=np.int32).copy()
    cdef const int[:, ::1] ps = np.ascontiguousarray(poses, dtype=np.int32)
    cdef const int[:, ::1] sz = np.ascontiguousarray(sizes, dtype=np.int32)
    cdef const int[:, ::1] tg = np.ascontiguousarray(targets, dtype=np.int32)
    cdef const unsigned char[::1] fin = np.ascontiguousarray(at_target, dtype=np.uint8)
    cdef int[:, ::1] base = base_arr
    cdef int n = ps.shape[0]
    cdef int M = base.shape[0]
    out = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] ov = out
    occ_arr = np.empty((M, M), dtype=np.int32)
    cdef int[:, ::1] occ = occ_arr
    cdef unsigned char* fr = <unsigned char*> malloc(M * M)
    cdef unsigned char* seen = <unsigned char*> malloc(M * M)
    cdef int* stack = <int*> malloc(M * M * sizeof(int))
    cdef int i, j, a, b
    with nogil:
        for j in range(n):
            if fin[j]:
                for b in range(sz[j, 1]):
                    for a in range(sz[j, 0]):
                        base[tg[j, 1] + b, tg[j, 0] + a] = j
        for i in range(n):
            if fin[i]:
                continue
            occ[:, :] = base
            for b in range(sz[i, 1]):
                for a in range(sz[i, 0]):
                    occ[tg[i, 1] + b, tg[i, 0] + a] = i
            for j in range(n):
                if j == i or fin[j]:
                    continue
                _placement(occ, j, sz[j, 0], sz[j, 1], fr)
                if not _reachable(fr, M, ps[j, 0], ps[j, 1], tg[j, 0], tg[j, 1], stack, seen):
                    ov[i] = 1
                    break
    cfree(fr)
    cfree(seen)
    cfree(stack)
    return out
