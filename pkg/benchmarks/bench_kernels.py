"""Compare the compiled and pure-Python grid kernels on random scenarios.

    python benchmarks/bench_kernels.py --scenarios 200 --objects 10
"""
import argparse
import time

import numpy as np

from npmo import _kernels_py, gridworld as gw, kernels


def _time(fn, cases, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for args in cases:
            fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best / len(cases)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", type=int, default=200)
    ap.add_argument("--objects", type=int, default=10)
    ap.add_argument("--grid", type=int, default=10)
    ap.add_argument("--immovable", type=int, default=15)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if kernels.BACKEND != "cython":
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    from npmo import _kernels

    states = [gw.initial_state(gw.random_scenario(args.objects, args.grid, args.seed + i, args.immovable))
              for i in range(args.scenarios)]
    table = [(s.occ, s.poses, s.scenario.sizes, s.scenario.targets, np.ones(s.n_objects, np.uint8))
             for s in states]
    blocks = [(s.scenario.walls, s.poses, s.scenario.sizes, s.scenario.targets, s.at_target.astype(np.uint8))
              for s in states]
    astar = []
    for s in states:
        free = _kernels_py.placement_free(s.occ, 0, 1, 1)
        (x, y), (tx, ty) = s.poses[0], s.scenario.targets[0]
        astar.append((free, int(x), int(y), int(tx), int(ty)))
    free = [(s.occ, 0, 1, 1) for s in states]

    rows = [("kernel", "python_us", "cython_us", "speedup")]
    for name, cases in (("placement_free", free), ("astar", astar), ("primitive_table", table),
                        ("arrival_blocks", blocks)):
        tp = _time(getattr(_kernels_py, name), cases, args.repeat) * 1e6
        tc = _time(getattr(_kernels, name), cases, args.repeat) * 1e6
        rows.append((name, f"{tp:.1f}", f"{tc:.1f}", f"{tp / tc:.1f}x"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))


if __name__ == "__main__":
    main()
