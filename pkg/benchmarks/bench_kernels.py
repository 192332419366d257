"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--episodes N]

Prints per-call times for each kernel under both backends, then the wall time
of closed-loop expert episodes run in a subprocess per backend.
"""

import argparse
import os
import subprocess
import sys
import textwrap
import timeit

import numpy as np

from modeswitch import _pykernels

try:
    from modeswitch import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    pts = np.stack([np.linspace(0, 120, 241), np.zeros(241)], axis=1)
    pts[120:, 1] = np.linspace(0, 30, 121)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    rects = rng.uniform(-20, 20, (4, 4))
    rects[:, 2:] = rects[:, :2] + 5.0
    x = rng.standard_normal(33)
    w0, b0 = rng.standard_normal((64, 33)), rng.standard_normal(64)
    w1, b1 = rng.standard_normal((64, 64)), rng.standard_normal(64)
    w2, b2 = rng.standard_normal((2, 64)), rng.standard_normal(2)
    px, py = rng.uniform(0, 120, 4096), rng.uniform(-5, 30, 4096)
    return {
        "wrap_angle": lambda k: k.wrap_angle(7.5),
        "vehicle_step": lambda k: k.vehicle_step(1.0, 2.0, 0.3, 8.0, 0.4, -0.2, 8.0, 1.2, 15.0, 0.05, 0.1),
        "obb_overlap": lambda k: k.obb_overlap(0.0, 0.0, 0.1, 3.0, 1.0, 1.2, 2.2, 0.9),
        "segment_hits_rects": lambda k: k.segment_hits_rects(-30.0, -30.0, 30.0, 25.0, rects),
        "project_polyline": lambda k: k.project_polyline(60.3, 4.1, pts, cum),
        "project_polyline_batch[4096]": lambda k: k.project_polyline_batch(px, py, pts, cum),
        "branch_forward": lambda k: k.branch_forward(x, w0, b0, w1, b1, w2, b2),
    }


EPISODES = textwrap.dedent("""
    import time, numpy as np
    from modeswitch import kernels
    from modeswitch.experts import collect_demonstrations
    t = time.perf_counter()
    ds = collect_demonstrations("timid", ["cross-traffic", "merge"], {n}, seed=1)
    print(kernels.BACKEND, ds.K, time.perf_counter() - t)
""")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--episodes", type=int, default=10)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels is not None else [])
    print(f"{'kernel':30s}" + "".join(f"{n:>14s}" for n, _ in backends) + ("   speed-up" if len(backends) > 1 else ""))
    for name, fn in cases(rng).items():
        n = max(1, args.repeat // 100) if "batch" in name else args.repeat
        times = []
        for _, mod in backends:
            fn(mod)
            times.append(min(timeit.repeat(lambda: fn(mod), number=n, repeat=3)) / n)
        row = f"{name:30s}" + "".join(f"{t * 1e6:11.2f} us" for t in times)
        if len(times) > 1:
            row += f"   {times[0] / times[1]:8.1f}x"
        print(row)
    print()
    print(f"closed-loop expert rollouts, {args.episodes} episodes x 2 scenarios:")
    wall = {}
    for pure in ("1", "0"):
        env = dict(os.environ, MODESWITCH_PURE=pure)
        out = subprocess.run([sys.executable, "-c", EPISODES.format(n=args.episodes)], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        wall[out[0]] = float(out[2])
        print(f"  {out[0]:8s} {int(out[1]):7d} steps  {float(out[2]):7.2f} s")
    if len(wall) == 2 and wall.get("cython"):
        print(f"  speed-up {wall['python'] / wall['cython']:.2f}x")


if __name__ == "__main__":
    main()
