"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py --points 200000 --repeat 5
"""
import argparse
import time

import numpy as np

from omnibev import kernels
from omnibev.camera import MeiCamera
from omnibev.polar import BevGrid
from omnibev.view_transform import FeatureCloud, splat

FISHEYE = MeiCamera(2.2134, 0.01647, 1.3378, 1336.4, 1335.1, 716.9, 705.7, 1400, 1400)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(n, rng):
    pts = rng.uniform(-20, 20, (n, 3))
    pts[:, 2] = rng.uniform(0.5, 20, n)
    pix = np.column_stack([rng.uniform(0, FISHEYE.width, n), rng.uniform(0, FISHEYE.height, n)])
    grid = BevGrid("polar", -5.0, 3.0, rho_max=50.0, n_theta=64, n_rho=32)
    cloud = FeatureCloud(rng.uniform(-50, 50, (n, 3)) * [1, 1, 0.05], rng.standard_normal((n, 16)),
                         np.zeros(n, dtype=np.int32))
    return {
        "project": lambda: FISHEYE.project_points(pts),
        "unproject": lambda: FISHEYE.unproject_pixels(pix),
        "splat": lambda: splat(cloud, grid),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    kernels.set_threads(args.threads)
    jobs = workloads(args.points, np.random.default_rng(args.seed))
    backends = kernels.available_backends()
    timings = {}
    prev = kernels.backend_name()
    try:
        for b in backends:
            kernels.set_backend(b)
            for name, fn in jobs.items():
                timings[name, b] = best_of(fn, args.repeat)
    finally:
        kernels.set_backend(prev)

    print(f"{args.points} points, {args.threads} thread(s), best of {args.repeat}")
    print(f"{'kernel':<10}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name in jobs:
        row = f"{name:<10}" + "".join(f"{timings[name, b] * 1e3:>10.1f}ms" for b in backends)
        if len(backends) > 1:
            row += f"{timings[name, 'python'] / timings[name, 'compiled']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
