"""Compare the compiled and pure-Python matching/AP kernels.

Usage: python benchmarks/bench_kernels.py [--frames N] [--repeat R]

Two workloads: raw kernel calls on random images, and a full per-frame
AP sweep over every grid config of a synthetic trace (the oracle's hot loop).
"""

import argparse
import time

import numpy as np

from dsa_sim import kernels
from dsa_sim.oracle import frame_ap_vector
from dsa_sim.trace_store import EmulatorParams, drift_scenario, generate_synthetic


def random_images(n, rng):
    out = []
    for _ in range(n):
        m = int(rng.integers(1, 8))
        k = int(rng.integers(0, 40))
        xy = rng.uniform(0, 400, size=(m + k, 2))
        wh = rng.uniform(10, 120, size=(m + k, 2))
        boxes = np.hstack([xy, xy + wh])
        out.append((boxes[m:], rng.uniform(0, 1, size=k), boxes[:m]))
    return out


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=5000)
    ap.add_argument("--frames", type=int, default=12)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    try:
        compiled = kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not built; only the Python backend is available")
        return
    pure = kernels.get_backend("python")

    images = random_images(args.images, np.random.default_rng(0))
    rows = []
    for name, impl in (("python", pure), ("cython", compiled)):
        t = best_of(lambda: [impl.average_precision(d, s, g, 0.5) for d, s, g in images],
                    args.repeat)
        rows.append((f"average_precision x{len(images)}", name, t))

    trace = generate_synthetic(drift_scenario(4, args.frames, ("car", "dog"), seed=1),
                               EmulatorParams(clutter_rate=8.0, seed=1))
    frames = list(trace.frames())
    saved = (kernels.greedy_match, kernels.average_precision)
    for name, impl in (("python", pure), ("cython", compiled)):
        kernels.greedy_match, kernels.average_precision = impl.greedy_match, impl.average_precision
        t = best_of(lambda: [frame_ap_vector(f, c) for f in frames for c in ("car", "dog")],
                    args.repeat)
        rows.append((f"55-config AP sweep x{len(frames)} frames", name, t))
    kernels.greedy_match, kernels.average_precision = saved

    print(f"{'workload':<36}{'backend':<9}{'seconds':>10}")
    for work, name, t in rows:
        print(f"{work:<36}{name:<9}{t:>10.4f}")
    for i in range(0, len(rows), 2):
        print(f"speedup on {rows[i][0]}: {rows[i][2] / rows[i + 1][2]:.1f}x")


if __name__ == "__main__":
    main()
