"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Times ``nearest_sqdist`` on random clouds and a full ``solve`` on an N=M=10
synthetic pair under each backend. Backends are swapped by patching the
module-level kernel functions, so both runs share one interpreter.
"""

import argparse
import time

import numpy as np

from viewstitch import kernels
from viewstitch import synthetic as syn
from viewstitch.stitcher import solve


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def use_backend(name):
    impl = kernels.get_backend(name)
    kernels.nearest_sqdist = impl.nearest_sqdist
    kernels.greedy_scan = impl.greedy_scan


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    clouds = {n: (rng.normal(size=(n, 3)), rng.normal(size=(n, 3)) + 0.5) for n in (100, 1000, 4000)}
    params = syn.SceneParams(n_objects=10, visibility="both", partial_overlap=False, footprint=(0.3, 0.7),
                             yaw_delta_max=0.3, baseline_max=1.0)
    pair = syn.make_pair(params, syn.NoiseModel.moderate(), seed=0)

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND})")
    rows = []
    for name in backends:
        use_backend(name)
        row = {}
        for n, (q, p) in clouds.items():
            row[f"nearest {n}x{n}"] = best_of(lambda: kernels.nearest_sqdist(q, p), args.repeat)
        row["solve N=M=10, 30 hyps"] = best_of(
            lambda: solve(pair.view1, pair.view2, pair.affinity, pair.distribution, k_rot=3, k_trans=10), max(1, args.repeat // 2)
        )
        rows.append((name, row))
    use_backend(kernels.BACKEND)

    labels = list(rows[0][1])
    print(f"{'case':<24}" + "".join(f"{name:>12}" for name, _ in rows) + ("     speedup" if len(rows) == 2 else ""))
    for label in labels:
        vals = [row[label] for _, row in rows]
        line = f"{label:<24}" + "".join(f"{1000 * v:>10.2f}ms" for v in vals)
        if len(vals) == 2:
            line += f"{vals[1] / vals[0]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
