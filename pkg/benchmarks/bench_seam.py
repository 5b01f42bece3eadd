"""Compare the compiled and numpy seam-carving kernels.

    python3 benchmarks/bench_seam.py [--repeat 5] [--frac 0.6]

Times the cumulative-cost DP alone on a 480x640 energy map, then a full
480x640 -> 60% width retarget, under each available backend.  Outputs of the
two backends are checked for exact equality.
"""
import argparse
import time

import numpy as np

from salrank import kernels, retarget


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--frac", type=float, default=0.6)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    H, W = 480, 640
    image = rng.uniform(0, 255, size=(H, W, 3))
    rank_map = np.zeros((H, W))
    rank_map[150:330, 250:400] = 1.0
    energy = retarget.modulate_energy(retarget.gradient_energy(image), rank_map)
    target = int(round(args.frac * W))

    backends = [b for b in ("cython", "python") if b in kernels.AVAILABLE]
    results = {}
    previous = kernels.backend()
    try:
        for b in backends:
            kernels.use_backend(b)
            t_dp, cost = best_of(lambda: kernels.cumulative_cost(energy), args.repeat)
            t_rt, out = best_of(lambda: retarget.retarget_width(image, rank_map, target), 1)
            results[b] = (t_dp, t_rt, cost, out)
            print(f"{b:7s}  DP {t_dp * 1e3:8.2f} ms   retarget {W}->{target}: {t_rt:6.2f} s")
    finally:
        kernels.use_backend(previous)

    if len(results) == 2:
        (c_dp, c_rt, c_cost, c_out), (p_dp, p_rt, p_cost, p_out) = results["cython"], results["python"]
        same = np.array_equal(c_cost, p_cost) and np.array_equal(c_out, p_out)
        print(f"speed-up  DP x{p_dp / c_dp:.1f}   retarget x{p_rt / c_rt:.1f}   outputs identical: {same}")
    else:
        print("compiled backend not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
