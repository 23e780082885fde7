"""Time the compiled kernels against their pure-Python twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

Every kernel is run on identical inputs by each available backend; the
script checks that the outputs agree before reporting timings.
"""
import argparse
import time

import numpy as np

from imit2d.dynamics import BallParams
from imit2d.kernels import available_backends


def _cases():
    rng = np.random.default_rng(0)
    args = BallParams().kernel_args()
    y0 = np.array([-10.0, 1.0, 1.2, 22.0, -1.0, 4.0])
    times = np.linspace(0.0, 0.3, 31)
    a, b = rng.normal(size=(60, 2)), rng.normal(size=(60, 2))
    data = np.concatenate([rng.normal(0.0, 0.05, (150, 4)), rng.normal(1.0, 0.05, (150, 4))])
    return {
        "ball_rollout 5 s @ 600 Hz": (lambda k: k.ball_rollout(y0, 0, 3000, 1.0 / 600, *args), lambda r: r[0]),
        "ball_flight_at 31 samples": (lambda k: k.ball_flight_at(y0, times, 1.0 / 600, args[0], args[1]), lambda r: r),
        "dtw 60 x 60": (lambda k: k.dtw(a, b), lambda r: r),
        "mean_shift 300 points": (lambda k: k.mean_shift(data, data, 0.3, 1e-6, 500), lambda r: r[0]),
    }


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the Python backend only")
    print(f"{'kernel':28s}" + "".join(f"{name:>12s}" for name in sorted(backends)) + (f"{'speedup':>10s}" if len(backends) > 1 else ""))
    for name, (run, key) in _cases().items():
        outs = {b: key(run(k)) for b, k in backends.items()}
        ref = outs["python"]
        for b, out in outs.items():
            if not np.allclose(out, ref, rtol=1e-12, atol=1e-12):
                raise SystemExit(f"{name}: {b} disagrees with python")
        times = {b: best_time(lambda k=k: run(k), args.repeat) for b, k in backends.items()}
        row = f"{name:28s}" + "".join(f"{times[b] * 1e3:10.2f}ms" for b in sorted(backends))
        if len(backends) > 1:
            row += f"{times['python'] / times['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
