"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--R 100000]
"""

import argparse
import time

import numpy as np

from pertrl import kernels


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(R, rng):
    x = rng.normal(size=R)
    y = 0.9 * x + 0.1 * x**3
    w = rng.uniform(size=R)
    coeffs = rng.normal(size=19)
    T, n = 20, max(R // 10, 1)
    omega = rng.normal(size=(n, T))
    traj = dict(
        x0=1.0, xbar=np.linspace(1.0, 0.1, T + 1), ubar=np.zeros(T), K=-np.ones(T), S=np.zeros((T, 3)),
        fbar=np.array([0.0, -1.0, 0.0, -1.0]), gbar=np.array([1.0]), lbar=np.array([0.0, 0.0, 0.5]),
        cT=np.array([0.0, 0.0, 0.5]), r=1.0, dt=0.1, noise_scale=0.1 * np.sqrt(0.1), bound=1e8,
    )
    return {
        "horner (deg 18)": lambda k: k.horner(coeffs, x),
        "power_sums (2M=36)": lambda k: k.power_sums(x, 36),
        "weighted_power_sums (M=18)": lambda k: k.weighted_power_sums(x, w, 18),
        "cross_power_sums (18x18)": lambda k: k.cross_power_sums(x, y, 18, 18),
        f"closed_loop_costs ({n} paths)": lambda k: k.closed_loop_costs(omega, **traj),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--R", type=int, default=100_000)
    args = ap.parse_args()
    backends = kernels.available_backends()
    py = backends["python"]
    cy = backends.get("cython")
    if cy is None:
        print("compiled extension not built; only the python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, fn in cases(args.R, rng).items():
        tp = _best(lambda: fn(py), args.repeat) * 1e3
        if cy is None:
            print(f"{name:32s} {tp:12.3f} {'-':>12s} {'-':>8s}")
            continue
        tc = _best(lambda: fn(cy), args.repeat) * 1e3
        print(f"{name:32s} {tp:12.3f} {tc:12.3f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
