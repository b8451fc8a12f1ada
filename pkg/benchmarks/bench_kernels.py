"""Compare the compiled and the plain-numpy versions of the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run once to trigger compilation, then timed; the table shows
the best of ``--repeat`` runs and the max difference between the two outputs.
"""

import argparse
import time

import numpy as np

from gapweaver import _accel


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def radial_case():
    dr, r_max = 1e-3, 12.0
    steps = int(np.ceil(r_max / dr)) + 1

    def make(kernel):
        def run():
            q, p = np.zeros(steps), np.zeros(steps)
            kernel(2.2062, 1.0, 1.0, 0, dr, r_max, q, p)
            return q
        return run
    return "radial_rk4 (12k steps)", make(_accel.radial_rk4_numpy), make(_accel.radial_rk4_numba)


def midpoint_case(n=200):
    rng = np.random.default_rng(0)
    base = [(rng.standard_normal(n * n) + 1j * rng.standard_normal(n * n)) for _ in range(3)]
    g = np.array([9.48e-3, 4.52e-3, 3.79e-3, 1.60e-2])

    def make(kernel):
        def run():
            a = [b.copy() for b in base]
            kernel(a[0], a[1], a[2], g, -0.01j)
            return np.concatenate(a)
        return run
    return f"cubic_midpoint ({n}x{n})", make(_accel.cubic_midpoint_numpy), \
        make(_accel.cubic_midpoint_numba)


def phase_case(n=512):
    rng = np.random.default_rng(1)
    e0 = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    v = np.ascontiguousarray(rng.random((n, n)))

    def make(kernel):
        def run():
            e = e0.copy()
            kernel(e, v, 1.0, 0.02)
            return e
        return run
    return f"gp_phase ({n}x{n})", make(_accel.gp_phase_numpy), make(_accel.gp_phase_numba)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _accel.radial_rk4_numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':28s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for name, slow, fast in (radial_case(), midpoint_case(), phase_case()):
        fast()  # compile
        ts, out_s = best_of(slow, max(1, args.repeat // 2))
        tf, out_f = best_of(fast, args.repeat)
        diff = float(np.max(np.abs(out_s - out_f)))
        print(f"{name:28s} {1e3 * ts:11.2f} {1e3 * tf:11.2f} {ts / tf:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
