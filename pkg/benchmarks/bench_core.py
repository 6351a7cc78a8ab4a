"""Compare the compiled and numpy backends on the hot kernels.

    python3 benchmarks/bench_core.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from pmelab import _core_py

try:
    from pmelab import _core
except ImportError:  # extension not built
    _core = None


def cases(rng):
    pts1 = rng.random((20000, 1))
    pts2 = rng.random((20000, 2))
    vals2 = rng.random((128, 128))
    u = 1.0 + 0.5 * np.sin(2 * np.pi * np.arange(256) / 256)
    few = rng.random((1500, 1))
    n = 512
    P = np.linspace(0.0, 1.0, n + 1)
    x = np.arange(n) / n
    thetas = np.linspace(-0.01, 0.01, 200)
    return {
        "interp_periodic 2D, 20k pts": lambda m: m.interp_periodic(vals2, pts2),
        "cic_deposit 1D, 20k pts": lambda m: m.cic_deposit(pts1, 256),
        "pme_advance n=256, t=0.01": lambda m: m.pme_advance(u, 1 / 256, 0.01, 0.2, 1e-6, 10**9),
        "direct_velocity 1D, N=1500": lambda m: m.direct_velocity(few, 0.1 / (2 * np.pi), 2.0, 2),
        "circle_costs n=512, 200 shifts": lambda m: m.circle_costs(P, x, x + 1 / n, P, x, x + 1 / n, thetas),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        tp = min(timeit.repeat(lambda: fn(_core_py), number=1, repeat=args.repeat))
        if _core is None:
            print(f"{name:34s} {tp:11.4f} {'n/a':>11s} {'':>8s}")
            continue
        tc = min(timeit.repeat(lambda: fn(_core), number=1, repeat=args.repeat))
        print(f"{name:34s} {tp:11.4f} {tc:11.4f} {tp / tc:8.1f}")


if __name__ == "__main__":
    main()
