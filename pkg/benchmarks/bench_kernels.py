"""Compare the numba and pure-numpy kernels on scorer-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--pairs 20000]

Run with OWFORGE_DISABLE_NUMBA=1 to time the end-to-end scorer on the fallback path.
"""
import argparse
import random
import time

import numpy as np

from owforge import _accel, kernels
from owforge.metrics import carb_scores


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--pairs", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    pairs = [(rng.integers(0, 8, rng.integers(1, 12)), rng.integers(0, 8, rng.integers(1, 12)))
             for _ in range(args.pairs)]
    mats = [np.round(rng.random((rng.integers(1, 12), rng.integers(1, 12))), 2)
            for _ in range(args.pairs // 10)]

    rows = []
    if _accel.HAVE_NUMBA:
        kernels.lcs_length(*pairs[0])  # compile outside the timed region
        kernels.greedy_assignment(mats[0])
        rows.append(("lcs", "numba", _best_of(lambda: [kernels.lcs_length(a, b) for a, b in pairs], args.repeat)))
    rows.append(("lcs", "numpy", _best_of(lambda: [kernels.lcs_length_numpy(a, b) for a, b in pairs], args.repeat)))
    if _accel.HAVE_NUMBA:
        rows.append(("greedy", "numba", _best_of(lambda: [kernels.greedy_assignment(m) for m in mats], args.repeat)))
    rows.append(("greedy", "numpy", _best_of(lambda: [kernels.greedy_assignment_numpy(m) for m in mats], args.repeat)))

    pyr = random.Random(args.seed)
    words = ["camp", "nou", "home", "venue", "of", "fc", "barcelona", "city", "country"]
    trip = lambda: tuple(" ".join(pyr.choices(words, k=pyr.randint(1, 4))) for _ in range(3))  # noqa: E731
    cases = [([trip() for _ in range(6)], [trip() for _ in range(6)]) for _ in range(300)]
    rows.append(("carb 6x6", _accel.backend(),
                 _best_of(lambda: [carb_scores(p, g) for p, g in cases], args.repeat)))

    print(f"{'kernel':<10} {'backend':<7} {'best of ' + str(args.repeat):>12}")
    for name, backend, secs in rows:
        print(f"{name:<10} {backend:<7} {secs * 1e3:>10.1f} ms")


if __name__ == "__main__":
    main()
