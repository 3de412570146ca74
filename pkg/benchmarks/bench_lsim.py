"""Compare the compiled and NumPy state recursions on a closed-loop run.

    python3 benchmarks/bench_lsim.py [--samples N] [--repeat R]
"""

import argparse
import timeit

import numpy as np

from roadsense import kernels
from roadsense.fleet import table_row
from roadsense.observer import AgentLoop, _discrete_loop


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=10_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    p, g = table_row(45)
    ss = _discrete_loop(AgentLoop(p, p, g), True)
    rng = np.random.default_rng(0)
    BU = rng.normal(size=(args.samples, ss.B.shape[1])) @ ss.B.T
    x0 = np.zeros(ss.A.shape[0])
    print(f"closed-loop states: {ss.A.shape[0]}, samples: {args.samples}")

    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    timings = {}
    for backend in backends:
        best = min(
            timeit.repeat(
                lambda: kernels.state_recursion(ss.A, BU, x0, backend=backend),
                number=1, repeat=args.repeat,
            )
        )
        timings[backend] = best
        print(f"{backend:>7}: {best * 1e3:9.2f} ms")
    if len(timings) == 2:
        a = kernels.state_recursion(ss.A, BU, x0, backend="cython")
        b = kernels.state_recursion(ss.A, BU, x0, backend="python")
        print(f"speed-up: {timings['python'] / timings['cython']:.1f}x, "
              f"max abs difference {np.max(np.abs(a - b)):.1e}")
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
