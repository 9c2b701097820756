"""Benchmark the compiled inverse-update kernels against the NumPy fallback.

Usage:
    python benchmarks/bench_kernels.py [--sizes 25 50 100 200] [--reps 2000]
    python benchmarks/bench_kernels.py --search   # end-to-end search timing

The search benchmark runs the same multi-start local search twice, once per
kernel backend, by re-importing the package with COPTDESIGN_FORCE_PURE set.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from coptdesign.kernels import _pure

try:
    from coptdesign.kernels import _fast
except ImportError:
    _fast = None


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def time_kernel(fn, args_list, reps):
    t0 = time.perf_counter()
    for i in range(reps):
        fn(*args_list[i % len(args_list)])
    return (time.perf_counter() - t0) / reps


def bench_kernels(sizes, reps):
    rng = np.random.default_rng(0)
    impls = [("pure", _pure)] + ([("compiled", _fast)] if _fast else [])
    print(f"{'n':>5} {'kernel':<10}" + "".join(f"{name:>14}" for name, _ in impls) + f"{'speedup':>10}")
    for n in sizes:
        cases_down = []
        cases_ext = []
        for _ in range(8):
            sigma = random_spd(rng, n)
            sinv = np.linalg.inv(sigma)
            cases_down.append((sinv, int(rng.integers(n))))
            f = rng.standard_normal(n) * 0.3
            h = 1.0 + float(f @ sinv @ f)
            cases_ext.append((sinv, f, h))
        for label, cases in (("downdate", cases_down), ("extend", cases_ext)):
            fn_name = "downdate_inverse" if label == "downdate" else "extend_inverse"
            times = [time_kernel(getattr(impl, fn_name), cases, reps) for _, impl in impls]
            row = f"{n:>5} {label:<10}" + "".join(f"{t * 1e6:>12.1f}us" for t in times)
            if len(times) == 2:
                row += f"{times[0] / times[1]:>9.2f}x"
            print(row)


SEARCH_SNIPPET = """
import time
import numpy as np
import coptdesign as cd
from coptdesign.kernels import backend

space = cd.cluster_trial_space(6, 5, 10, cd.stepped_wedge_pattern(6, 5), unit="observation")
spec = cd.ModelSpec(
    family_link=cd.FamilyLink("gaussian", "identity"),
    mean=cd.LinearIndicatorMean(n_periods=5),
    covariance=cd.CovarianceSpec.exchangeable(0.25, 0.1, resid_sd=1.0),
)
c = np.zeros(6); c[0] = 1.0
problem = cd.DesignProblem(space, spec, c)
t0 = time.perf_counter()
rep = cd.multi_start(problem, cd.SearchConfig(m=100, algorithm="local", starts=10, seed=0))
dt = time.perf_counter() - t0
print(f"{backend():>9}: 10 local-search starts in {dt:.2f}s "
      f"({dt / 10:.3f}s per start), best objective {rep.best_value:.8f}")
"""


def bench_search():
    for force_pure in (False, True):
        env = dict(os.environ)
        if force_pure:
            env["COPTDESIGN_FORCE_PURE"] = "1"
        else:
            env.pop("COPTDESIGN_FORCE_PURE", None)
        subprocess.run([sys.executable, "-c", SEARCH_SNIPPET], env=env, check=True)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[25, 50, 100, 200])
    parser.add_argument("--reps", type=int, default=2000)
    parser.add_argument("--search", action="store_true",
                        help="run the end-to-end search benchmark instead")
    args = parser.parse_args()
    if _fast is None:
        print("note: compiled extension not importable, benchmarking the fallback only")
    if args.search:
        bench_search()
    else:
        bench_kernels(args.sizes, args.reps)


if __name__ == "__main__":
    main()
