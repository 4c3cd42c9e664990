"""Compare the compiled and pure-Python interpreter kernels.

    python benchmarks/bench_kernels.py [--programs N] [--cases N]

Times suite evaluation (the cost-function hot path) on random programs and
a short Metropolis search under each backend.
"""
import argparse
import random
import os
import subprocess
import sys
import time

import numpy as np

from superopt import _kernels_py
from superopt.bruteforce import all_instructions
from superopt.isa import Program

SEARCH_SNIPPET = """
import time
from superopt import kernels
from superopt.hd import TASK1_UNOPTIMIZED, get_task, make_suite
from superopt.proposal import ProposalParams
from superopt.search import SearchConfig, run_search
s = make_suite(get_task(1))
t = time.perf_counter()
for seed in range({runs}):
    run_search(s, TASK1_UNOPTIMIZED, ProposalParams.uniform(), SearchConfig(400, seed=seed))
print(kernels.BACKEND, time.perf_counter() - t)
"""


def bench_suite(mod, progs, inputs, expected, repeat):
    t = time.perf_counter()
    for _ in range(repeat):
        for p in progs:
            mod.suite_hamming(p, inputs, expected)
    return (time.perf_counter() - t) / (repeat * len(progs))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--programs", type=int, default=200)
    ap.add_argument("--cases", type=int, default=32)
    ap.add_argument("--length", type=int, default=8)
    ap.add_argument("--searches", type=int, default=20)
    args = ap.parse_args()

    rng = random.Random(0)
    pool = all_instructions()
    progs = [Program(tuple(rng.choice(pool) for _ in range(args.length))).code for _ in range(args.programs)]
    inputs = np.random.default_rng(0).integers(0, 2**63, (args.cases, 4), dtype=np.uint64)
    expected = inputs[:, 1].copy()

    try:
        from superopt import _kernels as compiled
    except ImportError:
        compiled = None
        print("compiled extension not built; only the Python backend is timed")

    py_t = bench_suite(_kernels_py, progs, inputs, expected, 1)
    print(f"suite eval ({args.length} instr x {args.cases} cases): python {py_t * 1e6:9.1f} us")
    if compiled is not None:
        cy_t = bench_suite(compiled, progs, inputs, expected, 20)
        print(f"suite eval ({args.length} instr x {args.cases} cases): cython {cy_t * 1e6:9.1f} us  ({py_t / cy_t:.0f}x)")

    for env in ({"SUPEROPT_PURE_PYTHON": "1"}, {"SUPEROPT_PURE_PYTHON": "0"}):
        out = subprocess.run(
            [sys.executable, "-c", SEARCH_SNIPPET.format(runs=args.searches)],
            capture_output=True, text=True, env={**os.environ, **env}, check=True,
        ).stdout.split()
        print(f"{args.searches} searches x 400 steps, {out[0]:>6}: {float(out[1]):.2f} s")


if __name__ == "__main__":
    main()
