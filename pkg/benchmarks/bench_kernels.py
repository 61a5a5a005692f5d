"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from distmon import _kernels as K


def cases(rng):
    words = rng.integers(0, 2**16, size=(61, 10_000), dtype=np.uint16)
    keys = K.decode_heights(words, 14, backend="numpy")
    groups = rng.integers(1, 513, size=100_000)
    gkeys = rng.integers(1, 18, size=100_000)
    starts = (groups - 1) * 10
    return {
        "decode_heights (61x1e4)": lambda b: K.decode_heights(words, 14, backend=b),
        "rowwise_max_ties (61x1e4)": lambda b: K.rowwise_max_ties(keys, backend=b),
        "group_max_mask (1e5, 512 groups)": lambda b: K.group_max_mask(groups, gkeys, 513, backend=b),
        "zero_run_heights (1e5, cap 10)": lambda b: K.zero_run_heights(12345, starts, 10, backend=b),
        "zero_block_flags (1e5, width 3)": lambda b: K.zero_block_flags(12345, (groups - 1) * 3, 3, backend=b),
    }


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if K.HAVE_NUMBA else [])
    print(f"{'kernel':36s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        times = []
        for b in backends:
            fn(b)  # warm-up / compile
            times.append(min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) * 1e3)
        line = f"{name:36s}" + "".join(f"{t:10.3f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
