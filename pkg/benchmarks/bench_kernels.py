"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 7]

Prints the median wall time of each kernel per backend and the speedup.
"""

import argparse
import statistics
import time

import numpy as np

from semcert.kernels import load_backend


def cases(rng):
    X = rng.normal(size=(100_000, 128))
    q = rng.normal(size=128)
    sub = rng.normal(size=(20_000, 8))
    C = rng.normal(size=(256, 8))
    cents = rng.normal(size=(16, 256, 8))
    codes = rng.integers(0, 256, size=(100_000, 16)).astype(np.int32)
    table = rng.random((16, 256))
    return {
        "sq_dists 100k x 128": lambda k: k.sq_dists(X, q),
        "assign 20k x 256 (d=8)": lambda k: k.assign(sub, C),
        "adc_table m=16 k=256": lambda k: k.adc_table(q, cents),
        "adc_scan 100k x 16": lambda k: k.adc_scan(codes, table),
    }


def timeit(fn, repeat):
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()
    backends = {"python": load_backend("python")}
    try:
        backends["compiled"] = load_backend("compiled")
    except ImportError:
        print("compiled extension not built; timing the python backend only")
    print(f"{'kernel':<26}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {b: timeit(lambda: fn(k), args.repeat) for b, k in backends.items()}
        row = f"{name:<26}" + "".join(f"{1e3 * t:>10.2f}ms" for t in times.values())
        if "compiled" in times:
            row += f"{times['python'] / times['compiled']:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
