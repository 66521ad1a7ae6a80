"""Benchmark the sequential recurrence kernels: compiled versus pure numpy.

Times linrec_fwd and linrec_bwd on (B, L, M) inputs for both importable
backends and verifies their outputs stay bitwise identical.  Run as
``python3 benchmarks/bench_scan.py``.
"""

import argparse
import time

import numpy as np

from pointscan import kernels


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(batch, lengths, m, repeats, seed):
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (active: {kernels.BACKEND})")
    print(f"shape (B, L, M) = ({batch}, L, {m}), best of {repeats}")
    header = f"{'L':>7}"
    for name in backends:
        header += f"  {name + ' fwd':>12}  {name + ' bwd':>12}"
    names = list(backends)
    if len(names) > 1:
        header += f"  {names[1] + ' fwd speedup':>18}"
    print(header)

    rng = np.random.default_rng(seed)
    identical = True
    for length in lengths:
        a = rng.uniform(0.1, 0.99, (batch, length, m))
        u = rng.standard_normal((batch, length, m))
        g = rng.standard_normal((batch, length, m))
        row = f"{length:>7}"
        fwd_times = {}
        outputs = {}
        for name, impl in backends.items():
            h = kernels.linrec_fwd(a, u, impl=impl)
            outputs[name] = h
            fwd_times[name] = best_of(
                lambda impl=impl: kernels.linrec_fwd(a, u, impl=impl), repeats)
            bwd = best_of(
                lambda impl=impl, h=h: kernels.linrec_bwd(a, h, g, impl=impl),
                repeats)
            row += f"  {fwd_times[name] * 1e3:>10.2f}ms  {bwd * 1e3:>10.2f}ms"
        if len(names) > 1:
            row += f"  {fwd_times[names[0]] / fwd_times[names[1]]:>17.1f}x"
            if not np.array_equal(outputs[names[0]], outputs[names[1]]):
                identical = False
        print(row)
    if len(backends) > 1:
        print(f"bitwise identical outputs: {identical}")
        if not identical:
            return 1
    else:
        print("only one backend importable; build the extension to compare")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=4)
    parser.add_argument("--m", type=int, default=256,
                        help="flattened channel-state width D*N")
    parser.add_argument("--lengths", default="256,1024,4096",
                        help="comma-separated sequence lengths")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    lengths = [int(tok) for tok in args.lengths.split(",") if tok.strip()]
    return bench(args.batch, lengths, args.m, args.repeats, args.seed)


if __name__ == "__main__":
    raise SystemExit(main())
