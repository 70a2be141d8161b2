"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Prints per-kernel best-of-N timings for each available backend, the speedup
of the compiled backend, and whether the two backends agree bit for bit.
Wall-clock numbers vary by machine; only the equality column is stable.
"""

import argparse
import timeit

import numpy as np

from liftpose import kernels


def cases(rng):
    # gap fill over a long track with 10% missing slots
    n = 200_000
    vals = rng.normal(size=n)
    present = rng.random(n) > 0.1
    vals[~present] = 0.0
    # temporal-model-shaped activations: (batch, channels, time)
    x = rng.normal(size=(64, 128, 81))
    t_out = (81 - 3) // 3 + 1
    cols = rng.normal(size=(64, t_out, 128, 3))
    xd = rng.normal(size=(4, 128, 500))
    td = 500 - 2 * 9
    colsd = rng.normal(size=(4, td, 128, 3))
    coeffs = rng.normal(size=(3, 3))
    v = rng.uniform(0, 500, 200_000)
    d = rng.uniform(100, 600, 200_000)
    return {
        "ewma_fill (200k)": lambda k: k.ewma_fill(vals, present, 0.5),
        "im2col strided (64x128x81, k3 s3)": lambda k: k.im2col_1d(x, 3, 3, 1, t_out),
        "col2im strided": lambda k: k.col2im_1d(cols, 81, 3, 1),
        "im2col dilated (4x128x500, k3 d9)": lambda k: k.im2col_1d(xd, 3, 1, 9, td),
        "col2im dilated": lambda k: k.col2im_1d(colsd, 500, 1, 9),
        "horner2d (200k, deg 2x2)": lambda k: k.horner2d(coeffs, v, d),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    header = f"{'kernel':38s}" + "".join(f"{b + ' ms':>12s}" for b in backends)
    if "cython" in backends:
        header += f"{'speedup':>10s}{'identical':>11s}"
    print(header)
    for name, fn in cases(rng).items():
        times, outs = {}, {}
        for b in backends:
            mod = kernels.get_backend(b)
            outs[b] = fn(mod)
            times[b] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
        row = f"{name:38s}" + "".join(f"{times[b]:12.3f}" for b in backends)
        if "cython" in backends:
            same = np.array_equal(outs["python"], outs["cython"], equal_nan=True)
            row += f"{times['python'] / times['cython']:10.2f}x{str(same):>10s}"
        print(row)


if __name__ == "__main__":
    main()
