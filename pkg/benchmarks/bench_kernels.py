"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes are those of the default network on a batch of 12 images.
"""
import argparse
import timeit

import numpy as np

from salguide import _pykernels

try:
    from salguide import _ckernels
except ImportError:
    _ckernels = None

CASES = [
    # name, (n, h, w, c), kernel, stride, pad
    ("conv1", (12, 64, 64, 1), 3, 1, 1),
    ("conv2", (12, 32, 32, 8), 3, 1, 1),
    ("conv3", (12, 16, 16, 16), 3, 1, 1),
]


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    if _ckernels is None:
        print("compiled kernels not built; timing the numpy fallback only")

    print(f"{'kernel':<22}" + "".join(f"{name:>12}" for name, _ in backends) + ("   speedup" if _ckernels else ""))
    for name, shape, k, stride, pad in CASES:
        x = rng.normal(size=shape)
        cols = _pykernels.im2col(x, k, k, stride, pad)
        jobs = {
            f"im2col {name}": lambda m: m.im2col(x, k, k, stride, pad),
            f"col2im {name}": lambda m: m.col2im(cols, shape, k, k, stride, pad),
        }
        if shape[1] % 2 == 0:
            jobs[f"maxpool {name}"] = lambda m: m.maxpool_argmax(x, 2)
        for label, job in jobs.items():
            times = [bench(lambda m=m: job(m), args.repeat) for _, m in backends]
            line = f"{label:<22}" + "".join(f"{t:>10.3f}ms" for t in times)
            if len(times) == 2:
                line += f"   {times[0] / times[1]:6.2f}x"
            print(line)


if __name__ == "__main__":
    main()
