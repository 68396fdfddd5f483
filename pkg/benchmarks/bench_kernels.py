"""Time the numba and numpy mask kernels on random footprint pairs.

    python benchmarks/bench_kernels.py --size 256 --pairs 200 --repeat 5

The numba column is skipped when numba is not installed. The first numba call
per kernel is timed separately as compile time.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from predguide import _kernels


def random_masks(rng: np.random.Generator, size: int, pairs: int) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for _ in range(pairs):
        masks = []
        for _ in range(2):
            m = np.zeros((size, size), dtype=bool)
            w, h = rng.integers(size // 8, size // 2, size=2)
            x, y = rng.integers(0, size - w), rng.integers(0, size - h)
            m[y:y + h, x:x + w] = True
            masks.append(m)
        out.append((masks[0], masks[1]))
    return out


def workloads(masks, size):
    flats = [ms.ravel() for ms, _ in masks]
    encoded = [_kernels.numpy_impl.rle_encode(f) for f in flats]
    tol = 0.02 * size
    return {
        "overlap_counts": lambda k: [k.overlap_counts(ms, mr) for ms, mr in masks],
        "support_contact": lambda k: [k.support_contact(ms, mr, 0, size, tol) for ms, mr in masks],
        "rle_encode": lambda k: [k.rle_encode(f) for f in flats],
        "rle_decode": lambda k: [k.rle_decode(p, size * size) for p in encoded],
    }


def best_of(fn, impl, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn(impl)
        times.append(time.perf_counter() - start)
    return min(times)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--pairs", type=int, default=200)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    masks = random_masks(np.random.default_rng(args.seed), args.size, args.pairs)
    impls = [_kernels.numpy_impl]
    if _kernels.numba_impl is not None:
        impls.append(_kernels.numba_impl)
    print(f"{args.pairs} pairs of {args.size}x{args.size} masks, best of {args.repeat}; active: {_kernels.BACKEND}")
    print(f"{'kernel':<18}" + "".join(f"{impl.name:>12}" for impl in impls) + f"{'speedup':>10}{'compile':>10}")
    for name, fn in workloads(masks, args.size).items():
        compile_time = ""
        if len(impls) == 2:
            # first call pays for jit compilation
            start = time.perf_counter()
            fn(impls[1])
            compile_time = f"{time.perf_counter() - start:.3f}s"
        cols = [best_of(fn, impl, args.repeat) for impl in impls]
        speedup = f"{cols[0] / cols[1]:.1f}x" if len(cols) == 2 else "-"
        print(f"{name:<18}" + "".join(f"{c * 1e3:>10.2f}ms" for c in cols) + f"{speedup:>10}{compile_time:>10}")


if __name__ == "__main__":
    main()
