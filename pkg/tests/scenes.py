"""Random footprint pairs shared by the oracle, symmetry and acceptance tests."""

from __future__ import annotations

import numpy as np

from predguide.evidence import footprint_from_mask

from relation_oracle import Fp

SIZE = 64


def random_mask(rng: np.random.Generator, size: int = SIZE) -> np.ndarray:
    """Union of one to three rectangles, sometimes with a disc carved in."""
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        w, h = (int(v) for v in rng.integers(2, size // 2, size=2))
        x, y = int(rng.integers(0, size - w + 1)), int(rng.integers(0, size - h + 1))
        mask[y:y + h, x:x + w] = True
    if rng.random() < 0.3:
        yy, xx = np.mgrid[:size, :size]
        cx, cy, rad = rng.integers(0, size, size=3)
        hole = (xx - cx) ** 2 + (yy - cy) ** 2 < (rad // 3) ** 2
        if (mask & ~hole).any():
            mask &= ~hole
    return mask


def random_pair(rng: np.random.Generator, size: int = SIZE):
    """Two masks; about a third of pairs are placed close or overlapping."""
    ms = random_mask(rng, size)
    if rng.random() < 0.35:
        mr = np.roll(ms, (int(rng.integers(-6, 7)), int(rng.integers(-6, 7))), axis=(0, 1))
        if not mr.any():
            mr = random_mask(rng, size)
    else:
        mr = random_mask(rng, size)
    return ms, mr


def random_depth(rng: np.random.Generator, size: int = SIZE) -> np.ndarray:
    return rng.uniform(0.0, 100.0, size=(size, size))


def pixels(mask: np.ndarray) -> set[tuple[int, int]]:
    ys, xs = np.nonzero(mask)
    return {(int(x), int(y)) for x, y in zip(xs, ys)}


def both_footprints(mask: np.ndarray, depth: np.ndarray | None = None):
    fp = footprint_from_mask(mask, depth)
    grid = None if depth is None else depth.tolist()
    return fp, Fp(pixels(mask), grid)


def mirror_x(mask: np.ndarray) -> np.ndarray:
    return mask[:, ::-1]


def mirror_y(mask: np.ndarray) -> np.ndarray:
    return mask[::-1, :]
