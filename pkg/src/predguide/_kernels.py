"""Mask kernels used by relation scoring and evidence serialization.

Each kernel has a numba and a pure-numpy implementation with identical
results. ``PREDGUIDE_KERNELS=numpy`` forces the numpy path; the default uses
numba when it imports.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np


# ---------------------------------------------------------------------------
# numpy path


def _np_overlap_counts(ms: np.ndarray, mr: np.ndarray) -> tuple[int, int, int]:
    return int(np.count_nonzero(ms)), int(np.count_nonzero(mr)), int(np.count_nonzero(ms & mr))


def _np_support_contact(ms: np.ndarray, mr: np.ndarray, x_lo: int, x_hi: int, tol: float) -> tuple[float, int, int]:
    if x_hi <= x_lo:
        return 0.0, 0, 0
    sub = ms[:, x_lo:x_hi]
    ref = mr[:, x_lo:x_hi]
    cols = sub.any(axis=0)
    n = int(cols.sum())
    if n == 0:
        return 0.0, 0, 0
    h = ms.shape[0]
    rows = np.arange(h)[:, None]
    bottom = np.where(sub, rows, -1).max(axis=0)
    gap = np.abs(rows - (bottom[None, :] + 1)).astype(np.float64)
    gap = np.where(ref, gap, np.inf).min(axis=0)[cols]
    closeness = np.clip(1.0 - gap / tol, 0.0, 1.0)
    closeness[~np.isfinite(gap)] = 0.0
    covered = int(np.count_nonzero(gap <= tol))
    return float(closeness.sum()), covered, n


def _np_rle_encode(flat: np.ndarray) -> np.ndarray:
    flat = np.asarray(flat, dtype=np.uint8).ravel()
    if flat.size == 0:
        return np.zeros(0, dtype=np.int64)
    edges = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], edges))
    lengths = np.diff(np.concatenate((starts, [flat.size])))
    out = np.empty(2 * starts.size, dtype=np.int64)
    out[0::2] = flat[starts]
    out[1::2] = lengths
    return out


def _np_rle_decode(pairs: np.ndarray, size: int) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64)
    values = pairs[0::2].astype(bool)
    counts = pairs[1::2]
    if counts.sum() != size:
        raise ValueError(f"run lengths sum to {int(counts.sum())}, expected {size}")
    return np.repeat(values, counts)


numpy_impl = SimpleNamespace(
    overlap_counts=_np_overlap_counts,
    support_contact=_np_support_contact,
    rle_encode=_np_rle_encode,
    rle_decode=_np_rle_decode,
    name="numpy",
)


# ---------------------------------------------------------------------------
# numba path


def _build_numba():
    import numba as nb

    njit_kwargs = {"nogil": True, "cache": True}

    @nb.njit(**njit_kwargs)
    def overlap_counts(ms, mr):
        a = 0
        b = 0
        both = 0
        h, w = ms.shape
        for y in range(h):
            for x in range(w):
                s = ms[y, x]
                r = mr[y, x]
                if s:
                    a += 1
                if r:
                    b += 1
                if s and r:
                    both += 1
        return a, b, both

    @nb.njit(**njit_kwargs)
    def _support_contact(ms, mr, x_lo, x_hi, tol):
        h = ms.shape[0]
        total = 0.0
        covered = 0
        n = 0
        for x in range(x_lo, x_hi):
            bottom = -1
            for y in range(h):
                if ms[y, x]:
                    bottom = y
            if bottom < 0:
                continue
            n += 1
            best = np.inf
            for y in range(h):
                if mr[y, x]:
                    g = float(abs(y - (bottom + 1)))
                    if g < best:
                        best = g
            if best == np.inf:
                continue
            c = 1.0 - best / tol
            if c > 1.0:
                c = 1.0
            if c > 0.0:
                total += c
            if best <= tol:
                covered += 1
        return total, covered, n

    def support_contact(ms, mr, x_lo, x_hi, tol):
        if x_hi <= x_lo:
            return 0.0, 0, 0
        total, covered, n = _support_contact(ms, mr, int(x_lo), int(x_hi), float(tol))
        return float(total), int(covered), int(n)

    @nb.njit(**njit_kwargs)
    def _rle_encode(flat):
        out = np.empty(2 * flat.size, dtype=np.int64)
        k = 0
        cur = flat[0]
        run = 0
        for v in flat:
            if v == cur:
                run += 1
            else:
                out[k] = cur
                out[k + 1] = run
                k += 2
                cur = v
                run = 1
        out[k] = cur
        out[k + 1] = run
        return out[: k + 2]

    def rle_encode(flat):
        flat = np.ascontiguousarray(np.asarray(flat, dtype=np.uint8).ravel())
        if flat.size == 0:
            return np.zeros(0, dtype=np.int64)
        return _rle_encode(flat)

    @nb.njit(**njit_kwargs)
    def _rle_decode(pairs, size):
        out = np.zeros(size, dtype=np.bool_)
        pos = 0
        for i in range(0, pairs.size, 2):
            n = pairs[i + 1]
            if pairs[i] != 0:
                out[pos:pos + n] = True
            pos += n
        return out, pos

    def rle_decode(pairs, size):
        pairs = np.ascontiguousarray(np.asarray(pairs, dtype=np.int64))
        if pairs[1::2].sum() != size:
            raise ValueError(f"run lengths sum to {int(pairs[1::2].sum())}, expected {size}")
        out, _ = _rle_decode(pairs, size)
        return out

    def overlap(ms, mr):
        a, b, both = overlap_counts(ms, mr)
        return int(a), int(b), int(both)

    return SimpleNamespace(
        overlap_counts=overlap,
        support_contact=support_contact,
        rle_encode=rle_encode,
        rle_decode=rle_decode,
        name="numba",
    )


def _load_numba():
    try:
        return _build_numba()
    except ImportError:
        return None


numba_impl = _load_numba()


def _select():
    wanted = os.environ.get("PREDGUIDE_KERNELS", "numba").strip().lower()
    if wanted == "numpy" or numba_impl is None:
        return numpy_impl
    return numba_impl


active = _select()
BACKEND = active.name


def overlap_counts(ms: np.ndarray, mr: np.ndarray) -> tuple[int, int, int]:
    """(|ms|, |mr|, |ms & mr|) for two boolean rasters of equal shape."""
    return active.overlap_counts(ms, mr)


def support_contact(ms: np.ndarray, mr: np.ndarray, x_lo: int, x_hi: int, tol: float) -> tuple[float, int, int]:
    """Column scan of subject bottoms against reference pixels.

    Returns (sum of per-column closeness, covered columns, scanned columns)
    over subject columns in ``[x_lo, x_hi)``.
    """
    return active.support_contact(ms, mr, x_lo, x_hi, tol)


def rle_encode(flat: np.ndarray) -> np.ndarray:
    return active.rle_encode(flat)


def rle_decode(pairs: np.ndarray, size: int) -> np.ndarray:
    return active.rle_decode(pairs, size)
