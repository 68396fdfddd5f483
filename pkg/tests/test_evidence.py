import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from predguide.errors import BackendFailure, DegenerateMask
from predguide.evidence import (
    Detection, EvidenceCache, Region, footprint_from, footprint_from_mask, interval_overlap, mask_from_rle,
    mask_metrics, mask_to_rle, rasterize_box,
)


def test_rasterize_uses_pixel_centers():
    m = rasterize_box((10, 10, 20, 20), 32, 32)
    assert m.sum() == 100
    fp = footprint_from_mask(m)
    assert fp.box == (10, 10, 20, 20)
    assert fp.centroid == (15.0, 15.0)
    # a half-pixel box edge excludes the pixel whose center is outside
    assert rasterize_box((10.6, 10, 20, 20), 32, 32).sum() == 90


def test_interval_overlap_relative_to_shorter():
    assert interval_overlap((0, 10), (5, 100)) == 0.5
    assert interval_overlap((0, 10), (20, 30)) == 0.0
    # degenerate intervals divide by at least one
    assert interval_overlap((3, 3), (0, 10)) == 0.0


def test_mask_metrics_half_overlap():
    a = rasterize_box((0, 0, 10, 10), 20, 20)
    b = rasterize_box((5, 0, 15, 10), 20, 20)
    j, i, c = mask_metrics(a, b)
    assert j == pytest.approx(1 / 3)
    assert i == 0.5 and c == 0.5


def test_mask_metrics_containment():
    small = rasterize_box((2, 2, 4, 4), 10, 10)
    big = rasterize_box((0, 0, 10, 10), 10, 10)
    j, i, c = mask_metrics(small, big)
    assert (j, i, c) == (pytest.approx(0.04), 1.0, 1.0)


def test_mask_metrics_empty_raises():
    with pytest.raises(DegenerateMask):
        mask_metrics(np.zeros((4, 4), bool), np.ones((4, 4), bool))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31 - 1))
def test_rle_roundtrip(w, h, seed):
    m = np.random.default_rng(seed).random((h, w)) < 0.5
    text = mask_to_rle(m)
    assert np.array_equal(mask_from_rle(text, w, h), m)
    pairs = [text.split(",")[k:k + 2] for k in range(0, len(text.split(",")), 2)]
    assert np.array_equal(mask_from_rle(pairs, w, h), m)


def test_rle_rejects_odd_and_wrong_length():
    with pytest.raises(ValueError):
        mask_from_rle("1,2,3", 2, 2)
    with pytest.raises(ValueError):
        mask_from_rle("1,3", 2, 2)


def test_footprint_depth_mean():
    m = rasterize_box((0, 0, 2, 1), 4, 4)
    depth = np.arange(16, dtype=float).reshape(4, 4)
    assert footprint_from_mask(m, depth).mean_depth == 0.5


def test_footprint_from_detection_prefers_mask():
    mask = rasterize_box((1, 1, 3, 3), 8, 8)
    det = Detection("dog", 0.9, (0, 0, 8, 8), mask)
    assert footprint_from(det, 8, 8).area == 4
    assert footprint_from(Detection("dog", 0.9, (0, 0, 8, 8)), 8, 8).area == 64


class CountingDetector:
    def __init__(self):
        self.calls = 0

    def __call__(self, image, query):
        self.calls += 1
        return [Detection(query, 0.5, (0, 0, 4, 4)), Detection(query, 0.9, (4, 4, 8, 8))]


def test_cache_memoizes_and_sorts():
    det = CountingDetector()
    cache = EvidenceCache(None, 8, 8, det)
    first = cache.detections("dog")
    assert cache.detections("dog") is first
    assert det.calls == 1
    assert [d.score for d in first] == [0.9, 0.5]
    assert cache.footprint("dog", 0) is cache.footprint("dog", 0)


def test_region_score_failure_is_none():
    def scorer(image, region, text):
        raise BackendFailure("down")

    cache = EvidenceCache(None, 8, 8, CountingDetector(), scorer)
    assert cache.region_score(cache.full_region(), "forest") is None
    assert EvidenceCache(None, 8, 8, CountingDetector()).region_score(Region("full"), "x") is None


def test_region_score_clipped():
    cache = EvidenceCache(None, 8, 8, CountingDetector(), lambda i, r, t: 1.7)
    assert cache.region_score(cache.full_region(), "x") == 1.0


def test_residual_background_excludes_detections():
    cache = EvidenceCache(None, 8, 8, CountingDetector())
    region = cache.residual_background(["dog"], 0.35)
    assert region.mask.sum() == 64 - 16 - 16
    assert cache.residual_background(["dog"], 0.6).mask.sum() == 64 - 16


def test_depth_failure_is_none():
    def depth(image):
        raise BackendFailure("no depth")

    cache = EvidenceCache(None, 8, 8, CountingDetector(), depth=depth)
    assert cache.depth_map() is None
    assert cache.footprint("dog", 0, with_depth=True).mean_depth is None
