"""Visual evidence: detections, footprints, overlap metrics and the per-candidate cache."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import _kernels
from .errors import BackendFailure, DegenerateMask

Box = tuple[float, float, float, float]


def clip(x: float) -> float:
    return min(1.0, max(0.0, x))


def interval_overlap(a: Sequence[float], b: Sequence[float]) -> float:
    """Overlap of two 1-D intervals relative to the shorter one, at least 1 unit."""
    lo_a, hi_a = a
    lo_b, hi_b = b
    inter = max(0.0, min(hi_a, hi_b) - max(lo_a, lo_b))
    return clip(inter / max(1.0, min(hi_a - lo_a, hi_b - lo_b)))


def mask_metrics(ms: np.ndarray, mr: np.ndarray) -> tuple[float, float, float]:
    """Jaccard, intersection over the smaller mask, and max containment."""
    a, b, both = _kernels.overlap_counts(ms, mr)
    if a == 0 or b == 0:
        raise DegenerateMask("mask metrics need two non-empty masks")
    jac = both / (a + b - both)
    inter_small = both / min(a, b)
    contain = max(both / a, both / b)
    return clip(jac), clip(inter_small), clip(contain)


def rasterize_box(box: Box, width: int, height: int) -> np.ndarray:
    """Pixels whose centers fall inside the box."""
    x0, y0, x1, y1 = box
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    cols = (xs >= x0) & (xs < x1)
    rows = (ys >= y0) & (ys < y1)
    return rows[:, None] & cols[None, :]


def mask_to_rle(mask: np.ndarray) -> str:
    """Row-major "value,count" pairs joined by commas."""
    pairs = _kernels.rle_encode(mask.ravel())
    return ",".join(str(int(v)) for v in pairs)


def mask_from_rle(rle: str | Sequence, width: int, height: int) -> np.ndarray:
    if isinstance(rle, str):
        values = [int(v) for v in rle.split(",") if v.strip()]
    else:
        values = []
        for item in rle:
            if isinstance(item, (list, tuple)):
                values.extend(int(v) for v in item)
            elif isinstance(item, str):
                values.extend(int(v) for v in item.split(","))
            else:
                values.append(int(item))
    if len(values) % 2:
        raise ValueError("RLE needs an even number of entries")
    flat = _kernels.rle_decode(np.asarray(values, dtype=np.int64), width * height)
    return flat.reshape(height, width)


@dataclass(frozen=True)
class Detection:
    label_query: str
    score: float
    box: Box
    mask: np.ndarray | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"score": self.score, "box": list(self.box)}
        if self.mask is not None:
            doc["mask"] = mask_to_rle(self.mask)
        return doc


@dataclass(frozen=True, eq=False)
class Footprint:
    mask: np.ndarray = field(repr=False)
    box: tuple[int, int, int, int]
    centroid: tuple[float, float]
    mean_depth: float | None = None

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]


def footprint_from_mask(mask: np.ndarray, depth_map: np.ndarray | None = None) -> Footprint:
    mask = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise DegenerateMask("footprint mask has zero area")
    box = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    centroid = (float(xs.mean()) + 0.5, float(ys.mean()) + 0.5)
    depth = None
    if depth_map is not None:
        depth = float(np.asarray(depth_map, dtype=np.float64)[mask].mean())
    return Footprint(mask=mask, box=box, centroid=centroid, mean_depth=depth)


def footprint_from(
    detection: Detection, width: int, height: int, depth_map: np.ndarray | None = None
) -> Footprint:
    """Use the detection mask when present, otherwise the rasterized box."""
    mask = detection.mask
    if mask is None:
        mask = rasterize_box(detection.box, width, height)
    return footprint_from_mask(mask, depth_map)


@dataclass(frozen=True)
class Region:
    """A scoring region: ``mask is None`` means the full image."""

    key: str
    mask: np.ndarray | None = field(default=None, compare=False, repr=False)


Detector = Callable[[Any, str], list[Detection]]
RegionScorer = Callable[[Any, Region, str], float]
DepthEstimator = Callable[[Any], "np.ndarray | None"]


class EvidenceCache:
    """Per-candidate memo of detections, footprints, depth and region scores.

    Entries are written once; repeated queries return the same objects.
    """

    def __init__(
        self,
        image: Any,
        width: int,
        height: int,
        detector: Detector,
        region_scorer: RegionScorer | None = None,
        depth: DepthEstimator | None = None,
    ):
        self.image = image
        self.width = width
        self.height = height
        self._detector = detector
        self._region_scorer = region_scorer
        self._depth = depth
        self._detections: dict[str, tuple[Detection, ...]] = {}
        self._footprints: dict[tuple[str, int, bool], Footprint] = {}
        self._scores: dict[tuple[str, str], float | None] = {}
        self._depth_map: np.ndarray | None = None
        self._depth_done = False

    def detections(self, query: str) -> tuple[Detection, ...]:
        if query not in self._detections:
            found = self._detector(self.image, query)
            found = sorted(found, key=lambda d: -d.score)
            self._detections[query] = tuple(found)
        return self._detections[query]

    def depth_map(self) -> np.ndarray | None:
        if not self._depth_done:
            self._depth_done = True
            if self._depth is not None:
                try:
                    self._depth_map = self._depth(self.image)
                except BackendFailure:
                    self._depth_map = None
        return self._depth_map

    def footprint(self, query: str, index: int, with_depth: bool = False) -> Footprint:
        key = (query, index, with_depth)
        if key not in self._footprints:
            det = self.detections(query)[index]
            depth = self.depth_map() if with_depth else None
            self._footprints[key] = footprint_from(det, self.width, self.height, depth)
        return self._footprints[key]

    def region_score(self, region: Region, text: str) -> float | None:
        """Region-text compatibility, or None when the scorer is unavailable."""
        key = (region.key, text)
        if key not in self._scores:
            score = None
            if self._region_scorer is not None:
                try:
                    score = clip(float(self._region_scorer(self.image, region, text)))
                except BackendFailure:
                    score = None
            self._scores[key] = score
        return self._scores[key]

    def detection_region(self, query: str, index: int) -> Region:
        fp = self.footprint(query, index)
        return Region(key=f"det:{query}:{index}", mask=fp.mask)

    def full_region(self) -> Region:
        return Region(key="full", mask=None)

    def residual_background(self, queries: Sequence[str], min_score: float) -> Region:
        """Image minus every detection of the given queries above min_score."""
        occupied = np.zeros((self.height, self.width), dtype=bool)
        for q in queries:
            for i, det in enumerate(self.detections(q)):
                if det.score >= min_score:
                    occupied |= self.footprint(q, i).mask
        return Region(key="background", mask=~occupied)
