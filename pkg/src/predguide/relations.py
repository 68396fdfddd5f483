"""Closed-form spatial relation scores over two footprints.

Image coordinates: x grows rightwards, y grows downwards, so "above" means a
smaller y. Every score is clipped to [0, 1]; component terms are kept for logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import _kernels
from .evidence import Footprint, clip, interval_overlap, mask_metrics
from .states import state_from_score

DEPTH_SCALE = 28.0
ON_TOLERANCE = 0.02
DIRECTIONAL = ("left", "right", "above", "below")
DEPTH_RELATIONS = ("in_front_of", "behind")

_PENALTY_WEIGHTS = {"axis": 0.05, "inter": 0.45, "contain": 0.30, "support": 0.35}


@dataclass(frozen=True)
class RelationScore:
    value: float
    relation_name: str
    terms: dict[str, float] = field(default_factory=dict)

    @property
    def state(self) -> str:
        return state_from_score(self.value)


def _xspan(fp: Footprint) -> tuple[float, float]:
    return fp.box[0], fp.box[2]


def _yspan(fp: Footprint) -> tuple[float, float]:
    return fp.box[1], fp.box[3]


def support_contact(sub: Footprint, ref: Footprint, height: int) -> float:
    """u_on: how well the subject's bottom edge rests on reference pixels."""
    x_lo = max(sub.box[0], ref.box[0])
    x_hi = min(sub.box[2], ref.box[2])
    total, covered, n = _kernels.support_contact(sub.mask, ref.mask, x_lo, x_hi, ON_TOLERANCE * height)
    if n == 0:
        return 0.0
    return clip(0.70 * (total / n) + 0.30 * (covered / n))


def score_directional(sub: Footprint, ref: Footprint, relation: str, width: int, height: int) -> RelationScore:
    (csx, csy), (crx, cry) = sub.centroid, ref.centroid
    sx0, sy0, sx1, sy1 = sub.box
    rx0, ry0, rx1, ry1 = ref.box
    if relation == "left":
        dc, de = crx - csx, rx0 - sx1
    elif relation == "right":
        dc, de = csx - crx, sx0 - rx1
    elif relation == "above":
        dc, de = cry - csy, ry0 - sy1
    elif relation == "below":
        dc, de = csy - cry, sy0 - ry1
    else:
        raise ValueError(f"not a directional relation: {relation!r}")

    horizontal = relation in ("left", "right")
    if horizontal:
        la, lb = width, height
        omega_a = interval_overlap(_xspan(sub), _xspan(ref))
        omega_b = interval_overlap(_yspan(sub), _yspan(ref))
        delta_b = csy - cry
    else:
        la, lb = height, width
        omega_a = interval_overlap(_yspan(sub), _yspan(ref))
        omega_b = interval_overlap(_xspan(sub), _xspan(ref))
        delta_b = csx - crx

    u_c = clip(0.5 + dc / (0.50 * la))
    u_e = clip((de + 0.02 * la) / (0.14 * la))
    u_b = clip(0.75 * omega_b + 0.25 * clip(1.0 - abs(delta_b) / (0.55 * lb)))
    base = clip(0.45 * u_c + 0.35 * u_e + 0.20 * u_b)

    _, inter, contain = mask_metrics(sub.mask, ref.mask)
    w = _PENALTY_WEIGHTS
    num = w["axis"] * omega_a + w["inter"] * inter + w["contain"] * contain
    den = w["axis"] + w["inter"] + w["contain"]
    u_on = 0.0
    if horizontal:
        # stacking in either direction contradicts a side-by-side reading
        u_on = max(support_contact(sub, ref, height), support_contact(ref, sub, height))
        num += w["support"] * u_on
        den += w["support"]
    penalty = num / den
    q = clip(base * (1.0 - penalty))
    terms = dict(u_c=u_c, u_e=u_e, u_b=u_b, base=base, omega_a=omega_a, omega_b=omega_b,
                 inter=inter, contain=contain, u_on=u_on, penalty=penalty)
    return RelationScore(q, relation, terms)


def box_gap(sub: Footprint, ref: Footprint) -> float:
    """Euclidean distance between boxes; overlapping axes contribute zero."""
    dx = max(0.0, ref.box[0] - sub.box[2], sub.box[0] - ref.box[2])
    dy = max(0.0, ref.box[1] - sub.box[3], sub.box[1] - ref.box[3])
    return math.hypot(dx, dy)


def score_near(sub: Footprint, ref: Footprint, width: int, height: int) -> RelationScore:
    diag = math.hypot(width, height)
    dist = math.hypot(sub.centroid[0] - ref.centroid[0], sub.centroid[1] - ref.centroid[1])
    edge = box_gap(sub, ref)
    t_center = clip(1.0 - dist / (0.18 * diag))
    t_edge = clip(1.0 - edge / (0.18 * diag))
    q = clip(0.45 * t_center + 0.55 * t_edge)
    return RelationScore(q, "near", dict(center=t_center, edge=t_edge, centroid_dist=dist, edge_gap=edge))


def _box_area(box) -> float:
    return max(0.0, box[2] - box[0]) * max(0.0, box[3] - box[1])


def score_inside(sub: Footprint, ref: Footprint, relation: str = "inside") -> RelationScore:
    sx0, sy0, sx1, sy1 = sub.box
    rx0, ry0, rx1, ry1 = ref.box
    inter = _box_area((max(sx0, rx0), max(sy0, ry0), min(sx1, rx1), min(sy1, ry1)))
    frac = inter / _box_area(sub.box)
    cx, cy = sub.centroid
    centered = 1.0 if (rx0 <= cx <= rx1 and ry0 <= cy <= ry1) else 0.0
    q = clip(0.80 * frac + 0.20 * centered)
    return RelationScore(q, relation, dict(box_fraction=frac, centroid_inside=centered))


def score_overlap(sub: Footprint, ref: Footprint) -> RelationScore:
    jac, inter, _ = mask_metrics(sub.mask, ref.mask)
    q = clip(0.65 * jac + 0.35 * inter)
    return RelationScore(q, "overlapping", dict(jaccard=jac, inter=inter))


def score_on(sub: Footprint, ref: Footprint, width: int, height: int) -> RelationScore:
    u_on = support_contact(sub, ref, height)
    omega_x = interval_overlap(_xspan(sub), _xspan(ref))
    q_above = score_directional(sub, ref, "above", width, height).value
    base = clip(0.55 * u_on + 0.25 * omega_x + 0.20 * q_above)
    area, _, both = _kernels.overlap_counts(sub.mask, ref.mask)
    inside = both / area if area else 0.0
    q = clip(base - 0.25 * inside)
    return RelationScore(q, "on", dict(u_on=u_on, omega_x=omega_x, q_above=q_above, base=base, inside=inside))


def score_depth(
    sub: Footprint, ref: Footprint, relation: str, width: int, height: int, larger_is_nearer: bool = True
) -> RelationScore:
    """in_front_of / behind from mean footprint depth.

    ``larger_is_nearer`` is the backend's depth orientation flag (True for
    inverse-depth style maps).
    """
    if sub.mean_depth is None or ref.mean_depth is None:
        return RelationScore(0.0, relation, dict(missing_depth=1.0))
    nearer = sub.mean_depth - ref.mean_depth
    if not larger_is_nearer:
        nearer = -nearer
    if relation == "in_front_of":
        delta = nearer
    elif relation == "behind":
        delta = -nearer
    else:
        raise ValueError(f"not a depth relation: {relation!r}")
    align = max(interval_overlap(_xspan(sub), _xspan(ref)), interval_overlap(_yspan(sub), _yspan(ref)))
    q_near = score_near(sub, ref, width, height).value
    u_s = clip(0.60 * align + 0.40 * q_near)
    q = clip(clip(delta / DEPTH_SCALE) * (0.80 + 0.20 * u_s))
    return RelationScore(q, relation, dict(delta_depth=delta, align=align, q_near=q_near, u_s=u_s))


def score_relation(
    relation: str, sub: Footprint, ref: Footprint, width: int, height: int, larger_is_nearer: bool = True
) -> RelationScore:
    if relation in DIRECTIONAL:
        return score_directional(sub, ref, relation, width, height)
    if relation == "near":
        return score_near(sub, ref, width, height)
    if relation in ("in", "inside"):
        return score_inside(sub, ref, relation)
    if relation == "overlapping":
        return score_overlap(sub, ref)
    if relation == "on":
        return score_on(sub, ref, width, height)
    if relation in DEPTH_RELATIONS:
        return score_depth(sub, ref, relation, width, height, larger_is_nearer)
    raise ValueError(f"unsupported relation {relation!r}")
