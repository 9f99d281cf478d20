"""Femoral head coverage from a label mask.

The femoral head extent comes from flooding the head mask from its centroid.
The reference line is horizontal, drawn at the mean height of the ilium's
upper edge to the left of the point where the edge turns downward.  Coverage
is the fraction of the head's vertical extent lying below that line.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hipscreen import imagecore
from hipscreen.errors import EdgeTooShort, MeasurementError, NoPixelsOfClass
from hipscreen.imagecore import CLASS_NAMES, FEMORAL_HEAD, ILIUM, LABRUM

DEFAULT_THRESHOLD = 50.0
DEFAULT_SEGMENT_LENGTH = 8
TURN_ANGLE_DEG = 10.0

DDH, HEALTHY = "DDH", "Healthy"


@dataclass(frozen=True)
class FhcMeasurement:
    ilium_line_y: float
    head_top_y: float
    head_bottom_y: float
    A: float
    B: float
    fhc_percent: float


@dataclass(frozen=True)
class ScreeningResult:
    measurement: Optional[FhcMeasurement]
    threshold_percent: float = DEFAULT_THRESHOLD
    diagnosis: Optional[str] = None
    valid_scan: bool = True
    failure_reason: Optional[str] = None

    def to_record(self, sample_id=None):
        m = self.measurement
        return {
            "id": sample_id,
            "fhc_percent": m.fhc_percent if m else None,
            "A": m.A if m else None,
            "B": m.B if m else None,
            "ilium_line_y": m.ilium_line_y if m else None,
            "head_top_y": m.head_top_y if m else None,
            "head_bottom_y": m.head_bottom_y if m else None,
            "valid": self.valid_scan,
            "diagnosis": self.diagnosis,
            "threshold": self.threshold_percent,
            "failure_reason": self.failure_reason,
        }


@dataclass
class IliumEdge:
    """Upper edge of the ilium: one ``(x, y_top)`` per column, x increasing."""

    columns: list
    segment_length: int = DEFAULT_SEGMENT_LENGTH
    turn_index: Optional[int] = None
    lines: list = field(default_factory=list)


def validate_scan(mask):
    """``(valid, reason)``; reason names the first missing structure."""
    mask = np.asarray(mask)
    for class_id in (ILIUM, FEMORAL_HEAD, LABRUM):
        if not (mask == class_id).any():
            return False, CLASS_NAMES[class_id]
    return True, None


def femoral_extrema(mask):
    """``(top_y, bottom_y, component)`` of the head component holding the centroid.

    The centroid is taken over every femoral-head pixel; stray blobs not
    connected to the flood seed do not contribute to the extrema.
    """
    mask = np.asarray(mask)
    ys, xs = np.nonzero(mask == FEMORAL_HEAD)
    if len(xs) == 0:
        raise NoPixelsOfClass(FEMORAL_HEAD)
    seed = (int(math.floor(xs.mean() + 0.5)), int(math.floor(ys.mean() + 0.5)))
    component = imagecore.flood_from(mask, FEMORAL_HEAD, seed)
    cy = component.xy[:, 1]
    return int(cy.min()), int(cy.max()), component


def ilium_upper_edge(mask, segment_length=DEFAULT_SEGMENT_LENGTH):
    """Topmost ilium pixel of every column that contains ilium."""
    binary = np.asarray(mask) == ILIUM
    present = binary.any(axis=0)
    if not present.any():
        raise NoPixelsOfClass(ILIUM)
    top = binary.argmax(axis=0)
    columns = [(int(x), float(top[x])) for x in np.flatnonzero(present)]
    return IliumEdge(columns=columns, segment_length=segment_length)


def _segments(n, length):
    count = n // length
    bounds = [(i * length, (i + 1) * length) for i in range(count)]
    bounds[-1] = (bounds[-1][0], n)  # trailing partial segment joins its predecessor
    return bounds


def turn_point(edge, min_angle_deg=TURN_ANGLE_DEG):
    """Index into ``edge.columns`` where the edge turns, or None.

    The edge is cut into consecutive segments, each fitted by least squares;
    the turn is at the first column of the right-hand segment of the adjacent
    pair whose slope angles differ most.  Differences under ``min_angle_deg``
    mean the edge never turns.  Sets ``edge.lines`` and ``edge.turn_index``.
    """
    n, length = len(edge.columns), edge.segment_length
    if n < 2 * length:
        raise EdgeTooShort(f"ilium edge has {n} columns, need at least {2 * length}")
    xy = np.asarray(edge.columns, dtype=np.float64)
    bounds = _segments(n, length)
    lines = []
    for lo, hi in bounds:
        slope, intercept = np.polyfit(xy[lo:hi, 0], xy[lo:hi, 1], 1)
        lines.append((float(slope), float(intercept)))
    angles = np.abs(np.diff(np.arctan([m for m, _ in lines])))
    k = int(np.argmax(angles))
    edge.lines = lines
    edge.turn_index = bounds[k + 1][0] if math.degrees(angles[k]) >= min_angle_deg else None
    return edge.turn_index


def ilium_line(mask, segment_length=DEFAULT_SEGMENT_LENGTH):
    """Row of the horizontal ilium line: mean edge height left of the turn."""
    edge = ilium_upper_edge(mask, segment_length)
    turn = turn_point(edge)
    ys = [y for _, y in edge.columns[:turn]]
    return float(np.mean(ys))


def compute_fhc(mask, segment_length=DEFAULT_SEGMENT_LENGTH):
    top, bottom, _ = femoral_extrema(mask)
    line_y = ilium_line(mask, segment_length)
    return fhc_from_extents(line_y, top, bottom)


def fhc_from_extents(ilium_line_y, head_top_y, head_bottom_y):
    b = float(head_bottom_y - head_top_y)
    if b <= 0:
        raise MeasurementError("femoral head has zero vertical extent")
    a = min(max(head_bottom_y - ilium_line_y, 0.0), b)
    return FhcMeasurement(float(ilium_line_y), float(head_top_y), float(head_bottom_y),
                          float(a), b, 100.0 * a / b)


def diagnose(fhc_percent, threshold=DEFAULT_THRESHOLD):
    return DDH if fhc_percent <= threshold else HEALTHY


def screen(mask, threshold=DEFAULT_THRESHOLD, segment_length=DEFAULT_SEGMENT_LENGTH):
    """Screening decision for one mask; never raises for bad scans."""
    valid, reason = validate_scan(mask)
    if not valid:
        return ScreeningResult(None, threshold, None, False, reason)
    try:
        m = compute_fhc(mask, segment_length)
    except EdgeTooShort:
        return ScreeningResult(None, threshold, None, False, "ilium_edge_too_short")
    except MeasurementError:
        return ScreeningResult(None, threshold, None, False, "degenerate_femoral_head")
    return ScreeningResult(m, threshold, diagnose(m.fhc_percent, threshold), True, None)
