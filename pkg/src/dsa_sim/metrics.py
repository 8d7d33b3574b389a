"""Box geometry, detection/truth matching and average precision."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Hashable, Sequence

import numpy as np

from . import kernels
from .config_lattice import ApproxConfig, ConfigGrid

if TYPE_CHECKING:
    from .trace_store import DetectionTrace, FrameRecord

Category = Hashable

DEFAULT_IOU_THRESHOLD = 0.5


class DegenerateMetricError(ValueError):
    """A metric is undefined for the requested scope (no truth, zero baseline)."""


@dataclass(frozen=True, slots=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box coordinates must be finite: {vals}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"box has negative extent: {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise ValueError(f"box must have 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True, slots=True)
class Detection:
    box: BBox
    score: float
    category: Category

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True, slots=True)
class GroundTruth:
    box: BBox
    category: Category


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def _boxes(items) -> np.ndarray:
    if not items:
        return np.empty((0, 4), dtype=np.float64)
    return np.array([it.box.as_list() for it in items], dtype=np.float64)


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> list[int | None]:
    """Greedily match detections to ground truth in descending score order.

    Each detection takes the still-unmatched ground truth of highest IoU,
    provided that IoU reaches ``iou_threshold``. Equal scores are processed in
    input order.

    Returns:
        For every detection (input order) the matched ground-truth index, or
        ``None`` when unmatched.
    """
    scores = [d.score for d in dets]
    out = kernels.greedy_match(_boxes(dets), scores, _boxes(gts), float(iou_threshold))
    return [int(g) if g >= 0 else None for g in out]


def average_precision(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> float | None:
    """Per-image AP with all-point interpolation.

    Callers pass detections and truth of a single category. Returns ``None``
    when there is no ground truth, so the image is left out of averages.
    """
    if not gts:
        return None
    scores = [d.score for d in dets]
    return float(
        kernels.average_precision(_boxes(dets), scores, _boxes(gts), float(iou_threshold))
    )


def frame_ap(
    frame: "FrameRecord",
    config: ApproxConfig,
    category: Category,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> float | None:
    """AP of ``category`` on one frame using the outputs stored under ``config``."""
    gt_boxes = frame.gt_array(category)
    if gt_boxes.shape[0] == 0:
        return None
    det_boxes, det_scores = frame.det_arrays(config, category)
    return float(kernels.average_precision(det_boxes, det_scores, gt_boxes, iou_threshold))


def mean_defined(values) -> float | None:
    """Mean of the non-``None`` entries, or ``None`` if there are none."""
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return math.fsum(defined) / len(defined)


def category_map(
    trace: "DetectionTrace",
    config: ApproxConfig,
    category: Category,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    frames: Sequence["FrameRecord"] | None = None,
) -> float:
    """Mean of the defined per-image APs of ``category`` under ``config``.

    Raises:
        DegenerateMetricError: if no frame contains the category.
    """
    if frames is None:
        frames = list(trace.frames())
    value = mean_defined(frame_ap(f, config, category, iou_threshold) for f in frames)
    if value is None:
        raise DegenerateMetricError(f"no frame contains category {category!r}")
    return value


@dataclass
class ApGridReport:
    """Normalized AP of one category over the grid (baseline cell = 1.0)."""

    category: Category
    detector: str
    grid: ConfigGrid
    baseline_map: float
    values: dict[ApproxConfig, float | None] = field(default_factory=dict)
    degenerate: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["height"] + [str(p) for p in self.grid.proposals])
        for h in self.grid.heights:
            row = [str(h)]
            for p in self.grid.proposals:
                v = self.values.get(ApproxConfig(h, p))
                row.append("" if v is None else f"{v:.4f}")
            writer.writerow(row)
        return buf.getvalue()


def normalized_ap_grid(
    trace: "DetectionTrace",
    category: Category,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> ApGridReport:
    """Each config's category mAP divided by the baseline's.

    A zero baseline mAP yields a report flagged ``degenerate`` with every
    cell undefined.
    """
    trace.require_dense()
    frames = trace.frames_with_category(category)
    grid = trace.grid
    base = category_map(trace, grid.baseline, category, iou_threshold, frames)
    report = ApGridReport(category, trace.detector, grid, base)
    if base <= 0.0:
        report.degenerate = True
        report.values = {c: None for c in grid}
        return report
    for c in grid:
        if c == grid.baseline:
            report.values[c] = 1.0
        else:
            report.values[c] = category_map(trace, c, category, iou_threshold, frames) / base
    return report
