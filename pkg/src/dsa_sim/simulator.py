"""Streaming replay of a trace under a policy, with cost-model time accounting."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

from .config_lattice import ApproxConfig
from .costmodel import CostModel, fps_lookup
from .metrics import DEFAULT_IOU_THRESHOLD, Category, frame_ap, mean_defined
from .trace_store import DetectionTrace

RESULT_FORMAT = "dsa-sim/stream-result"


class SimulationError(RuntimeError):
    """A policy produced an off-grid config; this is a bug, not bad input."""


@dataclass
class StreamResult:
    policy: str
    category: Category | None
    detector: str
    cost_model: str
    trace_fingerprint: str
    chosen: list[tuple[str, int, ApproxConfig]]
    frame_seconds: float
    overhead_seconds: float
    baseline_seconds: float
    decisions: int
    category_map: dict
    baseline_map: dict
    speedup: float
    degradation: float

    @property
    def total_seconds(self) -> float:
        return self.frame_seconds + self.overhead_seconds

    @property
    def overhead_fraction(self) -> float:
        """Decision overhead as a share of the total simulated time."""
        return self.overhead_seconds / self.total_seconds if self.total_seconds else 0.0

    def to_json(self) -> dict:
        return {
            "format": RESULT_FORMAT,
            "version": 1,
            "policy": self.policy,
            "category": self.category,
            "detector": self.detector,
            "cost_model": self.cost_model,
            "trace_fingerprint": self.trace_fingerprint,
            "frame_seconds": self.frame_seconds,
            "overhead_seconds": self.overhead_seconds,
            "baseline_seconds": self.baseline_seconds,
            "decisions": self.decisions,
            "speedup": self.speedup,
            "degradation": self.degradation,
            "category_map": [[k, v] for k, v in self.category_map.items()],
            "baseline_map": [[k, v] for k, v in self.baseline_map.items()],
            "chosen": [[v, t, c.to_json()] for v, t, c in self.chosen],
        }

    @classmethod
    def from_json(cls, data: dict) -> "StreamResult":
        if data.get("format") != RESULT_FORMAT:
            raise ValueError("not a stream result")
        return cls(
            policy=data["policy"],
            category=data["category"],
            detector=data["detector"],
            cost_model=data["cost_model"],
            trace_fingerprint=data["trace_fingerprint"],
            chosen=[(v, t, ApproxConfig.from_json(c)) for v, t, c in data["chosen"]],
            frame_seconds=data["frame_seconds"],
            overhead_seconds=data["overhead_seconds"],
            baseline_seconds=data["baseline_seconds"],
            decisions=data["decisions"],
            category_map={k: v for k, v in data["category_map"]},
            baseline_map={k: v for k, v in data["baseline_map"]},
            speedup=data["speedup"],
            degradation=data["degradation"],
        )


def simulate_stream(
    trace: DetectionTrace,
    policy,
    cost: CostModel,
    category: Category | None = None,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    fingerprint: str | None = None,
) -> StreamResult:
    """Replay ``trace`` frame by frame under ``policy``.

    At each frame the policy picks a config; the outputs stored for that
    config are what the policy "observes" and what accuracy is scored on.
    Frame time is ``1 / fps(config)``. Dynamic policies additionally pay the
    cost model's overhead once per regressor decision.

    With ``category`` set, only the videos in which it appears are replayed
    and only it is scored.
    """
    trace.require_dense()
    grid = trace.grid
    if cost.grid != grid:
        raise ValueError("trace grid and cost-model grid differ")
    if category is None:
        video_ids = list(trace.videos)
        cats = trace.categories()
    else:
        video_ids = trace.videos_with_category(category)
        if not video_ids:
            raise ValueError(f"category {category!r} does not occur in the trace")
        cats = [category]

    chosen = []
    frame_times = []
    base_times = []
    decisions = 0
    base_fps = fps_lookup(cost, grid.baseline)
    aps = {c: [] for c in cats}
    base_aps = {c: [] for c in cats}
    for vid in video_ids:
        ctrl = policy.start(vid, category, grid)
        for frame in trace.videos[vid]:
            config = ctrl.decide()
            if config not in grid:
                raise SimulationError(
                    f"policy {policy.name!r} chose off-grid config {config!r} "
                    f"at video {vid!r} frame {frame.frame}"
                )
            observed = frame.detections(config)
            ctrl.observe(observed, frame.width, frame.height)
            chosen.append((vid, frame.frame, config))
            frame_times.append(1.0 / fps_lookup(cost, config))
            base_times.append(1.0 / base_fps)
            for c in cats:
                aps[c].append(frame_ap(frame, config, c, iou_threshold))
                base_aps[c].append(frame_ap(frame, grid.baseline, c, iou_threshold))
        decisions += ctrl.decisions

    frame_seconds = math.fsum(frame_times)
    baseline_seconds = math.fsum(base_times)
    overhead_seconds = decisions * cost.overhead_seconds if policy.dynamic else 0.0
    if overhead_seconds:
        total = frame_seconds + overhead_seconds
    else:
        total = frame_seconds
    cat_map = {c: mean_defined(aps[c]) for c in cats}
    base_map = {c: mean_defined(base_aps[c]) for c in cats}
    degradations = [
        (base_map[c] - cat_map[c]) / base_map[c]
        for c in cats
        if base_map[c] is not None and base_map[c] > 0
    ]
    return StreamResult(
        policy=policy.name,
        category=category,
        detector=trace.detector,
        cost_model=cost.detector,
        trace_fingerprint=fingerprint or trace.fingerprint(),
        chosen=chosen,
        frame_seconds=frame_seconds,
        overhead_seconds=overhead_seconds,
        baseline_seconds=baseline_seconds,
        decisions=decisions,
        category_map=cat_map,
        baseline_map=base_map,
        speedup=baseline_seconds / total,
        degradation=math.fsum(degradations) / len(degradations) if degradations else 0.0,
    )


def simulate_categories(trace: DetectionTrace, policy, cost: CostModel,
                        iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> list[StreamResult]:
    """One per-category replay for every category of the trace."""
    fp = trace.fingerprint()
    return [
        simulate_stream(trace, policy, cost, c, iou_threshold, fingerprint=fp)
        for c in trace.categories()
    ]


@dataclass
class ReportRow:
    category: Category | None
    policy: str
    speedup: float
    map: float | None
    baseline_map: float | None
    degradation: float
    decisions: int


@dataclass
class ComparisonReport:
    detector: str
    cost_model: str
    rows: list[ReportRow] = field(default_factory=list)

    def get(self, category, policy) -> ReportRow:
        for r in self.rows:
            if r.category == category and r.policy == policy:
                return r
        raise KeyError((category, policy))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "policy", "speedup", "map", "baseline_map", "degradation",
                    "decisions"])
        for r in self.rows:
            w.writerow([
                "" if r.category is None else r.category, r.policy, f"{r.speedup:.6f}",
                "" if r.map is None else f"{r.map:.6f}",
                "" if r.baseline_map is None else f"{r.baseline_map:.6f}",
                f"{r.degradation:.6f}", r.decisions,
            ])
        return buf.getvalue()

    def to_table(self) -> str:
        head = f"{'category':<14}{'policy':<20}{'speedup':>9}{'mAP':>9}{'base':>9}{'degr.':>9}"
        lines = [f"policy comparison: {self.detector} / cost model {self.cost_model}", head,
                 "-" * len(head)]
        for r in self.rows:
            m = "-" if r.map is None else f"{r.map:.4f}"
            b = "-" if r.baseline_map is None else f"{r.baseline_map:.4f}"
            lines.append(
                f"{str(r.category if r.category is not None else 'all'):<14}{r.policy:<20}"
                f"{r.speedup:>9.3f}{m:>9}{b:>9}{r.degradation:>9.4f}"
            )
        return "\n".join(lines) + "\n"


def compare_report(results: Sequence[StreamResult]) -> ComparisonReport:
    """Tabulate results that were all produced on one trace and cost model.

    Raises:
        ValueError: if the results come from different traces or cost models.
    """
    if not results:
        raise ValueError("no results to compare")
    first = results[0]
    for r in results[1:]:
        if r.trace_fingerprint != first.trace_fingerprint:
            raise ValueError(
                f"result {r.policy!r} was computed on a different trace than {first.policy!r}"
            )
        if r.cost_model != first.cost_model:
            raise ValueError(f"result {r.policy!r} used cost model {r.cost_model!r}, "
                             f"expected {first.cost_model!r}")
    rows = []
    for r in results:
        if r.category is not None:
            m = r.category_map.get(r.category)
            b = r.baseline_map.get(r.category)
        else:
            m = mean_defined(r.category_map.values())
            b = mean_defined(r.baseline_map.values())
        rows.append(ReportRow(r.category, r.policy, r.speedup, m, b, r.degradation, r.decisions))
    rows.sort(key=lambda row: ("" if row.category is None else str(row.category), row.policy))
    return ComparisonReport(first.detector, first.cost_model, rows)


def dump_results(results: Sequence[StreamResult]) -> str:
    return json.dumps([r.to_json() for r in results], indent=1) + "\n"


def load_results(text: str) -> list[StreamResult]:
    data = json.loads(text)
    if isinstance(data, dict):
        data = [data]
    return [StreamResult.from_json(d) for d in data]
