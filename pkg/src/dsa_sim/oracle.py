"""Oracle limit study: safe sets, optimal configs, coverage curves, speedups."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .config_lattice import DEFAULT_GRID, ApproxConfig, ConfigGrid
from .costmodel import CostModel, fps_lookup
from .metrics import DEFAULT_IOU_THRESHOLD, Category, frame_ap, mean_defined
from .trace_store import DetectionTrace, FrameRecord, SparseTraceError


@dataclass(frozen=True)
class SafeSet:
    """Configs whose per-image AP is at least the baseline's.

    ``metric_neutral`` frames have no ground truth of the category; every
    config is safe for them and ``baseline_ap`` is ``None``.
    """

    frame: tuple[str, int]
    members: frozenset[ApproxConfig]
    baseline_ap: float | None
    metric_neutral: bool = False

    def __contains__(self, config) -> bool:
        return config in self.members

    def __len__(self) -> int:
        return len(self.members)


def _require_dense_frame(frame: FrameRecord, grid: ConfigGrid) -> None:
    if len(frame.outputs) != len(grid) or any(c not in frame.outputs for c in grid):
        raise SparseTraceError(
            f"video {frame.video!r} frame {frame.frame}: oracle needs outputs for all "
            f"{len(grid)} configs, found {len(frame.outputs)}"
        )


def frame_ap_vector(
    frame: FrameRecord,
    category: Category,
    grid: ConfigGrid = DEFAULT_GRID,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> list[float | None]:
    """Per-image AP of ``category`` under every config, in grid order."""
    _require_dense_frame(frame, grid)
    return [frame_ap(frame, c, category, iou_threshold) for c in grid]


def safe_set(
    frame: FrameRecord,
    category: Category,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    grid: ConfigGrid = DEFAULT_GRID,
) -> SafeSet:
    aps = frame_ap_vector(frame, category, grid, iou_threshold)
    return _safe_from_aps(frame, aps, grid)


def _safe_from_aps(frame: FrameRecord, aps, grid: ConfigGrid) -> SafeSet:
    base = aps[grid.index(grid.baseline)]
    if base is None:
        return SafeSet(frame.key, frozenset(grid), None, True)
    members = frozenset(c for c, ap in zip(grid, aps) if ap >= base)
    return SafeSet(frame.key, members, base)


def fastest(configs, cost: CostModel) -> ApproxConfig:
    """Highest-FPS config; ties go to the larger height, then more proposals."""
    return max(configs, key=lambda c: (fps_lookup(cost, c), c.image_height, c.proposal_count))


def optimal_config(
    frame: FrameRecord,
    category: Category,
    cost: CostModel,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> ApproxConfig:
    """The fastest member of the frame's safe set."""
    return fastest(safe_set(frame, category, iou_threshold, cost.grid).members, cost)


@dataclass
class CoverageCurve:
    category: Category
    ranking: list[tuple[ApproxConfig, int]]
    points: list[tuple[int, float]]
    num_frames: int

    def k_for(self, fraction: float) -> int:
        """Smallest number of configs that covers ``fraction`` of the frames."""
        for k, cov in self.points:
            if cov >= fraction:
                return k
        raise ValueError(f"coverage never reaches {fraction}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "coverage", "height", "proposals", "frames"])
        for (k, cov), (cfg, count) in zip(self.points, self.ranking):
            w.writerow([k, f"{cov:.6f}", cfg.image_height, cfg.proposal_count, count])
        return buf.getvalue()


def coverage_curve(
    frames: Sequence[FrameRecord],
    category: Category,
    cost: CostModel,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> CoverageCurve:
    """Fraction of frames optimally served by the ``k`` most common optimal configs.

    Frames without ground truth of ``category`` carry no accuracy signal and
    are left out.

    Raises:
        ValueError: if no frame contains the category.
    """
    grid = cost.grid
    optima = []
    for f in frames:
        ss = safe_set(f, category, iou_threshold, grid)
        if not ss.metric_neutral:
            optima.append(fastest(ss.members, cost))
    if not optima:
        raise ValueError(f"coverage curve needs frames containing category {category!r}")
    counts = Counter(optima)
    ranking = sorted(counts.items(), key=lambda kv: (-kv[1], grid.index(kv[0])))
    n = len(optima)
    points = []
    covered = 0
    for k, (_, count) in enumerate(ranking, start=1):
        covered += count
        points.append((k, covered / n))
    # guard against float drift at the end of the curve
    points[-1] = (points[-1][0], 1.0)
    return CoverageCurve(category, ranking, points, n)


@dataclass
class CategoryOracle:
    category: Category
    num_frames: int
    baseline_map: float
    static_config: ApproxConfig
    static_speedup: float
    static_map: float
    dynamic_speedup: float
    dynamic_map: float
    degenerate: bool = False
    frame_optima: dict[tuple[str, int], ApproxConfig] = field(default_factory=dict)

    def degradation(self, value: float) -> float:
        if self.baseline_map <= 0:
            return 0.0
        return (self.baseline_map - value) / self.baseline_map


@dataclass
class OracleReport:
    detector: str
    cost_model: str
    rows: list[CategoryOracle]

    def row(self, category: Category) -> CategoryOracle:
        for r in self.rows:
            if r.category == category:
                return r
        raise KeyError(category)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([
            "category", "frames", "baseline_map", "static_height", "static_proposals",
            "static_speedup", "static_map", "dynamic_speedup", "dynamic_map", "degenerate",
        ])
        for r in self.rows:
            w.writerow([
                r.category, r.num_frames, f"{r.baseline_map:.6f}",
                r.static_config.image_height, r.static_config.proposal_count,
                f"{r.static_speedup:.6f}", f"{r.static_map:.6f}",
                f"{r.dynamic_speedup:.6f}", f"{r.dynamic_map:.6f}", int(r.degenerate),
            ])
        return buf.getvalue()

    def to_table(self) -> str:
        head = f"{'category':<14}{'frames':>7}{'base mAP':>10}{'static cfg':>13}" \
               f"{'static x':>10}{'dynamic x':>11}"
        lines = [f"oracle limit study: {self.detector} / cost model {self.cost_model}", head,
                 "-" * len(head)]
        for r in self.rows:
            flag = "  (degenerate baseline)" if r.degenerate else ""
            lines.append(
                f"{str(r.category):<14}{r.num_frames:>7}{r.baseline_map:>10.4f}"
                f"{str(r.static_config):>13}{r.static_speedup:>10.3f}{r.dynamic_speedup:>11.3f}{flag}"
            )
        return "\n".join(lines) + "\n"


def speedup(frames_configs: Sequence[ApproxConfig], cost: CostModel) -> float:
    """Baseline time over chosen time, both summed over the same frames."""
    base = math.fsum(1.0 / fps_lookup(cost, cost.grid.baseline) for _ in frames_configs)
    chosen = math.fsum(1.0 / fps_lookup(cost, c) for c in frames_configs)
    return base / chosen


def static_oracle_config(aps_by_frame: Sequence[Sequence[float | None]], cost: CostModel,
                         category_scopes=None) -> ApproxConfig:
    """Fastest config whose mean AP over the frames is at least the baseline's.

    ``aps_by_frame`` holds one grid-ordered AP vector per frame. With
    ``category_scopes`` (a list of such collections) the config must be safe
    for every scope at once.
    """
    grid = cost.grid
    scopes = category_scopes if category_scopes is not None else [aps_by_frame]
    b = grid.index(grid.baseline)
    feasible = []
    for i, c in enumerate(grid):
        ok = True
        for aps in scopes:
            base = mean_defined(v[b] for v in aps)
            val = mean_defined(v[i] for v in aps)
            if base is not None and val < base:
                ok = False
                break
        if ok:
            feasible.append(c)
    return fastest(feasible, cost)


def limit_study(
    trace: DetectionTrace,
    cost: CostModel,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    categories: Sequence[Category] | None = None,
) -> OracleReport:
    """Static and dynamic oracle speedups per category.

    For category ``c`` the scope is every frame of every video in which ``c``
    appears. The dynamic oracle runs each frame at its optimal config; the
    static oracle runs all frames at the single fastest config whose
    category mAP is no lower than the baseline's.
    """
    trace.require_dense()
    grid = cost.grid
    if trace.grid != grid:
        raise ValueError("trace grid and cost-model grid differ")
    rows = []
    for cat in categories if categories is not None else trace.categories():
        frames = trace.frames_with_category(cat)
        aps = [frame_ap_vector(f, cat, grid, iou_threshold) for f in frames]
        b = grid.index(grid.baseline)
        base_map = mean_defined(v[b] for v in aps)
        if base_map is None:
            raise ValueError(f"category {cat!r} has no ground truth in the trace")
        optima = {}
        dyn_aps = []
        for f, v in zip(frames, aps):
            ss = _safe_from_aps(f, v, grid)
            best = fastest(ss.members, cost)
            optima[f.key] = best
            dyn_aps.append(v[grid.index(best)])
        static_cfg = static_oracle_config(aps, cost)
        s_idx = grid.index(static_cfg)
        rows.append(CategoryOracle(
            category=cat,
            num_frames=len(frames),
            baseline_map=base_map,
            static_config=static_cfg,
            static_speedup=speedup([static_cfg] * len(frames), cost),
            static_map=mean_defined(v[s_idx] for v in aps),
            dynamic_speedup=speedup(list(optima.values()), cost),
            dynamic_map=mean_defined(dyn_aps),
            degenerate=base_map <= 0.0,
            frame_optima=optima,
        ))
    return OracleReport(trace.detector, cost.detector, rows)
