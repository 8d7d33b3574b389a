"""Per-configuration throughput tables and time accounting.

The two embedded tables are end-to-end frames-per-second measurements of
Faster R-CNN (ZF) and R-FCN (ResNet-50) on a Tegra X1, one cell per
(image height, proposal count). Columns are proposal counts 300, 200,
100, 50, 10.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Mapping

from .config_lattice import ApproxConfig, ConfigGrid, enumerate_grid

DEFAULT_OVERHEAD_MS = 3.2

_TABLE_PROPOSALS = (300, 200, 100, 50, 10)

FASTER_RCNN_FPS = {
    80: (8.98, 9.22, 9.26, 9.76, 17.88),
    120: (5.89, 5.73, 5.13, 9.37, 16.18),
    160: (4.12, 3.42, 4.76, 8.28, 13.70),
    200: (3.25, 3.31, 4.45, 7.27, 10.65),
    240: (3.03, 3.08, 4.14, 6.53, 9.14),
    280: (2.85, 2.92, 3.80, 5.72, 7.53),
    320: (2.65, 2.71, 3.47, 4.81, 6.37),
    360: (2.56, 2.57, 3.27, 4.51, 5.74),
    400: (2.36, 2.39, 2.94, 3.99, 5.01),
    440: (2.21, 2.25, 2.74, 3.66, 4.42),
    480: (2.08, 2.11, 2.54, 3.28, 3.91),
}

RFCN_FPS = {
    80: (12.56, 13.12, 13.25, 13.02, 13.04),
    120: (11.39, 11.12, 11.37, 10.97, 11.51),
    160: (7.61, 7.73, 7.71, 7.85, 7.64),
    200: (5.36, 5.35, 5.50, 5.49, 5.45),
    240: (4.28, 4.35, 4.39, 4.37, 4.41),
    280: (3.26, 3.30, 3.32, 3.34, 3.34),
    320: (2.64, 2.66, 2.66, 2.67, 2.69),
    360: (2.18, 2.19, 2.21, 2.22, 2.21),
    400: (1.73, 1.74, 1.75, 1.75, 1.76),
    440: (1.45, 1.47, 1.48, 1.48, 1.48),
    480: (1.27, 1.29, 1.29, 1.30, 1.30),
}

BUILTIN_TABLES = {"faster-rcnn": FASTER_RCNN_FPS, "rfcn": RFCN_FPS}


class CostModelError(ValueError):
    pass


def _expand(table: Mapping[int, tuple]) -> dict[ApproxConfig, float]:
    return {
        ApproxConfig(h, p): float(fps)
        for h, row in table.items()
        for p, fps in zip(_TABLE_PROPOSALS, row)
    }


@dataclass(frozen=True)
class CostModel:
    """Throughput lookup for one detector.

    Attributes:
        detector: detector name.
        fps: frames per second for every grid config.
        overhead_ms: controller cost charged per dynamic decision.
    """

    detector: str
    fps: Mapping[ApproxConfig, float]
    overhead_ms: float = DEFAULT_OVERHEAD_MS
    grid: ConfigGrid = enumerate_grid()

    def __post_init__(self):
        missing = [c for c in self.grid if c not in self.fps]
        if missing:
            raise CostModelError(
                f"cost model {self.detector!r} does not cover {len(missing)} grid configs "
                f"(first {missing[0]})"
            )
        bad = [c for c in self.grid if not (math.isfinite(self.fps[c]) and self.fps[c] > 0)]
        if bad:
            raise CostModelError(f"cost model {self.detector!r}: non-positive fps at {bad[0]}")
        if not (math.isfinite(self.overhead_ms) and self.overhead_ms >= 0):
            raise CostModelError(f"overhead must be a non-negative number, got {self.overhead_ms}")

    def frame_seconds(self, config: ApproxConfig) -> float:
        return 1.0 / fps_lookup(self, config)

    @property
    def overhead_seconds(self) -> float:
        return self.overhead_ms / 1000.0

    def overhead_ratio(self, config: ApproxConfig | None = None) -> float:
        """Decision overhead as a fraction of one frame's time at ``config``."""
        config = config or self.grid.baseline
        return self.overhead_seconds / self.frame_seconds(config)

    def with_overhead(self, overhead_ms: float) -> "CostModel":
        return CostModel(self.detector, self.fps, overhead_ms, self.grid)


def fps_lookup(cost: CostModel, config: ApproxConfig) -> float:
    """Exact table throughput of ``config``.

    Raises:
        CostModelError: if ``config`` is not a grid member.
    """
    if config not in cost.grid:
        raise CostModelError(f"config {config} is not on the grid of cost model {cost.detector!r}")
    return cost.fps[config]


def builtin_cost_model(name: str, overhead_ms: float = DEFAULT_OVERHEAD_MS) -> CostModel:
    try:
        table = BUILTIN_TABLES[name]
    except KeyError:
        raise CostModelError(
            f"unknown cost model {name!r}; choose from {sorted(BUILTIN_TABLES)} or a CSV path"
        ) from None
    return CostModel(name, _expand(table), overhead_ms)


def load_cost_csv(
    source: IO[str],
    detector: str = "custom",
    grid: ConfigGrid | None = None,
    overhead_ms: float = DEFAULT_OVERHEAD_MS,
) -> CostModel:
    """Read a ``height,proposals,fps`` CSV (header row required)."""
    grid = grid or enumerate_grid()
    reader = csv.DictReader(source)
    if reader.fieldnames is None or not {"height", "proposals", "fps"} <= set(reader.fieldnames):
        raise CostModelError("cost CSV needs a header with columns height, proposals, fps")
    fps = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            config = ApproxConfig(int(row["height"]), int(row["proposals"]))
            value = float(row["fps"])
        except (TypeError, ValueError):
            raise CostModelError(f"cost CSV line {lineno}: unparsable row {row}") from None
        if config not in grid:
            raise CostModelError(f"cost CSV line {lineno}: config {config} is off the grid")
        if config in fps:
            raise CostModelError(f"cost CSV line {lineno}: duplicate entry for {config}")
        fps[config] = value
    return CostModel(detector, fps, overhead_ms, grid)


def resolve_cost_model(spec: str, overhead_ms: float = DEFAULT_OVERHEAD_MS,
                       grid: ConfigGrid | None = None) -> CostModel:
    """Built-in name (``faster-rcnn`` / ``rfcn``) or path to a CSV table."""
    if spec in BUILTIN_TABLES:
        model = builtin_cost_model(spec, overhead_ms)
        if grid is not None and grid != model.grid:
            raise CostModelError("built-in cost tables only cover the default grid")
        return model
    path = Path(spec)
    with path.open(encoding="utf-8") as fh:
        return load_cost_csv(fh, path.stem, grid, overhead_ms)


def cost_table_csv(cost: CostModel) -> str:
    """Grid-shaped FPS table: rows heights descending, columns proposals descending."""
    lines = ["height," + ",".join(str(p) for p in cost.grid.proposals)]
    for h in cost.grid.heights:
        cells = [f"{cost.fps[ApproxConfig(h, p)]:.2f}" for p in cost.grid.proposals]
        lines.append(f"{h}," + ",".join(cells))
    return "\n".join(lines) + "\n"
