"""Approximation configuration lattice: image height x region-proposal count."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

DEFAULT_HEIGHTS: tuple[int, ...] = (480, 440, 400, 360, 320, 280, 240, 200, 160, 120, 80)
DEFAULT_PROPOSALS: tuple[int, ...] = (300, 200, 100, 50, 10)


class ApproxConfig(NamedTuple):
    """One approximation level, ``(image_height, proposal_count)``."""

    image_height: int
    proposal_count: int

    def to_json(self) -> list[int]:
        return [self.image_height, self.proposal_count]

    @classmethod
    def from_json(cls, value: Sequence) -> "ApproxConfig":
        if (
            not isinstance(value, (list, tuple))
            or len(value) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
        ):
            raise ValueError(f"config must be a two-element integer array, got {value!r}")
        return cls(int(value[0]), int(value[1]))

    def __str__(self) -> str:
        return f"({self.image_height}, {self.proposal_count})"


def lattice_leq(a: ApproxConfig, b: ApproxConfig) -> bool:
    """Partial order: ``a`` is at least as approximate as ``b`` on both axes."""
    return a.image_height <= b.image_height and a.proposal_count <= b.proposal_count


@dataclass(frozen=True)
class ConfigGrid:
    """The full lattice in canonical order (descending height, then proposals)."""

    heights: tuple[int, ...]
    proposals: tuple[int, ...]

    def __post_init__(self):
        for name, levels in (("heights", self.heights), ("proposals", self.proposals)):
            if not levels:
                raise ValueError(f"{name} must be nonempty")
            if len(set(levels)) != len(levels):
                raise ValueError(f"{name} contains duplicates: {levels}")
            if any(not isinstance(v, int) or v <= 0 for v in levels):
                raise ValueError(f"{name} must be positive integers: {levels}")
        object.__setattr__(self, "heights", tuple(sorted(self.heights, reverse=True)))
        object.__setattr__(self, "proposals", tuple(sorted(self.proposals, reverse=True)))
        configs = tuple(ApproxConfig(h, p) for h in self.heights for p in self.proposals)
        object.__setattr__(self, "_configs", configs)
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(configs)})

    @property
    def configs(self) -> tuple[ApproxConfig, ...]:
        return self._configs

    @property
    def baseline(self) -> ApproxConfig:
        return ApproxConfig(self.heights[0], self.proposals[0])

    def __len__(self) -> int:
        return len(self._configs)

    def __iter__(self) -> Iterator[ApproxConfig]:
        return iter(self._configs)

    def __contains__(self, config) -> bool:
        return config in self._index

    def index(self, config: ApproxConfig) -> int:
        """Position of ``config`` in enumeration order."""
        try:
            return self._index[config]
        except KeyError:
            raise ValueError(f"{config} is not a member of the configuration grid") from None

    def to_json(self) -> dict:
        return {"heights": list(self.heights), "proposals": list(self.proposals)}

    @classmethod
    def from_json(cls, value: dict) -> "ConfigGrid":
        return cls(tuple(value["heights"]), tuple(value["proposals"]))


def enumerate_grid(
    heights: Sequence[int] = DEFAULT_HEIGHTS,
    proposals: Sequence[int] = DEFAULT_PROPOSALS,
) -> ConfigGrid:
    """Return the configuration grid.

    The default is the 11 x 5 lattice whose baseline is (480, 300). Both
    level lists may be overridden; the baseline is always the largest level
    on each axis.
    """
    return ConfigGrid(tuple(heights), tuple(proposals))


def _nearest_level(value: float, levels: Sequence[int]) -> int:
    # levels are sorted descending; ties go to the larger level
    best = levels[0]
    best_dist = abs(value - best)
    for level in levels[1:]:
        dist = abs(value - level)
        if dist < best_dist:
            best, best_dist = level, dist
    return best


def nearest_config(
    height_estimate: float, proposals_estimate: float, grid: ConfigGrid | None = None
) -> ApproxConfig:
    """Round a continuous estimate onto the grid, one axis at a time.

    Values beyond either end of an axis clamp to the boundary level. An exact
    midpoint between two levels resolves to the larger one.

    Raises:
        ValueError: if either estimate is NaN or infinite.
    """
    if not (math.isfinite(height_estimate) and math.isfinite(proposals_estimate)):
        raise ValueError(
            f"non-finite configuration estimate: height={height_estimate!r}, "
            f"proposals={proposals_estimate!r}"
        )
    if grid is None:
        grid = DEFAULT_GRID
    return ApproxConfig(
        _nearest_level(float(height_estimate), grid.heights),
        _nearest_level(float(proposals_estimate), grid.proposals),
    )


DEFAULT_GRID = enumerate_grid()
