import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from dsa_sim import kernels
from dsa_sim.config_lattice import ApproxConfig, enumerate_grid
from dsa_sim.costmodel import builtin_cost_model
from dsa_sim.metrics import BBox, Detection, GroundTruth
from dsa_sim.trace_store import (
    DetectionTrace,
    EmulatorParams,
    FrameRecord,
    drift_scenario,
    generate_synthetic,
)

GRID = enumerate_grid()
BASE = GRID.baseline


def _available_backends():
    names = ["python"]
    try:
        kernels.get_backend("cython")
        names.append("cython")
    except ImportError:
        pass
    return names


BACKENDS = _available_backends()


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per kernel implementation."""
    impl = kernels.get_backend(request.param)
    monkeypatch.setattr(kernels, "greedy_match", impl.greedy_match)
    monkeypatch.setattr(kernels, "average_precision", impl.average_precision)
    return request.param


@pytest.fixture(scope="session")
def frcnn():
    return builtin_cost_model("faster-rcnn")


@pytest.fixture(scope="session")
def rfcn():
    return builtin_cost_model("rfcn")


def box(*xs):
    return BBox(*map(float, xs))


def det(x0, y0, x1, y1, score=0.9, cat="car"):
    return Detection(box(x0, y0, x1, y1), score, cat)


def gt(x0, y0, x1, y1, cat="car"):
    return GroundTruth(box(x0, y0, x1, y1), cat)


def make_frame(gts, outputs_fn, video="v0", index=0, width=640, height=480, grid=GRID):
    """Dense frame whose outputs come from ``outputs_fn(config) -> detections``."""
    return FrameRecord(video, index, width, height, tuple(gts),
                       {c: tuple(outputs_fn(c)) for c in grid})


def make_trace(videos, split="test", detector="unit", grid=GRID):
    """``videos``: dict video id -> list of frames (indices are renumbered)."""
    out = {}
    for vid, frames in videos.items():
        out[vid] = tuple(
            FrameRecord(vid, i, f.width, f.height, f.gts, f.outputs) for i, f in enumerate(frames)
        )
    return DetectionTrace(detector, grid, out, split)


def safe_only(gt_list, safe_configs, cat="car"):
    """Frame where the objects are detected exactly under ``safe_configs``."""
    safe_configs = set(safe_configs)

    def outputs(c):
        if c in safe_configs:
            return [Detection(g.box, 1.0, g.category) for g in gt_list]
        return []

    return make_frame(gt_list, outputs)


@pytest.fixture(scope="session")
def drift_pair():
    cats = ("airplane", "motorcycle")
    train = generate_synthetic(drift_scenario(10, 20, cats, seed=1), EmulatorParams(seed=11),
                               split="train")
    test = generate_synthetic(drift_scenario(10, 20, cats, seed=2), EmulatorParams(seed=12),
                              split="test")
    return train, test


@pytest.fixture(scope="session")
def monotone_trace():
    scen = drift_scenario(8, 15, ("airplane", "motorcycle", "car"), seed=5)
    return generate_synthetic(scen, EmulatorParams(clutter_rate=0.0, jitter=0.1, seed=5))


__all__ = ["ApproxConfig", "BASE", "GRID"]
