"""Detection traces: per-(frame, config) detector outputs plus ground truth.

A trace stands in for a real detector. It is stored as JSON Lines: a header
line followed by one line per frame, in a canonical field order so that the
same trace always serializes to the same bytes.

Synthetic traces come from a size-threshold emulator driven by numpy's PCG64
generator. Video ``i`` of a scenario draws from
``numpy.random.Generator(PCG64(SeedSequence([seed, i])))``, so traces are
reproducible across platforms and independent of how many videos precede a
given one.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .config_lattice import ApproxConfig, ConfigGrid, enumerate_grid
from .metrics import BBox, Category, Detection, GroundTruth, iou

SPLITS = ("train", "test")
MIN_JITTER_IOU = 0.55
CLUTTER_MAX_GT_IOU = 0.3


class TraceError(ValueError):
    """Base class for trace validation failures."""


class MalformedRecordError(TraceError):
    pass


class OutOfGridError(TraceError):
    pass


class BoundsError(TraceError):
    pass


class NonContiguousFramesError(TraceError):
    pass


class SparseTraceError(TraceError):
    """An operation that needs every grid config ran on a sparse trace."""


@dataclass(frozen=True)
class FrameRecord:
    video: str
    frame: int
    width: int
    height: int
    gts: tuple[GroundTruth, ...]
    outputs: dict[ApproxConfig, tuple[Detection, ...]]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def key(self) -> tuple[str, int]:
        return (self.video, self.frame)

    def categories(self) -> set:
        return {g.category for g in self.gts}

    def has_category(self, category: Category) -> bool:
        return any(g.category == category for g in self.gts)

    def detections(self, config: ApproxConfig) -> tuple[Detection, ...]:
        try:
            return self.outputs[config]
        except KeyError:
            raise SparseTraceError(
                f"video {self.video!r} frame {self.frame}: no outputs stored for {config}"
            ) from None

    def gt_array(self, category: Category) -> np.ndarray:
        key = ("gt", category)
        arr = self._cache.get(key)
        if arr is None:
            rows = [g.box.as_list() for g in self.gts if g.category == category]
            arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
            self._cache[key] = arr
        return arr

    def det_arrays(self, config: ApproxConfig, category: Category):
        key = ("det", config, category)
        hit = self._cache.get(key)
        if hit is None:
            dets = [d for d in self.detections(config) if d.category == category]
            boxes = np.array([d.box.as_list() for d in dets], dtype=np.float64).reshape(-1, 4)
            scores = np.array([d.score for d in dets], dtype=np.float64)
            hit = (boxes, scores)
            self._cache[key] = hit
        return hit


@dataclass(frozen=True)
class DetectionTrace:
    detector: str
    grid: ConfigGrid
    videos: dict[str, tuple[FrameRecord, ...]]
    split: str = "test"
    sparse: bool = False

    def frames(self) -> Iterator[FrameRecord]:
        for frames in self.videos.values():
            yield from frames

    def __len__(self) -> int:
        return sum(len(v) for v in self.videos.values())

    def categories(self) -> list:
        cats = {g.category for f in self.frames() for g in f.gts}
        return sorted(cats, key=str)

    def videos_with_category(self, category: Category) -> list[str]:
        return [
            vid
            for vid, frames in self.videos.items()
            if any(f.has_category(category) for f in frames)
        ]

    def frames_with_category(self, category: Category) -> list[FrameRecord]:
        """All frames of every video in which ``category`` appears at least once."""
        out = []
        for vid in self.videos_with_category(category):
            out.extend(self.videos[vid])
        return out

    def require_dense(self) -> None:
        if self.sparse:
            raise SparseTraceError("operation requires a dense trace (outputs for every config)")

    def fingerprint(self) -> str:
        return hashlib.sha256(dumps_trace(self).encode()).hexdigest()


# -- serialization -----------------------------------------------------------


def _det_json(d: Detection) -> dict:
    return {"box": d.box.as_list(), "score": d.score, "category": d.category}


def _frame_json(f: FrameRecord, grid: ConfigGrid) -> dict:
    outputs = [
        {"config": c.to_json(), "dets": [_det_json(d) for d in f.outputs[c]]}
        for c in grid
        if c in f.outputs
    ]
    return {
        "video": f.video,
        "frame": f.frame,
        "width": f.width,
        "height": f.height,
        "gts": [{"box": g.box.as_list(), "category": g.category} for g in f.gts],
        "outputs": outputs,
    }


def _dump_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n"


def save_trace(trace: DetectionTrace, sink: IO[str]) -> None:
    header = {"detector": trace.detector, "grid": trace.grid.to_json(), "split": trace.split}
    if trace.sparse:
        header["sparse"] = True
    sink.write(_dump_line(header))
    for f in trace.frames():
        sink.write(_dump_line(_frame_json(f, trace.grid)))


def dumps_trace(trace: DetectionTrace) -> str:
    buf = io.StringIO()
    save_trace(trace, buf)
    return buf.getvalue()


def _where(video, frame, lineno) -> str:
    return f"line {lineno}: video {video!r} frame {frame}"


def _req(obj: dict, key: str, types, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedRecordError(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise MalformedRecordError(f"{where}: field {key!r} has invalid type {type(value).__name__}")
    return value


def _parse_box(value, width, height, where: str) -> BBox:
    if not isinstance(value, list) or len(value) != 4:
        raise MalformedRecordError(f"{where}: box must be [x_min, y_min, x_max, y_max]")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise MalformedRecordError(f"{where}: box coordinates must be numbers")
    try:
        box = BBox.from_list(value)
    except ValueError as exc:
        raise MalformedRecordError(f"{where}: {exc}") from None
    if box.x_min < 0 or box.y_min < 0 or box.x_max > width or box.y_max > height:
        raise BoundsError(f"{where}: box {value} exceeds frame bounds {width}x{height}")
    return box


def _parse_category(obj, where):
    cat = _req(obj, "category", (str, int), where)
    return cat


def _parse_frame(rec, grid: ConfigGrid, sparse: bool, lineno: int) -> FrameRecord:
    if not isinstance(rec, dict):
        raise MalformedRecordError(f"line {lineno}: frame record must be an object")
    video = _req(rec, "video", str, f"line {lineno}")
    index = _req(rec, "frame", int, f"line {lineno}: video {video!r}")
    where = _where(video, index, lineno)
    if index < 0:
        raise MalformedRecordError(f"{where}: negative frame index")
    width = _req(rec, "width", int, where)
    height = _req(rec, "height", int, where)
    if width <= 0 or height <= 0:
        raise MalformedRecordError(f"{where}: frame dimensions must be positive")
    gts = []
    for g in _req(rec, "gts", list, where):
        gts.append(GroundTruth(_parse_box(_req(g, "box", list, where), width, height, where),
                               _parse_category(g, where)))
    outputs: dict[ApproxConfig, tuple[Detection, ...]] = {}
    for out in _req(rec, "outputs", list, where):
        raw = _req(out, "config", list, where)
        try:
            config = ApproxConfig.from_json(raw)
        except ValueError as exc:
            raise MalformedRecordError(f"{where}: {exc}") from None
        if config not in grid:
            raise OutOfGridError(f"{where}: config {raw} is not on the configuration grid")
        if config in outputs:
            raise MalformedRecordError(f"{where}: duplicate outputs for config {raw}")
        dets = []
        for d in _req(out, "dets", list, where):
            box = _parse_box(_req(d, "box", list, where), width, height, where)
            score = _req(d, "score", (int, float), where)
            if not 0.0 <= score <= 1.0:
                raise MalformedRecordError(f"{where}: score {score} outside [0, 1]")
            dets.append(Detection(box, float(score), _parse_category(d, where)))
        outputs[config] = tuple(dets)
    if not sparse and len(outputs) != len(grid):
        missing = [str(c) for c in grid if c not in outputs]
        raise MalformedRecordError(
            f"{where}: dense trace record lacks outputs for {len(missing)} configs "
            f"(first {missing[0]})"
        )
    return FrameRecord(video, index, width, height, tuple(gts), outputs)


def load_trace(source: IO[str] | Iterable[str]) -> DetectionTrace:
    """Parse and validate a JSON Lines trace.

    Raises:
        MalformedRecordError: unparsable or structurally invalid records.
        OutOfGridError: outputs keyed by a config that is not on the grid.
        BoundsError: a box extends beyond its frame.
        NonContiguousFramesError: frame indices of a video skip, repeat or
            are interleaved with another video.
    """
    lines = iter(source)
    try:
        header_line = next(lines)
    except StopIteration:
        raise MalformedRecordError("empty trace: missing header line") from None
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(f"line 1: invalid JSON ({exc.msg})") from None
    detector = _req(header, "detector", str, "line 1 (header)")
    grid_spec = _req(header, "grid", dict, "line 1 (header)")
    try:
        grid = ConfigGrid.from_json(grid_spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecordError(f"line 1 (header): invalid grid ({exc})") from None
    split = _req(header, "split", str, "line 1 (header)")
    if split not in SPLITS:
        raise MalformedRecordError(f"line 1 (header): split must be one of {SPLITS}, got {split!r}")
    sparse = bool(header.get("sparse", False))

    videos: dict[str, list[FrameRecord]] = {}
    current = None
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecordError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        frame = _parse_frame(rec, grid, sparse, lineno)
        where = _where(frame.video, frame.frame, lineno)
        if frame.video != current:
            if frame.video in videos:
                raise NonContiguousFramesError(f"{where}: video resumes after another video started")
            videos[frame.video] = []
            current = frame.video
        expected = len(videos[frame.video])
        if frame.frame != expected:
            raise NonContiguousFramesError(f"{where}: expected frame index {expected}")
        videos[frame.video].append(frame)
    return DetectionTrace(
        detector, grid, {k: tuple(v) for k, v in videos.items()}, split, sparse
    )


def loads_trace(text: str) -> DetectionTrace:
    return load_trace(io.StringIO(text))


def read_trace(path) -> DetectionTrace:
    with open(path, encoding="utf-8") as fh:
        return load_trace(fh)


def write_trace(trace: DetectionTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        save_trace(trace, fh)


# -- emulator ----------------------------------------------------------------


@dataclass(frozen=True)
class EmulatorParams:
    """Knobs of the size-threshold detector emulator.

    Attributes:
        theta: smallest effective object height (pixels) that is detected.
        clutter_rate: expected false positives per frame (Poisson mean).
        jitter: localization error coefficient, scaled by how far the image
            is downsampled.
        seed: root seed for all pseudo-random draws.
    """

    theta: float = 16.0
    clutter_rate: float = 0.5
    jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise ValueError(f"theta must be positive, got {self.theta}")
        if not self.clutter_rate >= 0:
            raise ValueError(f"clutter_rate must be >= 0, got {self.clutter_rate}")
        if not self.jitter >= 0:
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")


def _shift(box: BBox, dx: float, dy: float) -> BBox:
    return BBox(box.x_min + dx, box.y_min + dy, box.x_max + dx, box.y_max + dy)


def _clip(box: BBox, width: float, height: float) -> BBox:
    x0 = min(max(box.x_min, 0.0), width)
    y0 = min(max(box.y_min, 0.0), height)
    x1 = min(max(box.x_max, x0), width)
    y1 = min(max(box.y_max, y0), height)
    return BBox(x0, y0, x1, y1)


def emulate_detection(
    gt: GroundTruth,
    config: ApproxConfig,
    params: EmulatorParams,
    rng: np.random.Generator,
    frame_size: tuple[float, float] | None = None,
    full_height: int = 480,
) -> Detection | None:
    """Emulate the detector's response to one object under ``config``.

    The object is found when its height after rescaling to
    ``config.image_height`` is at least ``params.theta``. The returned box is
    the truth box shifted by seeded jitter, pulled back if needed so its IoU
    with the truth stays at or above 0.55, then clipped to ``frame_size``.
    """
    u = rng.uniform(-1.0, 1.0, size=2)
    scale = config.image_height / full_height
    effective = gt.box.height * scale
    if effective < params.theta:
        return None
    score = min(1.0, 0.5 + effective / (2.0 * params.theta))
    box = gt.box
    mag = params.jitter * (full_height / config.image_height - 1.0)
    if mag > 0:
        dx = float(u[0]) * mag * box.width
        dy = float(u[1]) * mag * box.height
        if dx or dy:
            cand = _shift(box, dx, dy)
            if iou(cand, box) < MIN_JITTER_IOU:
                lo, hi = 0.0, 1.0
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if iou(_shift(box, dx * mid, dy * mid), box) >= MIN_JITTER_IOU:
                        lo = mid
                    else:
                        hi = mid
                cand = _shift(box, dx * lo, dy * lo)
            box = cand
    if frame_size is not None:
        box = _clip(box, *frame_size)
    return Detection(box, score, gt.category)


# -- scenarios ---------------------------------------------------------------


@dataclass(frozen=True)
class ObjectTrack:
    """One object whose size and position move linearly over a video."""

    category: Category
    height: tuple[float, float]
    center: tuple[tuple[float, float], tuple[float, float]]
    aspect: float = 1.0

    def box_at(self, t: int, num_frames: int, width: int, height: int) -> BBox | None:
        s = t / (num_frames - 1) if num_frames > 1 else 0.0
        h = self.height[0] + s * (self.height[1] - self.height[0])
        w = self.aspect * h
        cx = self.center[0][0] + s * (self.center[1][0] - self.center[0][0])
        cy = self.center[0][1] + s * (self.center[1][1] - self.center[0][1])
        box = _clip(BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2), width, height)
        if box.width <= 0 or box.height <= 0:
            return None
        return box


@dataclass(frozen=True)
class VideoSpec:
    id: str
    num_frames: int
    objects: tuple[ObjectTrack, ...]


@dataclass(frozen=True)
class Scenario:
    videos: tuple[VideoSpec, ...]
    frame_width: int = 640
    frame_height: int = 480
    categories: tuple = ()

    def all_categories(self) -> list:
        cats = set(self.categories)
        for v in self.videos:
            cats.update(o.category for o in v.objects)
        return sorted(cats, key=str)

    def to_json(self) -> dict:
        return {
            "frame_width": self.frame_width,
            "frame_height": self.frame_height,
            "videos": [
                {
                    "id": v.id,
                    "num_frames": v.num_frames,
                    "objects": [
                        {
                            "category": o.category,
                            "height": list(o.height),
                            "center": [list(o.center[0]), list(o.center[1])],
                            "aspect": o.aspect,
                        }
                        for o in v.objects
                    ],
                }
                for v in self.videos
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        try:
            videos = []
            for v in data["videos"]:
                objs = tuple(
                    ObjectTrack(
                        o["category"],
                        (float(o["height"][0]), float(o["height"][1])),
                        (
                            (float(o["center"][0][0]), float(o["center"][0][1])),
                            (float(o["center"][1][0]), float(o["center"][1][1])),
                        ),
                        float(o.get("aspect", 1.0)),
                    )
                    for o in v["objects"]
                )
                n = int(v["num_frames"])
                if n <= 0:
                    raise ValueError(f"video {v['id']!r}: num_frames must be positive")
                videos.append(VideoSpec(str(v["id"]), n, objs))
            return cls(
                tuple(videos),
                int(data.get("frame_width", 640)),
                int(data.get("frame_height", 480)),
                tuple(data.get("categories", ())),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ValueError(f"invalid scenario: {exc!r}") from None


# relative object-height ranges (fraction of frame height) for built-in scenarios
CATEGORY_SIZE_PROFILES = {
    "airplane": (0.12, 0.70),
    "train": (0.10, 0.90),
    "bus": (0.08, 0.60),
    "car": (0.04, 0.40),
    "motorcycle": (0.035, 0.30),
    "dog": (0.04, 0.50),
}


def drift_scenario(
    num_videos: int = 8,
    num_frames: int = 30,
    categories: Sequence[str] = ("airplane", "motorcycle"),
    seed: int = 0,
    frame_width: int = 640,
    frame_height: int = 480,
    max_objects: int = 3,
) -> Scenario:
    """Random scenario of single-category videos whose objects grow or shrink.

    Objects sit in separate vertical lanes, so boxes in a frame never
    overlap. Video ``i`` shows ``categories[i % len(categories)]``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD51F7]))
    videos = []
    for i in range(num_videos):
        cat = categories[i % len(categories)]
        lo, hi = CATEGORY_SIZE_PROFILES.get(cat, (0.05, 0.6))
        k = int(rng.integers(1, max_objects + 1))
        lane = frame_width / k
        objs = []
        for j in range(k):
            h0, h1 = (rng.uniform(lo, hi, size=2) * frame_height).tolist()
            # keep the box inside its lane
            aspect_cap = 0.95 * lane / max(h0, h1)
            aspect = float(min(rng.uniform(0.6, 1.6), aspect_cap))
            cx = (j + 0.5) * lane
            cy0, cy1 = rng.uniform(0.4, 0.6, size=2) * frame_height
            objs.append(ObjectTrack(cat, (h0, h1), ((cx, float(cy0)), (cx, float(cy1))), aspect))
        videos.append(VideoSpec(f"v{i:03d}", num_frames, tuple(objs)))
    return Scenario(tuple(videos), frame_width, frame_height, tuple(categories))


def _clutter(rng, gts, width, height, rate, categories) -> list[Detection]:
    out = []
    n = int(rng.poisson(rate)) if rate > 0 else 0
    for _ in range(n):
        for _attempt in range(20):
            h = float(rng.uniform(8.0, 0.3 * height))
            w = float(rng.uniform(0.5, 2.0)) * h
            w = min(w, width)
            x0 = float(rng.uniform(0.0, width - w))
            y0 = float(rng.uniform(0.0, height - h))
            score = float(rng.uniform(0.05, 0.95))
            cat = categories[int(rng.integers(len(categories)))]
            box = BBox(x0, y0, x0 + w, y0 + h)
            if all(iou(box, g.box) < CLUTTER_MAX_GT_IOU for g in gts):
                out.append(Detection(box, score, cat))
                break
    return out


def _generate_video(video: VideoSpec, scenario: Scenario, grid: ConfigGrid,
                    params: EmulatorParams, index: int, categories) -> tuple[FrameRecord, ...]:
    rng = np.random.default_rng(np.random.SeedSequence([params.seed, index]))
    W, H = scenario.frame_width, scenario.frame_height
    full = grid.baseline.image_height
    frames = []
    for t in range(video.num_frames):
        gts = []
        for obj in video.objects:
            box = obj.box_at(t, video.num_frames, W, H)
            if box is not None:
                gts.append(GroundTruth(box, obj.category))
        clutter = _clutter(rng, gts, W, H, params.clutter_rate, categories)
        outputs = {}
        for config in grid:
            found = []
            for g in gts:
                d = emulate_detection(g, config, params, rng, (W, H), full)
                if d is not None:
                    found.append(d)
            ranked = sorted(found + clutter, key=lambda d: -d.score)
            outputs[config] = tuple(ranked[: config.proposal_count])
        frames.append(FrameRecord(video.id, t, W, H, tuple(gts), outputs))
    return tuple(frames)


def generate_synthetic(
    scenario: Scenario,
    params: EmulatorParams,
    grid: ConfigGrid | None = None,
    detector: str = "emulated",
    split: str = "test",
) -> DetectionTrace:
    """Build a dense trace by running the emulator over every grid config.

    Under each config a frame's detections are the emulated true positives
    plus the frame's clutter false positives, truncated to the top
    ``proposal_count`` by score (sorting is stable).

    Raises:
        ValueError: if the scenario has no videos.
    """
    if not scenario.videos:
        raise ValueError("empty scenario: no videos to generate")
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    grid = grid or enumerate_grid()
    categories = scenario.all_categories() or ["object"]
    videos = {}
    for i, v in enumerate(scenario.videos):
        if v.id in videos:
            raise ValueError(f"duplicate video id {v.id!r}")
        videos[v.id] = _generate_video(v, scenario, grid, params, i, categories)
    return DetectionTrace(detector, grid, videos, split)
