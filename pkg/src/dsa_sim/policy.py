"""Approximation policies: static per-category configs and the AutoFocus controller."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .config_lattice import DEFAULT_GRID, ApproxConfig, ConfigGrid, nearest_config
from .costmodel import CostModel
from .metrics import DEFAULT_IOU_THRESHOLD, Category, Detection
from .oracle import frame_ap_vector, optimal_config, static_oracle_config
from .trace_store import DetectionTrace, FrameRecord

ANY = "any"
DEFAULT_CONFIDENCE = 0.6
DEFAULT_WINDOW = 3
RIDGE_LAMBDA = 1e-6
ROI_COUNT_CAP = 50
NUM_FEATURES = 5
DEGREE = 4
BASIS_SIZE = 1 + NUM_FEATURES * DEGREE
BASIS_SPEC = "bias+per-feature-powers-1..4"
MODEL_FORMAT = "dsa-sim/autofocus"
MODEL_VERSION = 1
STATIC_FORMAT = "dsa-sim/static-policy"


class PolicyError(ValueError):
    pass


class TrainingError(ValueError):
    pass


# -- static policies ---------------------------------------------------------


@dataclass(frozen=True)
class StaticPolicy:
    """One fixed config per category; the ``"any"`` key is category-oblivious."""

    mapping: Mapping[Hashable, ApproxConfig]
    name: str = "static"
    dynamic = False

    def config_for(self, category: Category) -> ApproxConfig:
        if category in self.mapping:
            return self.mapping[category]
        if ANY in self.mapping:
            return self.mapping[ANY]
        raise PolicyError(f"static policy {self.name!r} has no config for category {category!r}")

    def start(self, video: str, category: Category, grid: ConfigGrid) -> "_FixedController":
        return _FixedController(self.config_for(category))

    def to_json(self) -> dict:
        return {
            "format": STATIC_FORMAT,
            "version": 1,
            "name": self.name,
            "configs": [[k, c.to_json()] for k, c in self.mapping.items()],
        }

    @classmethod
    def from_json(cls, data: dict) -> "StaticPolicy":
        if data.get("format") != STATIC_FORMAT:
            raise PolicyError("not a static policy file")
        mapping = {k: ApproxConfig.from_json(v) for k, v in data["configs"]}
        return cls(mapping, data.get("name", "static"))


class _FixedController:
    decisions = 0

    def __init__(self, config: ApproxConfig):
        self.config = config

    def decide(self) -> ApproxConfig:
        return self.config

    def observe(self, dets, width, height) -> None:
        pass


@dataclass(frozen=True)
class ScheduledPolicy:
    """Replays a precomputed config per (category, video, frame), e.g. an oracle."""

    schedule: Mapping[Hashable, Mapping[tuple[str, int], ApproxConfig]]
    name: str = "dynamic-oracle"
    dynamic = False

    def start(self, video: str, category: Category, grid: ConfigGrid) -> "_ScheduleController":
        try:
            per_frame = self.schedule[category]
        except KeyError:
            raise PolicyError(f"no schedule for category {category!r}") from None
        return _ScheduleController(per_frame, video)


class _ScheduleController:
    decisions = 0

    def __init__(self, per_frame, video):
        self.per_frame = per_frame
        self.video = video
        self.t = 0

    def decide(self) -> ApproxConfig:
        try:
            return self.per_frame[(self.video, self.t)]
        except KeyError:
            raise PolicyError(f"schedule lacks video {self.video!r} frame {self.t}") from None

    def observe(self, dets, width, height) -> None:
        self.t += 1


def _aps_for(trace: DetectionTrace, category, iou_threshold):
    return [
        frame_ap_vector(f, category, trace.grid, iou_threshold)
        for f in trace.frames_with_category(category)
    ]


def fit_static(
    trace: DetectionTrace,
    cost: CostModel,
    scope: Category = ANY,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> StaticPolicy:
    """Fastest config whose training mAP is at least the baseline training mAP.

    With ``scope="any"`` one config is chosen for all categories, and it
    must meet that bar for every category in the trace. Falls back to the
    baseline when nothing faster qualifies.

    Raises:
        TrainingError: if the trace has no ground truth at all.
    """
    trace.require_dense()
    categories = trace.categories()
    if not categories:
        raise TrainingError("training trace contains no ground truth")
    if scope == ANY:
        scopes = [_aps_for(trace, c, iou_threshold) for c in categories]
        config = static_oracle_config(None, cost, category_scopes=scopes)
        return StaticPolicy({ANY: config}, "category-oblivious")
    if scope not in categories:
        raise TrainingError(f"category {scope!r} does not occur in the training trace")
    config = static_oracle_config(_aps_for(trace, scope, iou_threshold), cost)
    return StaticPolicy({scope: config}, "static")


def fit_static_all(
    trace: DetectionTrace, cost: CostModel, iou_threshold: float = DEFAULT_IOU_THRESHOLD
) -> StaticPolicy:
    """Category-aware static policy covering every category of the trace."""
    mapping = {}
    for cat in trace.categories():
        mapping.update(fit_static(trace, cost, cat, iou_threshold).mapping)
    return StaticPolicy(mapping, "static")


# -- features and regression -------------------------------------------------


@dataclass(frozen=True)
class FeatureVector:
    """Smallest/largest trusted ROI dims (normalized to the frame) and ROI count."""

    min_height: float
    min_width: float
    max_height: float
    max_width: float
    roi_count: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.min_height, self.min_width, self.max_height, self.max_width, self.roi_count)


def _unit(x: float) -> float:
    return min(1.0, max(0.0, x))


def extract_features(
    dets: Sequence[Detection],
    width: float,
    height: float,
    threshold: float = DEFAULT_CONFIDENCE,
) -> FeatureVector | None:
    """Summarize the trusted detections of the previous frame.

    Only detections scoring at least ``threshold`` count. The smallest and
    largest ROIs are picked by area (first in input order on ties). Returns
    ``None`` when nothing passes the gate.
    """
    trusted = [d for d in dets if d.score >= threshold]
    if not trusted:
        return None
    small = min(trusted, key=lambda d: d.box.area)
    large = max(trusted, key=lambda d: d.box.area)
    return FeatureVector(
        _unit(small.box.height / height),
        _unit(small.box.width / width),
        _unit(large.box.height / height),
        _unit(large.box.width / width),
        min(len(trusted), ROI_COUNT_CAP) / ROI_COUNT_CAP,
    )


def polynomial_expand(f: FeatureVector | Sequence[float]) -> np.ndarray:
    """``[1, f1, f1^2, f1^3, f1^4, f2, ..., f5^4]``."""
    values = f.as_tuple() if isinstance(f, FeatureVector) else tuple(f)
    if len(values) != NUM_FEATURES:
        raise ValueError(f"expected {NUM_FEATURES} features, got {len(values)}")
    out = np.empty(BASIS_SIZE, dtype=np.float64)
    out[0] = 1.0
    for j, x in enumerate(values):
        for k in range(1, DEGREE + 1):
            out[1 + j * DEGREE + (k - 1)] = x**k
    return out


def design_matrix(features: Sequence[FeatureVector | Sequence[float]]) -> np.ndarray:
    return np.vstack([polynomial_expand(f) for f in features])


def ridge_solve(X: np.ndarray, y: np.ndarray, lam: float = RIDGE_LAMBDA,
                refinements: int = 8) -> np.ndarray:
    """Ridge least squares with iterative refinement toward the exact fit.

    Every solve goes through the ridge-augmented system, so rank-deficient
    ``X`` is fine. The refinement steps (iterated Tikhonov) remove the
    ridge bias for targets that ``X`` can represent.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    p = X.shape[1]
    A = np.vstack([X, math.sqrt(lam) * np.eye(p)])
    pad = np.zeros(p)
    w = np.zeros(p)
    last = math.inf
    for _ in range(refinements + 1):
        r = y - X @ w
        norm = float(np.linalg.norm(r))
        if norm >= last:
            break
        last = norm
        w = w + np.linalg.lstsq(A, np.concatenate([r, pad]), rcond=None)[0]
    return w


def fit_regressor(samples: Sequence[tuple[FeatureVector, float]]) -> np.ndarray:
    """Fit the 21 weights of the degree-4 per-feature polynomial.

    Raises:
        TrainingError: if ``samples`` is empty or a target is not finite.
    """
    if not samples:
        raise TrainingError("no samples to fit")
    X = design_matrix([f for f, _ in samples])
    y = np.array([t for _, t in samples], dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise TrainingError("regression targets must be finite")
    return ridge_solve(X, y)


# -- AutoFocus ----------------------------------------------------------------


@dataclass(frozen=True)
class AutoFocusModel:
    height_weights: tuple[float, ...]
    proposal_weights: tuple[float, ...]
    threshold: float = DEFAULT_CONFIDENCE
    window: int = DEFAULT_WINDOW
    category: Category | None = None
    basis: str = BASIS_SPEC

    def __post_init__(self):
        for name in ("height_weights", "proposal_weights"):
            w = getattr(self, name)
            if len(w) != BASIS_SIZE or not all(math.isfinite(v) for v in w):
                raise ValueError(f"{name} must be {BASIS_SIZE} finite reals")
        if self.window < 1:
            raise ValueError("decision window must be at least 1 frame")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("confidence threshold must lie in [0, 1]")
        if self.basis != BASIS_SPEC:
            raise ValueError(f"unsupported basis {self.basis!r}")

    def predict(self, f: FeatureVector) -> tuple[float, float]:
        phi = polynomial_expand(f)
        return (float(phi @ np.asarray(self.height_weights)),
                float(phi @ np.asarray(self.proposal_weights)))

    def predict_config(self, f: FeatureVector, grid: ConfigGrid | None = None) -> ApproxConfig:
        h, p = self.predict(f)
        if not (math.isfinite(h) and math.isfinite(p)):
            # overflowed prediction: fall back to the most accurate level
            return (grid or DEFAULT_GRID).baseline
        return nearest_config(h, p, grid)

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "category": self.category,
            "basis": self.basis,
            "threshold": self.threshold,
            "window": self.window,
            "height_weights": list(self.height_weights),
            "proposal_weights": list(self.proposal_weights),
        }

    @classmethod
    def from_json(cls, data: dict) -> "AutoFocusModel":
        if data.get("format") != MODEL_FORMAT:
            raise PolicyError("not an AutoFocus model")
        if data.get("version") != MODEL_VERSION:
            raise PolicyError(f"unsupported AutoFocus model version {data.get('version')!r}")
        return cls(
            tuple(float(v) for v in data["height_weights"]),
            tuple(float(v) for v in data["proposal_weights"]),
            float(data["threshold"]),
            int(data["window"]),
            data.get("category"),
            data["basis"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


def training_samples(
    trace: DetectionTrace,
    cost: CostModel,
    category: Category,
    threshold: float = DEFAULT_CONFIDENCE,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> list[tuple[FeatureVector, ApproxConfig]]:
    """(features from the baseline outputs, oracle optimal config) per usable frame."""
    trace.require_dense()
    base = trace.grid.baseline
    out = []
    for f in trace.frames_with_category(category):
        dets = [d for d in f.detections(base) if d.category == category]
        feats = extract_features(dets, f.width, f.height, threshold)
        if feats is None:
            continue
        out.append((feats, optimal_config(f, category, cost, iou_threshold)))
    return out


def train_autofocus(
    trace: DetectionTrace,
    cost: CostModel,
    category: Category,
    threshold: float = DEFAULT_CONFIDENCE,
    window: int = DEFAULT_WINDOW,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> AutoFocusModel:
    """Fit the height and proposal regressors for one category.

    Raises:
        TrainingError: if no training frame survives the confidence gate.
    """
    samples = training_samples(trace, cost, category, threshold, iou_threshold)
    if not samples:
        raise TrainingError(
            f"no training frame of category {category!r} has a detection scoring >= {threshold}"
        )
    wh = fit_regressor([(f, float(c.image_height)) for f, c in samples])
    wp = fit_regressor([(f, float(c.proposal_count)) for f, c in samples])
    return AutoFocusModel(tuple(wh.tolist()), tuple(wp.tolist()), threshold, window, category)


@dataclass
class ControllerState:
    """Per-stream controller state."""

    grid: ConfigGrid
    current: ApproxConfig | None = None
    remaining: int = 0
    last_dets: Sequence[Detection] | None = None
    frame_size: tuple[float, float] | None = None
    category: Category | None = None
    predictions: int = 0

    def __post_init__(self):
        if self.current is None:
            self.current = self.grid.baseline

    def observe(self, dets: Sequence[Detection], width: float, height: float) -> None:
        if self.category is not None:
            dets = [d for d in dets if d.category == self.category]
        self.last_dets = list(dets)
        self.frame_size = (width, height)


def autofocus_decide(state: ControllerState, model: AutoFocusModel) -> ApproxConfig:
    """Choose the config for the next frame and update ``state``.

    Inside a decision window the current config is held. Otherwise the
    previous frame's trusted detections are turned into features; with none
    (stream start, or nothing above the gate) the baseline is used, else the
    regressors pick a config that is held for ``model.window`` frames.
    """
    if state.remaining > 0:
        state.remaining -= 1
        return state.current
    feats = None
    if state.last_dets is not None and state.frame_size is not None:
        feats = extract_features(state.last_dets, *state.frame_size, model.threshold)
    if feats is None:
        state.current = state.grid.baseline
        return state.current
    state.current = model.predict_config(feats, state.grid)
    state.predictions += 1
    state.remaining = model.window - 1
    return state.current


class _AutoFocusController:
    def __init__(self, model: AutoFocusModel, grid: ConfigGrid, category):
        self.model = model
        self.state = ControllerState(grid, category=category)

    @property
    def decisions(self) -> int:
        return self.state.predictions

    def decide(self) -> ApproxConfig:
        return autofocus_decide(self.state, self.model)

    def observe(self, dets, width, height) -> None:
        self.state.observe(dets, width, height)


@dataclass(frozen=True)
class AutoFocusPolicy:
    models: Mapping[Hashable, AutoFocusModel] = field(default_factory=dict)
    name: str = "autofocus"
    dynamic = True

    def model_for(self, category: Category) -> AutoFocusModel:
        if category in self.models:
            return self.models[category]
        if ANY in self.models:
            return self.models[ANY]
        raise PolicyError(f"no AutoFocus model for category {category!r}")

    def start(self, video: str, category: Category, grid: ConfigGrid) -> _AutoFocusController:
        return _AutoFocusController(self.model_for(category), grid, category)

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT + "-bundle",
            "version": MODEL_VERSION,
            "models": [m.to_json() for m in self.models.values()],
        }

    @classmethod
    def from_json(cls, data: dict) -> "AutoFocusPolicy":
        if data.get("format") == MODEL_FORMAT:
            m = AutoFocusModel.from_json(data)
            return cls({m.category if m.category is not None else ANY: m})
        if data.get("format") != MODEL_FORMAT + "-bundle":
            raise PolicyError("not an AutoFocus model bundle")
        models = {}
        for raw in data["models"]:
            m = AutoFocusModel.from_json(raw)
            models[m.category if m.category is not None else ANY] = m
        return cls(models)


def load_policy(data: dict):
    """Build a policy object from any of the serialized policy formats."""
    fmt = data.get("format", "")
    if fmt == STATIC_FORMAT:
        return StaticPolicy.from_json(data)
    if fmt.startswith(MODEL_FORMAT):
        return AutoFocusPolicy.from_json(data)
    raise PolicyError(f"unrecognized policy format {fmt!r}")


def oracle_policies(trace: DetectionTrace, cost: CostModel,
                    iou_threshold: float = DEFAULT_IOU_THRESHOLD):
    """Static- and dynamic-oracle policies computed from ``trace`` itself."""
    from .oracle import limit_study

    report = limit_study(trace, cost, iou_threshold)
    static = StaticPolicy({r.category: r.static_config for r in report.rows}, "static-oracle")
    dynamic = ScheduledPolicy({r.category: dict(r.frame_optima) for r in report.rows},
                              "dynamic-oracle")
    return static, dynamic, report


def baseline_policy(grid: ConfigGrid) -> StaticPolicy:
    return StaticPolicy({ANY: grid.baseline}, "baseline")
