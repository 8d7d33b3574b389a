import json

import numpy as np
import pytest
from conftest import BASE, GRID, det, gt, make_frame, make_trace
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import ref_iou, ref_safe_set

from dsa_sim.config_lattice import ApproxConfig, lattice_leq
from dsa_sim.metrics import BBox, GroundTruth
from dsa_sim.trace_store import (
    BoundsError,
    EmulatorParams,
    MalformedRecordError,
    NonContiguousFramesError,
    ObjectTrack,
    OutOfGridError,
    Scenario,
    SparseTraceError,
    VideoSpec,
    drift_scenario,
    dumps_trace,
    emulate_detection,
    generate_synthetic,
    loads_trace,
    read_trace,
    write_trace,
)


def small_trace():
    g = gt(10, 10, 60, 90)
    return make_trace({
        "a": [make_frame([g], lambda c: [det(10, 10, 60, 90, 0.75)]),
              make_frame([], lambda c: [det(1, 2, 3, 4, 0.125, "dog")])],
        "b": [make_frame([gt(0, 0, 5, 5, "dog")], lambda c: [])],
    })


def rng(seed=0):
    return np.random.default_rng(seed)


# -- serialization -----------------------------------------------------------


def test_round_trip_is_byte_identical(tmp_path):
    t = small_trace()
    text = dumps_trace(t)
    again = loads_trace(text)
    assert dumps_trace(again) == text
    assert again.videos["a"][0].outputs == t.videos["a"][0].outputs
    path = tmp_path / "t.jsonl"
    write_trace(t, path)
    assert path.read_text() == text
    assert read_trace(path).fingerprint() == t.fingerprint()


def test_canonical_layout():
    lines = dumps_trace(small_trace()).splitlines()
    header = json.loads(lines[0])
    assert list(header) == ["detector", "grid", "split"]
    rec = json.loads(lines[1])
    assert list(rec) == ["video", "frame", "width", "height", "gts", "outputs"]
    assert [o["config"] for o in rec["outputs"]] == [c.to_json() for c in GRID]
    assert list(rec["outputs"][0]["dets"][0]) == ["box", "score", "category"]
    assert " " not in lines[1]


def _mutate(fn, line=1):
    lines = dumps_trace(small_trace()).splitlines()
    rec = json.loads(lines[line])
    fn(rec)
    lines[line] = json.dumps(rec)
    return "\n".join(lines) + "\n"


def test_out_of_grid_config():
    def bad(rec):
        rec["outputs"][0]["config"] = [81, 300]

    with pytest.raises(OutOfGridError, match=r"line 2: video 'a' frame 0"):
        loads_trace(_mutate(bad))


def test_box_beyond_width():
    def bad(rec):
        rec["gts"][0]["box"][2] = 641

    with pytest.raises(BoundsError, match="frame 0"):
        loads_trace(_mutate(bad))


def test_det_box_beyond_height():
    def bad(rec):
        rec["outputs"][5]["dets"][0]["box"][3] = 480.5

    with pytest.raises(BoundsError):
        loads_trace(_mutate(bad))


def test_non_contiguous_frames():
    def bad(rec):
        rec["frame"] = 2

    with pytest.raises(NonContiguousFramesError, match="expected frame index 1"):
        loads_trace(_mutate(bad, line=2))


def test_interleaved_videos():
    lines = dumps_trace(small_trace()).splitlines()
    lines[2], lines[3] = lines[3], lines[2]
    with pytest.raises(NonContiguousFramesError):
        loads_trace("\n".join(lines))


@pytest.mark.parametrize(
    "mutation",
    [
        lambda r: r.pop("width"),
        lambda r: r.update(frame="0"),
        lambda r: r["outputs"].pop(),
        lambda r: r["outputs"][0]["dets"][0].update(score=1.5),
        lambda r: r["outputs"].append(dict(r["outputs"][0])),
        lambda r: r["gts"][0].update(box=[1, 2, 3]),
    ],
)
def test_malformed_records(mutation):
    with pytest.raises(MalformedRecordError):
        loads_trace(_mutate(mutation))


def test_bad_header_and_json():
    with pytest.raises(MalformedRecordError):
        loads_trace("")
    with pytest.raises(MalformedRecordError, match="line 1"):
        loads_trace("{nope\n")
    text = dumps_trace(small_trace())
    with pytest.raises(MalformedRecordError, match="line 3"):
        loads_trace("\n".join(text.splitlines()[:2] + ["[1,"]))


def test_sparse_trace_loads_but_oracle_refuses():
    from dsa_sim.oracle import safe_set

    lines = dumps_trace(small_trace()).splitlines()
    header = json.loads(lines[0])
    header["sparse"] = True
    rec = json.loads(lines[1])
    rec["outputs"] = rec["outputs"][:2]
    text = "\n".join([json.dumps(header), json.dumps(rec)]) + "\n"
    t = loads_trace(text)
    assert t.sparse
    assert dumps_trace(t) == "\n".join(
        [json.dumps(header, separators=(",", ":")), json.dumps(rec, separators=(",", ":"))]
    ) + "\n"
    with pytest.raises(SparseTraceError):
        t.require_dense()
    with pytest.raises(SparseTraceError):
        safe_set(t.videos["a"][0], "car")
    with pytest.raises(SparseTraceError):
        t.videos["a"][0].detections(ApproxConfig(80, 10))


# -- emulator ----------------------------------------------------------------


def test_large_object_full_score():
    g = GroundTruth(BBox(0, 0, 480, 480), "train")
    d = emulate_detection(g, BASE, EmulatorParams(theta=16), rng())
    assert d is not None and d.score == 1.0


def test_small_object_missed_at_low_resolution():
    g = GroundTruth(BBox(0, 0, 16, 16), "car")
    assert emulate_detection(g, ApproxConfig(80, 300), EmulatorParams(theta=16), rng()) is None


def test_no_jitter_identity():
    g = GroundTruth(BBox(100, 100, 148, 196), "car")
    d = emulate_detection(g, ApproxConfig(480, 50), EmulatorParams(theta=16, jitter=0.0), rng())
    assert d.box == g.box
    assert d.score == 1.0


def test_detection_threshold_boundary():
    # h_e = gt_h * 160/480 must reach theta
    p = EmulatorParams(theta=16, jitter=0.0)
    assert emulate_detection(GroundTruth(BBox(0, 0, 10, 48), "c"), ApproxConfig(160, 10), p,
                             rng()) is not None
    assert emulate_detection(GroundTruth(BBox(0, 0, 10, 47.9), "c"), ApproxConfig(160, 10), p,
                             rng()) is None


@settings(max_examples=200)
@given(
    st.floats(20, 400), st.floats(20, 400), st.sampled_from(GRID.heights),
    st.floats(0, 2.0), st.integers(0, 2**32 - 1),
)
def test_jitter_keeps_iou_and_bounds(h, w, height, jitter, seed):
    g = GroundTruth(BBox(600 - w, 470 - h, 600, 470), "c")
    d = emulate_detection(g, ApproxConfig(height, 300), EmulatorParams(1.0, 0, jitter, 0),
                          rng(seed), frame_size=(640, 480))
    assert d is not None
    assert ref_iou(d.box.as_list(), g.box.as_list()) >= 0.5
    assert 0 <= d.box.x_min <= d.box.x_max <= 640
    assert 0 <= d.box.y_min <= d.box.y_max <= 480


def test_same_seed_same_bytes():
    scen = drift_scenario(3, 6, seed=4)
    a = dumps_trace(generate_synthetic(scen, EmulatorParams(seed=9)))
    b = dumps_trace(generate_synthetic(scen, EmulatorParams(seed=9)))
    c = dumps_trace(generate_synthetic(scen, EmulatorParams(seed=10)))
    assert a == b
    assert a != c


def test_no_clutter_no_jitter_only_true_positives():
    t = generate_synthetic(drift_scenario(4, 8, seed=2),
                           EmulatorParams(clutter_rate=0.0, jitter=0.0, seed=1))
    for f in t.frames():
        for c in GRID:
            for d in f.outputs[c]:
                assert any(g.category == d.category
                           and ref_iou(d.box.as_list(), g.box.as_list()) >= 0.5 for g in f.gts)


def test_all_boxes_in_frame(drift_pair):
    for trace in drift_pair:
        for f in trace.frames():
            for b in [g.box for g in f.gts] + [d.box for c in GRID for d in f.outputs[c]]:
                assert 0 <= b.x_min and b.x_max <= f.width
                assert 0 <= b.y_min and b.y_max <= f.height


def test_clutter_is_shared_and_scored_below_one():
    t = generate_synthetic(drift_scenario(2, 5, seed=3), EmulatorParams(clutter_rate=3.0, seed=3))
    for f in t.frames():
        fps = [d for d in f.outputs[BASE] if d.score < 1.0]
        assert all(0.05 <= d.score <= 0.95 for d in fps)
        for c in GRID:
            if c.proposal_count >= 50:
                assert [d for d in f.outputs[c] if d.score < 1.0] == fps


def test_monotone_emulator_supersets(monotone_trace):
    for f in monotone_trace.frames():
        for c1 in GRID:
            for c2 in GRID:
                if lattice_leq(c1, c2):
                    s1 = {(d.category, d.score) for d in f.outputs[c1]}
                    assert len(f.outputs[c1]) <= len(f.outputs[c2])
                    assert all(d.score == 1.0 for d in f.outputs[c2])
                    assert s1 <= {(d.category, d.score) for d in f.outputs[c2]}


def test_growing_object_safe_set_grows():
    track = ObjectTrack("car", (20.0, 200.0), ((320.0, 240.0), (320.0, 240.0)), 1.0)
    scen = Scenario((VideoSpec("grow", 12, (track,)),))
    t = generate_synthetic(scen, EmulatorParams(clutter_rate=0.0, jitter=0.05, seed=0))
    sizes = [len(ref_safe_set(f, "car", GRID)) for f in t.videos["grow"]]
    assert sizes == sorted(sizes)
    assert sizes[0] < sizes[-1] == 55


def test_empty_scenario_rejected():
    with pytest.raises(ValueError, match="empty scenario"):
        generate_synthetic(Scenario(()), EmulatorParams())


@pytest.mark.parametrize(
    "kwargs", [dict(theta=0), dict(theta=-1), dict(clutter_rate=-0.1), dict(jitter=-1)]
)
def test_emulator_params_validation(kwargs):
    with pytest.raises(ValueError):
        EmulatorParams(**kwargs)


def test_scenario_json_round_trip():
    scen = drift_scenario(3, 4, ("bus", "dog"), seed=8)
    assert Scenario.from_json(json.loads(json.dumps(scen.to_json()))).videos == scen.videos
    with pytest.raises(ValueError):
        Scenario.from_json({"videos": [{"id": "x"}]})
