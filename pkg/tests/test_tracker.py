import numpy as np
import pytest

from conftest import tiny_model_config
from memtrack.boxes import iou
from memtrack.data import SequenceSpec, synth_sequence
from memtrack.metrics import metrics
from memtrack.model import TrackerNet
from memtrack.tracker import TrackerConfig, TrackerSession, read_results, track_sequence, write_results


@pytest.fixture(scope="module")
def model():
    return TrackerNet(tiny_model_config(seed=2))


@pytest.fixture(scope="module")
def seq():
    return synth_sequence(SequenceSpec(length=15, image_size=(64, 64), target_size=(10, 12), clutter=1), 4)


def test_output_length_and_first_frame(model, seq):
    res = track_sequence(model, seq, TrackerConfig())
    assert len(res) == len(seq)
    assert iou(res[0][0], seq.gt_boxes[0]) == 1.0 and res[0][1] == 1.0
    for box, score in res:
        assert box.w > 0 and box.h > 0 and 0 <= score <= 1


def test_tracking_is_deterministic(model, seq):
    a = track_sequence(model, seq, TrackerConfig())
    b = track_sequence(model, seq, TrackerConfig())
    assert a == b


def test_memory_size_one_equals_first_frame_stub(model, seq):
    cfg = TrackerConfig(memory_size=1)
    trace = []
    a = track_sequence(model, seq, cfg, trace=trace)
    b = track_sequence(model, seq, TrackerConfig(memory_size=6), selector=lambda t: [1])
    assert a == b
    assert all(line.endswith("[1]") for line in trace)


def test_trace_records_sampler_choices(model):
    seq = synth_sequence(SequenceSpec(length=12, image_size=(64, 64), target_size=(10, 10)), 0)
    trace = []
    track_sequence(model, seq, TrackerConfig(memory_size=6), trace=trace)
    assert trace[0] == "2: [1]"
    assert trace[2] == "4: [1, 2, 3]"
    # L = 11 // 4 = 2, representatives floor(2 * (i - 0.5)) = 1, 3, 5, 7
    assert trace[-1] == "12: [1, 3, 5, 7, 11]"


def test_cache_cap_bounds_bank(model):
    seq = synth_sequence(SequenceSpec(length=40, image_size=(64, 64), target_size=(10, 10)), 1)
    sessions = []
    track_sequence(model, seq, TrackerConfig(memory_size=None, cache_cap=8), session_out=sessions)
    assert len(sessions[0].bank) <= 8
    assert 1 in sessions[0].bank


def test_timings_are_recorded(model, seq):
    session = TrackerSession(model, TrackerConfig())
    session.initialize(seq.frames[0], seq.gt_boxes[0])
    session.track(seq.frames[1])
    t = session.timings[0]
    assert t["t"] == 2 and t["total"] >= t["read"] >= 0


def test_results_csv_round_trip_and_metric_consistency(model, seq, tmp_path):
    res = track_sequence(model, seq, TrackerConfig())
    write_results(tmp_path / "r.csv", res)
    back = read_results(tmp_path / "r.csv")
    assert back == [(b, s) for b, s in res]
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == "frame_idx,x,y,w,h,score"
    m1 = metrics([b for b, _ in res[1:]], seq.gt_boxes[1:])
    m2 = metrics([b for b, _ in back[1:]], seq.gt_boxes[1:])
    assert m1 == m2


def test_zeroed_label_maps_match_label_free_model(seq):
    with_g = TrackerNet(tiny_model_config(seed=3))
    without = TrackerNet(tiny_model_config(seed=3, use_label_map=False))
    a = track_sequence(with_g, seq, TrackerConfig(use_label_map=False))
    b = track_sequence(without, seq, TrackerConfig())
    assert a == b
