from __future__ import annotations

import pytest

from aide.geometry import Region
from aide.perception import PerceptionError, SceneFrame, ToolHypothesis
from aide.remote import CircuitOpenError, RemotePerception


def frame():
    return SceneFrame(image="frame:test:0", width=100, height=100, timestamp=0.0)


class ScriptedTransport:
    """Records calls and replays canned responses or failures."""

    def __init__(self, responses=None, fail_times=0):
        self.responses = responses or {}
        self.fail_times = fail_times
        self.calls = []

    def __call__(self, url, payload):
        self.calls.append((url, payload))
        if self.fail_times > 0:
            self.fail_times -= 1
            raise PerceptionError("boom")
        path = "/" + url.rsplit("/", 1)[-1]
        return self.responses[path]


def client(transport):
    return RemotePerception("http://models.example:9000", transport=transport)


def test_detect_roundtrip():
    transport = ScriptedTransport(
        {
            "/detect": {
                "detections": [
                    {"label": "cup", "box": [1, 2, 3, 4], "confidence": 0.9, "rank": 1},
                    {"label": "cup", "box": [5, 6, 7, 8], "confidence": 0.5, "rank": 2},
                ]
            }
        }
    )
    remote = client(transport)
    dets = remote.detect(frame(), ["cup"], 5)
    assert len(dets) == 2
    assert dets[0].box == Region(1, 2, 3, 4)
    url, payload = transport.calls[0]
    assert url.endswith("/detect")
    assert payload["vocabulary"] == ["cup"]
    assert payload["k"] == 5


def test_similarity_and_reason_routing():
    transport = ScriptedTransport(
        {
            "/similarity": {"value": 0.42},
            "/reason": {"label": "cup", "attributes": ["graspable"]},
        }
    )
    remote = client(transport)
    assert remote.similarity("a", "b").value == pytest.approx(0.42)
    hyp = remote.propose_tool("I am thirsty", frame())
    assert hyp == ToolHypothesis("cup", ("graspable",))
    paths = [url.rsplit("/", 1)[-1] for url, _ in transport.calls]
    assert paths == ["similarity", "reason"]


def test_similarity_clamped_below_one():
    remote = client(ScriptedTransport({"/similarity": {"value": 1.0}}))
    assert remote.similarity("a", "b").value < 1.0


def test_segment_and_select_and_scores():
    transport = ScriptedTransport(
        {
            "/detect": {"operational": [0, 5, 10, 10], "functional": [0, 0, 10, 5]},
            "/reason": {"index": 1, "scores": [5.0] * 19, "label": "fridge"},
        }
    )
    remote = client(transport)
    from aide.perception import Detection

    tool = Detection(label="cup", box=Region(0, 0, 10, 10), confidence=0.9, rank=1)
    operational, functional = remote.segment_regions(tool, frame())
    assert operational == Region(0, 5, 10, 10)
    candidates = [tool, Detection(label="cup", box=Region(1, 1, 5, 5), confidence=0.8, rank=2)]
    assert remote.select_candidate(ToolHypothesis("cup"), candidates, frame()) == 1
    assert len(remote.score_affordance("tool:drink:cup").scores) == 19
    assert remote.infer_unseen_label("where is it", frame()) == "fridge"


def test_select_candidate_range_checked():
    remote = client(ScriptedTransport({"/reason": {"index": 7}}))
    from aide.perception import Detection

    candidates = [Detection(label="cup", box=Region(0, 0, 1, 1), confidence=0.5, rank=1)]
    with pytest.raises(PerceptionError):
        remote.select_candidate(ToolHypothesis("cup"), candidates, frame())


def test_circuit_opens_after_three_consecutive_failures():
    transport = ScriptedTransport({"/similarity": {"value": 0.5}}, fail_times=3)
    remote = client(transport)
    for _ in range(3):
        with pytest.raises(PerceptionError):
            remote.similarity("a", "b")
    assert remote.circuit_open
    with pytest.raises(CircuitOpenError):
        remote.similarity("a", "b")
    # The breaker short-circuits: no further transport calls happen.
    assert len(transport.calls) == 3
    remote.reset()
    assert remote.similarity("a", "b").value == pytest.approx(0.5)


def test_success_resets_failure_streak():
    transport = ScriptedTransport({"/similarity": {"value": 0.5}}, fail_times=2)
    remote = client(transport)
    for _ in range(2):
        with pytest.raises(PerceptionError):
            remote.similarity("a", "b")
    assert remote.similarity("a", "b").value == pytest.approx(0.5)
    assert not remote.circuit_open
    transport.fail_times = 2
    with pytest.raises(PerceptionError):
        remote.similarity("a", "b")
    assert not remote.circuit_open
