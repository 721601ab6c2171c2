"""Planner behavior when the perception backend fails mid-episode."""

from __future__ import annotations

from worldkit import make_world, obj

from aide.ers import NeedsExploration, match_tool, retrieve_candidates
from aide.mock import MockPerception
from aide.perception import PerceptionError
from aide.planner import run_closed_loop
from aide.simulator import observe


class FlakyBackend:
    """Delegates to the mock but fails selected capabilities."""

    def __init__(self, inner, broken=()):
        self._inner = inner
        self.broken = set(broken)

    def __getattr__(self, name):
        if name in self.broken:
            def explode(*args, **kwargs):
                raise PerceptionError(f"{name} backend unreachable")

            return explode
        return getattr(self._inner, name)


def cup_world():
    return make_world(
        [obj("c1", "cup", "drink", 20.0, 28.0)],
        tool_table={"I am thirsty": "cup"},
        gt={"I am thirsty": "c1"},
    )


def test_detect_failure_is_treated_as_zero_detections(space, params):
    world = cup_world()
    mock = MockPerception(world, params, sigma=0.0)
    flaky = FlakyBackend(mock, broken={"detect"})
    frame, _ = observe(world, params)
    vec = mock.score_affordance("I am thirsty")
    pool = retrieve_candidates(space, "I am thirsty", vec, params)
    outcome = match_tool(frame, pool, params, flaky)
    assert isinstance(outcome, NeedsExploration)
    assert outcome.s_max == 0.0 and outcome.t_new == 0.0
    assert outcome.detections == ()


def test_episode_survives_similarity_outage(space, params):
    # Similarity failures degrade scores to zero: no grounding, no crash; the
    # episode ends in a controlled failure rather than an exception.
    world = cup_world()
    mock = MockPerception(world, params, sigma=0.0)
    flaky = FlakyBackend(mock, broken={"similarity"})
    trace = run_closed_loop(
        world.instruction, world, space.clone(), params, flaky, max_steps=20
    )
    assert trace.status == "failed"
    assert trace.steps >= 1


def test_episode_survives_total_perception_outage(space, params):
    world = cup_world()
    mock = MockPerception(world, params, sigma=0.0)
    flaky = FlakyBackend(
        mock, broken={"detect", "similarity", "score_affordance", "propose_tool"}
    )
    trace = run_closed_loop(
        world.instruction, world, space.clone(), params, flaky, max_steps=10
    )
    assert trace.status == "failed"
    assert trace.fail_reason in ("planning-error", "timeout", "exploration-impossible")
