from __future__ import annotations

import pytest
from worldkit import make_world, obj

from aide.affordance import vector
from aide.config import ConfigParams
from aide.ers import CandidatePool, Grounded, Novel, retrieve_candidates
from aide.exploration import ExplorationOutcome, Strategy
from aide.geometry import Region
from aide.mock import MockPerception
from aide.perception import Detection, SceneFrame, SimilarityScore
from aide.planner import (
    COMPLETED,
    FAILED,
    REASON_HUMAN_ABORT,
    REASON_REFORMULATION_LOOP,
    REASON_TIMEOUT,
    Approach,
    Manipulate,
    NoOp,
    PlannerState,
    PlanningFailure,
    Reformulate,
    RequestHuman,
    RUNNING,
    TaskInput,
    decide_motion,
    mm_cot,
    needs_msi,
    provide_human_answer,
    run_closed_loop,
    run_msi,
    step,
    validity_check,
)
from aide.simulator import ABSENT, OCCLUDED, observe
from aide.space import GroundingResult, InstructionRecord


class FixedSimilarity:
    """Perception stub: similarity always returns one fixed value."""

    def __init__(self, value):
        self.value = value

    def similarity(self, a, b):
        return SimilarityScore(self.value)


def fake_pool():
    result = GroundingResult(
        tool_label="cup",
        tool_image="tool:drink:cup",
        tool_region=Region(0, 0, 10, 10),
        operational_region=Region(0, 5, 10, 10),
        functional_region=Region(0, 0, 10, 5),
    )
    record = InstructionRecord(
        id="r0",
        text="t",
        instruction_affordance=vector([1.0]),
        tool_affordance=vector([1.0]),
        results=(result,),
    )
    return CandidatePool(
        anchor=record, candidates=[record], tool_images=[("r0", "tool:drink:cup")]
    )


def any_frame():
    return SceneFrame(image="frame:z:0", width=100, height=100, timestamp=0.0)


def detection(conf, rank=1):
    return Detection(label="cup", box=Region(0, 0, 10, 10), confidence=conf, rank=rank)


# --- validity ----------------------------------------------------------------


def test_validity_high_confidence_and_similarity(params):
    valid, score = validity_check(
        [detection(1.0)], fake_pool(), FixedSimilarity(1.0 - 1e-6), params, any_frame()
    )
    assert valid
    assert score == pytest.approx(2.0, abs=1e-5)


def test_validity_below_threshold_invalid(params):
    valid, score = validity_check(
        [detection(0.2)], fake_pool(), FixedSimilarity(0.25), params, any_frame()
    )
    assert not valid
    assert score == pytest.approx(0.45)


def test_validity_exact_boundary_is_valid(params):
    valid, score = validity_check(
        [detection(0.25)], fake_pool(), FixedSimilarity(0.25), params, any_frame()
    )
    assert valid
    assert score == pytest.approx(0.5)


def test_validity_zero_detections(params):
    valid, score = validity_check([], fake_pool(), FixedSimilarity(0.9), params, any_frame())
    assert not valid and score == 0.0


# --- msi trigger ---------------------------------------------------------------


def test_needs_msi_truth_table():
    state = PlannerState()
    assert needs_msi(state, Novel("x"), True)
    assert needs_msi(state, Novel("x"), False)
    assert needs_msi(state, fake_pool(), False)
    assert not needs_msi(state, fake_pool(), True)


# --- mm_cot ----------------------------------------------------------------------


def cup_world(**kwargs):
    defaults = dict(
        tool_table={"I am thirsty": "cup"},
        gt={"I am thirsty": "c1"},
    )
    defaults.update(kwargs)
    return make_world([obj("c1", "cup", "drink", 20.0, 28.0)], **defaults)


def test_mm_cot_happy_path(params):
    world = cup_world()
    mock = MockPerception(world, params, sigma=0.0)
    frame, projections = observe(world, params)
    result = mm_cot(TaskInput("I am thirsty", frame), params, mock)
    assert result.tool_label == "cup"
    assert result.tool_image == "tool:drink:cup"
    assert result.tool_region == projections[0].box
    assert result.unseen_region_label is None


def test_mm_cot_single_object_scene(params):
    world = cup_world()
    mock = MockPerception(world, params, sigma=0.0)
    frame, projections = observe(world, params)
    result = mm_cot(TaskInput("I am thirsty", frame), params, mock)
    assert result.tool_region == projections[0].box


def test_mm_cot_occluded_tool_embeds_exploration(params):
    world = make_world(
        [
            obj("f1", "fridge", "contain", 20.0, 24.0, w=4, h=4),
            obj("k1", "coke", "drink", 20.0, 24.0, w=1, h=1, visibility=OCCLUDED, container_id="f1"),
        ],
        instruction="I want something cold to drink",
        tool_table={"I want something cold to drink": "coke"},
        container_table={"I want something cold to drink": "fridge"},
    )
    mock = MockPerception(world, params, sigma=0.0)
    frame, projections = observe(world, params)
    result = mm_cot(TaskInput(world.instruction, frame), params, mock)
    assert result.unseen_region_label == "fridge"
    assert result.unseen_region_image == "container:fridge"
    fridge_box = next(p for p in projections if p.object_id == "f1").box
    assert result.tool_region == fridge_box


def test_mm_cot_override_region(params):
    world = cup_world()
    mock = MockPerception(world, params, sigma=0.0)
    frame, _ = observe(world, params)
    override = Region(10, 10, 50, 50)
    result = mm_cot(
        TaskInput("I am thirsty", frame), params, mock, override_label="cup",
        override_region=override,
    )
    assert result.tool_region == override


# --- run_msi -----------------------------------------------------------------------


def test_run_msi_inserts_retrievable_record(space, params):
    world = cup_world(tool_table={"brand new request": "cup", "I am thirsty": "cup"})
    mock = MockPerception(world, params, sigma=0.0)
    frame, _ = observe(world, params)
    clone = space.clone()
    state = PlannerState()
    result = run_msi(TaskInput("brand new request", frame), state, clone, params, mock)
    assert result.tool_label == "cup"
    assert clone.record_count == space.record_count + 1
    vec = mock.score_affordance("brand new request")
    hit, _ = clone.dfs_retrieve(vec, params.c)
    assert hit is not None


def test_run_msi_reasoner_miss_fails(space, params):
    world = make_world([obj("c1", "cup", "drink", 20.0, 28.0)])
    mock = MockPerception(world, params, sigma=0.0)
    frame, _ = observe(world, params)
    with pytest.raises(PlanningFailure):
        run_msi(TaskInput("unmapped", frame), PlannerState(), space.clone(), params, mock)


def test_run_msi_occluded_attaches_hint(space, params):
    world = make_world(
        [
            obj("f1", "fridge", "contain", 20.0, 24.0, w=4, h=4),
            obj("k1", "coke", "drink", 20.0, 24.0, w=1, h=1, visibility=OCCLUDED, container_id="f1"),
        ],
        instruction="I want something cold to drink",
        tool_table={"I want something cold to drink": "coke"},
        container_table={"I want something cold to drink": "fridge"},
    )
    mock = MockPerception(world, params, sigma=0.0)
    frame, _ = observe(world, params)
    clone = space.clone()
    result = run_msi(TaskInput(world.instruction, frame), PlannerState(), clone, params, mock)
    assert result.unseen_region_label == "fridge"
    inserted = [r for r in clone.iter_records() if r.id.startswith("msi-")]
    assert len(inserted) == 1
    assert inserted[0].results[0].unseen_region_label == "fridge"


# --- decide_motion ----------------------------------------------------------------


def grounded_outcome():
    result = GroundingResult(
        tool_label="cup",
        tool_image="tool:drink:cup",
        tool_region=Region(10, 10, 40, 40),
        operational_region=Region(10, 25, 40, 40),
        functional_region=Region(10, 10, 40, 25),
    )
    return Grounded(result=result, s_max=0.95)


def test_decide_grounded_near_manipulates_and_completes(params):
    state = PlannerState()
    command = decide_motion(grounded_outcome(), True, state, params)
    assert isinstance(command, Manipulate)
    assert state.status == COMPLETED
    result = grounded_outcome().result
    assert result.tool_region.contains(command.operational)
    assert result.tool_region.contains(command.functional)


def test_decide_grounded_far_approaches(params):
    state = PlannerState()
    command = decide_motion(grounded_outcome(), False, state, params)
    assert command == Approach(Region(10, 10, 40, 40))
    assert state.status == RUNNING


def test_decide_slow_stream_result_never_manipulates(params):
    state = PlannerState()
    command = decide_motion(grounded_outcome().result, True, state, params)
    assert isinstance(command, Approach)
    assert state.status == RUNNING


def test_decide_visible_approaches(params):
    outcome = ExplorationOutcome(kind=Strategy.VISIBLE, region=Region(0, 0, 50, 50))
    command = decide_motion(outcome, False, PlannerState(), params)
    assert command == Approach(Region(0, 0, 50, 50))


def test_decide_invisible_far_approaches_near_reformulates(params):
    outcome = ExplorationOutcome(
        kind=Strategy.INVISIBLE, region=Region(0, 0, 50, 50), label="fridge"
    )
    state = PlannerState()
    assert decide_motion(outcome, False, state, params) == Approach(Region(0, 0, 50, 50))
    assert state.subgoal_stack == []
    command = decide_motion(outcome, True, state, params)
    assert command == Reformulate("open the fridge", Region(0, 0, 50, 50))
    assert state.subgoal_stack == ["open the fridge"]


def test_decide_subgoal_pops_on_grounded_near(params):
    state = PlannerState(subgoal_stack=["open the fridge"])
    command = decide_motion(grounded_outcome(), True, state, params)
    assert isinstance(command, Approach)
    assert state.subgoal_stack == []
    assert state.status == RUNNING


def test_decide_reformulation_overflow_fails(params):
    outcome = ExplorationOutcome(
        kind=Strategy.INVISIBLE, region=Region(0, 0, 50, 50), label="fridge"
    )
    state = PlannerState(subgoal_stack=["a", "b", "c", "d"])
    command = decide_motion(outcome, True, state, params)
    assert isinstance(command, NoOp)
    assert state.status == FAILED
    assert state.fail_reason == REASON_REFORMULATION_LOOP


# --- step and the closed loop ----------------------------------------------------


def run_episode(world, space, params, seed=0, sigma=0.0, max_steps=200, answer=None):
    mock = MockPerception(world, params, seed=seed, sigma=sigma)
    return run_closed_loop(
        world.instruction,
        world,
        space.clone(),
        params,
        mock,
        max_steps=max_steps,
        answer_human=answer,
    )


def test_step_on_completed_state_is_noop(space, params):
    world = cup_world()
    mock = MockPerception(world, params, sigma=0.0)
    frame, _ = observe(world, params)
    state = PlannerState(status=COMPLETED)
    state2, command = step(state, TaskInput("I am thirsty", frame), space.clone(), params, mock)
    assert isinstance(command, NoOp)
    assert state2.status == COMPLETED


def test_episode_completes_with_single_manipulate(space, params):
    world = cup_world(instruction="I am thirsty")
    trace = run_episode(world, space, params)
    assert trace.status == COMPLETED
    manipulations = [r for r in trace.rows if r.command_kind == "manipulate"]
    assert len(manipulations) == 1
    final = manipulations[0]
    assert final.grounded_tool_box.contains(final.operational_box)
    assert final.grounded_tool_box.contains(final.functional_box)
    assert trace.manipulate_step == final.step


def test_tool_removal_triggers_msi_within_one_tick(space, params):
    world = cup_world(instruction="I am thirsty")
    mock = MockPerception(world, params, seed=0, sigma=0.0)

    def remove(w):
        w.objects["c1"].visibility = ABSENT

    trace = run_closed_loop(
        world.instruction,
        world,
        space.clone(),
        params,
        mock,
        max_steps=12,
        interventions={6: remove},
    )
    by_step = {r.step: r for r in trace.rows}
    assert by_step[5].validity >= params.validity_threshold
    assert by_step[6].validity < params.validity_threshold
    assert by_step[6].stream == "msi"


def test_msi_never_runs_twice_without_recovery(space, params):
    # Tool absent with no container mapping: the slow stream fails once, then
    # stays latched instead of thrashing.
    world = make_world(
        [obj("b1", "book", "misc", 18.0, 28.0)],
        instruction="I am thirsty",
        tool_table={"I am thirsty": "cup"},
    )
    trace = run_episode(world, space, params, max_steps=10)
    msi_steps = [r.step for r in trace.rows if r.stream == "msi"]
    assert len(msi_steps) <= 1


def test_stream_alternation_and_balanced_stack(space, params, worlds):
    from aide.simulator import fresh_world

    for world_id in ("occ_coke_fridge", "abs_cup", "far_pillow", "clear_hammer"):
        world = fresh_world(worlds[world_id])
        trace = run_episode(world, space, params)
        assert trace.status == COMPLETED
        streams = [r.stream for r in trace.rows]
        for previous, current in zip(streams, streams[1:]):
            assert not (previous == "msi" and current == "msi")
        pushes = sum(1 for r in trace.rows for e in r.events if e.startswith("subgoal-push"))
        pops = sum(1 for r in trace.rows for e in r.events if e == "subgoal-complete")
        assert pushes == pops
        manipulations = [r for r in trace.rows if r.command_kind == "manipulate"]
        assert len(manipulations) == 1


def test_trace_determinism(space, params, worlds):
    from aide.simulator import fresh_world

    def signature(trace):
        return [
            (r.step, r.stream, r.command_kind, r.command_region, r.validity, r.s_max, r.t_new)
            for r in trace.rows
        ]

    for world_id in ("clear_cup", "occ_tape_drawer"):
        runs = []
        for _ in range(2):
            world = fresh_world(worlds[world_id])
            runs.append(signature(run_episode(world, space, params, seed=5, sigma=0.5)))
        assert runs[0] == runs[1]


def test_timeout_when_tool_unreachable(space, params):
    # The only matching tool sits far outside the visible window and there is
    # no container to open; the episode must end with a timeout.
    slow = params.with_overrides(approach_speed=0.01)
    world = make_world(
        [obj("c1", "cup", "drink", 20.0, 25.0)],
        instruction="I am thirsty",
        tool_table={"I am thirsty": "cup"},
        gt={"I am thirsty": "c1"},
    )
    trace = run_episode(world, space, slow, max_steps=30)
    assert trace.status == FAILED
    assert trace.fail_reason == REASON_TIMEOUT


def test_human_recovery_resumes_and_completes(space, params):
    world = cup_world(tool_table={})  # reasoner knows nothing
    world.hint_table = {"I am thirsty": "cup"}
    answers = []

    def answer(prompt):
        answers.append(prompt)
        return "cup"

    trace = run_episode(world, space, params, answer=answer)
    assert answers, "expected a human prompt"
    assert trace.status == COMPLETED


def test_human_abort_on_empty_answer(space, params):
    world = cup_world(tool_table={})
    trace = run_episode(world, space, params, answer=lambda prompt: "")
    assert trace.status == FAILED
    assert trace.fail_reason == REASON_HUMAN_ABORT


def test_provide_human_answer_parses_region():
    state = PlannerState(status=FAILED, fail_reason="planning-error")
    assert provide_human_answer(state, "1,2,30,40")
    assert state.human_region == Region(1, 2, 30, 40)
    assert state.status == RUNNING

    state = PlannerState(status=FAILED, fail_reason="planning-error")
    assert provide_human_answer(state, "cup")
    assert state.human_override == "cup"

    state = PlannerState(status=FAILED, fail_reason="planning-error")
    assert not provide_human_answer(state, None)
    assert state.status == FAILED
