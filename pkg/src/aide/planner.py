"""Dual-stream closed-loop planner.

The fast stream (adm) runs every tick: cached retrieval, detect-and-match
grounding, validity checking, exploration routing and a motion decision. The
slow stream (msi) is invoked once per failure event, when retrieval reports a
novel task or the scene holds no valid tool-related object; it runs the
multi-step reasoning pipeline, stores the result in the relationship space and
hands control back to the fast stream.

Motion strategy: approach the grounded tool or visible-exploration region when
distant; when an invisible-exploration target is reached, push an
"open the <container>" subgoal and plan it with the same machinery before
resuming the original instruction; when the grounded tool is reached,
manipulate its operational and functional regions and complete the episode.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .affordance import label_class
from .config import ConfigParams
from .ers import (
    CandidatePool,
    Grounded,
    MatchOutcome,
    NeedsExploration,
    Novel,
    match_tool,
    retrieve_candidates,
)
from .exploration import (
    ExplorationImpossible,
    ExplorationOutcome,
    Strategy,
    choose_strategy,
    invisible_explore,
    visible_explore,
)
from .geometry import Region, vertical_halves
from .perception import (
    Detection,
    PerceptionBackend,
    PerceptionError,
    SceneFrame,
    ToolHypothesis,
    crop_reference,
)
from .simulator import World, apply, gt_projection, observe, run_intervention
from .space import GroundingResult, InstructionRecord, RelationshipSpace

RUNNING = "running"
COMPLETED = "completed"
FAILED = "failed"

STREAM_ADM = "adm"
STREAM_MSI = "msi"

REASON_TIMEOUT = "timeout"
REASON_PLANNING_ERROR = "planning-error"
REASON_REFORMULATION_LOOP = "reformulation-loop"
REASON_HUMAN_ABORT = "human-abort"
REASON_EXPLORATION_IMPOSSIBLE = "exploration-impossible"


# --- commands ---------------------------------------------------------------


@dataclass(frozen=True)
class Approach:
    region: Region


@dataclass(frozen=True)
class Reformulate:
    subgoal: str
    key_region: Region


@dataclass(frozen=True)
class Manipulate:
    operational: Region
    functional: Region


@dataclass(frozen=True)
class RequestHuman:
    prompt: str


@dataclass(frozen=True)
class NoOp:
    pass


MotionCommand = Approach | Reformulate | Manipulate | RequestHuman | NoOp


@dataclass(frozen=True)
class TaskInput:
    instruction: str
    frame: SceneFrame

    def __post_init__(self) -> None:
        if not self.instruction:
            raise ValueError("instruction must be non-empty")


class PlanningFailure(RuntimeError):
    """The reasoning pipeline cannot produce a plan; human recovery is needed."""

    def __init__(self, message: str, prompt: str):
        super().__init__(message)
        self.prompt = prompt


@dataclass
class TickDiagnostics:
    """Per-tick facts surfaced for tracing; cleared at the start of each tick."""

    s_max: float = 0.0
    t_new: float = 0.0
    near: bool = False
    active_instruction: str = ""
    grounded_tool_box: Region | None = None
    operational_box: Region | None = None
    functional_box: Region | None = None
    explored_box: Region | None = None
    explored_label: str | None = None
    events: list[str] = field(default_factory=list)


@dataclass
class PlannerState:
    stream: str = STREAM_ADM
    pools: dict[str, CandidatePool] = field(default_factory=dict)
    subgoal_stack: list[str] = field(default_factory=list)
    last_validity: float = 0.0
    episode_step: int = 0
    status: str = RUNNING
    fail_reason: str | None = None
    # Once the slow stream has run for a failure event it must not run again
    # until the event resolves; latched per active instruction.
    msi_latch: set[str] = field(default_factory=set)
    human_override: str | None = None
    human_region: Region | None = None
    pending_prompt: str | None = None
    last_container: tuple[Region, str] | None = None
    msi_count: int = 0
    last_diag: TickDiagnostics = field(default_factory=TickDiagnostics)


# --- single checks -----------------------------------------------------------


def validity_check(
    detections: list[Detection],
    pool: CandidatePool,
    perception: PerceptionBackend,
    params: ConfigParams,
    frame: SceneFrame,
) -> tuple[bool, float]:
    """Best detection confidence plus its best pool-image similarity.

    A score strictly below the validity threshold means no valid tool-related
    object is in view; exactly at the threshold still counts as valid.
    """
    if not detections:
        return False, 0.0
    best = detections[0]
    crop = crop_reference(frame, best.box)
    best_sim = 0.0
    for image in pool.distinct_images():
        try:
            best_sim = max(best_sim, perception.similarity(crop, image).value)
        except PerceptionError:
            continue
    score = best.confidence + best_sim
    return score >= params.validity_threshold, score


def needs_msi(
    state: PlannerState, retrieval_outcome: CandidatePool | Novel, validity: bool
) -> bool:
    """Pure trigger rule; the once-per-failure-event latch lives in ``step``."""
    return isinstance(retrieval_outcome, Novel) or not validity


# --- slow stream ---------------------------------------------------------------


def _catalog_image(label: str) -> str:
    cls = label_class(label) or "misc"
    return f"tool:{cls}:{label}"


def mm_cot(
    task: TaskInput,
    params: ConfigParams,
    perception: PerceptionBackend,
    override_label: str | None = None,
    override_region: Region | None = None,
) -> GroundingResult:
    """Multi-step grounding: propose, detect, select, segment.

    The selected candidate must also pass a similarity check against the
    hypothesis; otherwise the exploration policy runs inside the slow stream
    under the same entry conditions as the fast stream, and the result carries
    either the exploration rectangle or the unseen-container hint. Human
    recovery may pre-seed the label or the tool region.
    """
    if override_label is not None:
        hypothesis = ToolHypothesis(label=override_label)
    else:
        hypothesis = perception.propose_tool(task.instruction, task.frame)
    image = _catalog_image(hypothesis.label)

    def grounded(box: Region) -> GroundingResult:
        synthetic = Detection(label=hypothesis.label, box=box, confidence=1.0, rank=1)
        try:
            operational, functional = perception.segment_regions(synthetic, task.frame)
            operational = operational.intersection(box) or box
            functional = functional.intersection(box) or box
        except PerceptionError:
            operational, functional = vertical_halves(box)
        return GroundingResult(
            tool_label=hypothesis.label,
            tool_image=image,
            tool_region=box,
            operational_region=operational,
            functional_region=functional,
        )

    if override_region is not None:
        return grounded(override_region)

    fetch = max(params.N_prime, 2 * params.N, params.candidate_max_rank)
    try:
        detections = perception.detect(task.frame, [hypothesis.label], fetch)
    except PerceptionError:
        detections = []

    def crop_score(det: Detection) -> float:
        crop = crop_reference(task.frame, det.box)
        try:
            return perception.similarity(crop, image).value
        except PerceptionError:
            return 0.0

    if detections:
        index = perception.select_candidate(
            hypothesis, detections[: params.N], task.frame
        )
        tool = detections[index]
        if crop_score(tool) > params.strategy_threshold:
            return grounded(tool.box)

    # Nothing plausibly matches: explore, routed by the same threshold the
    # fast stream uses over the wider candidate set.
    t_new = max((crop_score(d) for d in detections[: 2 * params.N]), default=0.0)
    if t_new > params.strategy_threshold:
        try:
            region = visible_explore(detections, task.frame, params)
            operational, functional = vertical_halves(region)
            return GroundingResult(
                tool_label=hypothesis.label,
                tool_image=image,
                tool_region=region,
                operational_region=operational,
                functional_region=functional,
            )
        except ExplorationImpossible:
            pass
    region, unseen_label = invisible_explore(
        task.frame, task.instruction, None, params, perception
    )
    operational, functional = vertical_halves(region)
    return GroundingResult(
        tool_label=hypothesis.label,
        tool_image=image,
        tool_region=region,
        operational_region=operational,
        functional_region=functional,
        unseen_region_label=unseen_label,
        unseen_region_image=f"container:{unseen_label}",
    )


def run_msi(
    task: TaskInput,
    state: PlannerState,
    space: RelationshipSpace,
    params: ConfigParams,
    perception: PerceptionBackend,
) -> GroundingResult:
    """One slow-stream pass: ground, score, and store into the space."""
    override_label = state.human_override
    override_region = state.human_region
    state.human_override = None
    state.human_region = None
    try:
        result = mm_cot(task, params, perception, override_label, override_region)
        instruction_vector = perception.score_affordance(task.instruction)
        tool_vector = perception.score_affordance(result.tool_image)
    except (PerceptionError, ExplorationImpossible) as exc:
        raise PlanningFailure(
            str(exc),
            prompt=(
                f"planning failed for {task.instruction!r} ({exc}); "
                "provide a tool label or region x0,y0,x1,y1"
            ),
        ) from exc
    record = InstructionRecord(
        id=f"msi-{state.episode_step:04d}-{state.msi_count:02d}",
        text=task.instruction,
        instruction_affordance=instruction_vector,
        tool_affordance=tool_vector,
        results=(result,),
    )
    space.insert(record)
    state.msi_count += 1
    return result


# --- motion decision -----------------------------------------------------------


def decide_motion(
    outcome: Grounded | GroundingResult | ExplorationOutcome,
    robot_near: bool,
    state: PlannerState,
    params: ConfigParams,
) -> MotionCommand:
    """Turn one planning outcome into a motion command, updating episode state.

    Grounded and near completes the episode via manipulation, unless a subgoal
    is active, in which case the subgoal is considered achieved and popped so
    the original instruction resumes. An invisible target that has been
    reached becomes an "open the <container>" subgoal.
    """
    if isinstance(outcome, (Grounded, GroundingResult)):
        # A bare GroundingResult comes from the slow stream; the fast stream
        # confirms it through match_tool on the next tick before any
        # manipulation, so slow-stream ticks only ever approach.
        confirmed = isinstance(outcome, Grounded)
        result = outcome.result if confirmed else outcome
        if not robot_near or not confirmed:
            return Approach(result.tool_region)
        if state.subgoal_stack:
            state.subgoal_stack.pop()
            state.last_diag.events.append("subgoal-complete")
            return Approach(result.tool_region)
        state.status = COMPLETED
        return Manipulate(result.operational_region, result.functional_region)

    if outcome.kind is Strategy.VISIBLE:
        return Approach(outcome.region)

    # Invisible exploration target.
    if not robot_near:
        return Approach(outcome.region)
    if len(state.subgoal_stack) >= params.max_subgoal_depth:
        state.status = FAILED
        state.fail_reason = REASON_REFORMULATION_LOOP
        return NoOp()
    subgoal = f"open the {outcome.label}"
    state.subgoal_stack.append(subgoal)
    state.last_diag.events.append(f"subgoal-push:{subgoal}")
    return Reformulate(subgoal, outcome.region)


# --- one tick -------------------------------------------------------------------


def step(
    state: PlannerState,
    task: TaskInput,
    space: RelationshipSpace,
    params: ConfigParams,
    perception: PerceptionBackend,
) -> tuple[PlannerState, MotionCommand]:
    """One full planner tick over the current frame."""
    if state.status != RUNNING:
        return state, NoOp()
    state.episode_step += 1
    state.stream = STREAM_ADM
    frame = task.frame
    active = state.subgoal_stack[-1] if state.subgoal_stack else task.instruction
    diag = TickDiagnostics(active_instruction=active)
    state.last_diag = diag

    # Retrieval, cached per active instruction after the first hit.
    pool = state.pools.get(active)
    retrieval: CandidatePool | Novel
    if pool is None:
        try:
            vector = perception.score_affordance(active)
            got = retrieve_candidates(space, active, vector, params)
        except PerceptionError:
            got = Novel(active)
        if isinstance(got, Novel):
            retrieval = got
        else:
            state.pools[active] = got
            pool = got
            retrieval = got
    else:
        retrieval = pool

    match: MatchOutcome | None = None
    valid = False
    if pool is not None:
        match = match_tool(frame, pool, params, perception)
        diag.s_max = match.s_max
        valid, score = validity_check(
            list(match.detections), pool, perception, params, frame
        )
        state.last_validity = score
        if valid:
            state.msi_latch.discard(active)
    else:
        state.last_validity = 0.0

    outcome: Grounded | GroundingResult | ExplorationOutcome | None = None

    if needs_msi(state, retrieval, valid) and active not in state.msi_latch:
        state.stream = STREAM_MSI
        state.msi_latch.add(active)
        diag.events.append("msi")
        try:
            result = run_msi(
                TaskInput(active, frame), state, space, params, perception
            )
        except PlanningFailure as exc:
            state.status = FAILED
            state.fail_reason = REASON_PLANNING_ERROR
            state.pending_prompt = exc.prompt
            return state, RequestHuman(exc.prompt)
        try:
            vector = perception.score_affordance(active)
            refreshed = retrieve_candidates(space, active, vector, params)
        except PerceptionError:
            refreshed = Novel(active)
        if not isinstance(refreshed, Novel):
            state.pools[active] = refreshed
        if result.unseen_region_label is not None:
            outcome = ExplorationOutcome(
                kind=Strategy.INVISIBLE,
                region=result.tool_region,
                label=result.unseen_region_label,
            )
            state.last_container = (result.tool_region, result.unseen_region_label)
        else:
            outcome = result
    elif match is not None:
        if isinstance(match, Grounded):
            outcome = match
        else:
            diag.t_new = match.t_new
            strategy = choose_strategy(match.s_max, match.t_new, params)
            if strategy is Strategy.VISIBLE:
                try:
                    region = visible_explore(list(match.detections), frame, params)
                    outcome = ExplorationOutcome(kind=Strategy.VISIBLE, region=region)
                except ExplorationImpossible:
                    strategy = Strategy.INVISIBLE
            if strategy is Strategy.INVISIBLE:
                try:
                    region, label = invisible_explore(
                        frame, active, match.pool, params, perception
                    )
                    outcome = ExplorationOutcome(
                        kind=Strategy.INVISIBLE, region=region, label=label
                    )
                    state.last_container = (region, label)
                except (ExplorationImpossible, PerceptionError):
                    if state.last_container is not None:
                        region, label = state.last_container
                        outcome = ExplorationOutcome(
                            kind=Strategy.INVISIBLE, region=region, label=label
                        )
                        diag.events.append("explore-fallback:last-container")
                    else:
                        state.status = FAILED
                        state.fail_reason = REASON_EXPLORATION_IMPOSSIBLE
                        return state, NoOp()
    else:
        # Novel task and the slow stream already ran for this failure event.
        state.status = FAILED
        state.fail_reason = REASON_PLANNING_ERROR
        return state, RequestHuman(
            f"no plan available for {active!r}; provide a tool label"
        )

    if isinstance(outcome, (Grounded, GroundingResult)):
        result = outcome.result if isinstance(outcome, Grounded) else outcome
        target = result.tool_region
        diag.grounded_tool_box = target
        diag.operational_box = result.operational_region
        diag.functional_box = result.functional_region
    else:
        target = outcome.region
        diag.explored_box = outcome.region
        diag.explored_label = outcome.label

    diag.near = frame.world_distance_to(target) <= params.r_near
    command = decide_motion(outcome, diag.near, state, params)
    return state, command


def provide_human_answer(state: PlannerState, answer: str | None) -> bool:
    """Feed a human recovery answer back into the planner.

    Returns True when the episode resumes. ``None`` keeps the failure, an
    empty string aborts, a ``x0,y0,x1,y1`` answer seeds the tool region and
    anything else seeds the tool label.
    """
    state.pending_prompt = None
    if answer is None:
        return False
    answer = answer.strip()
    if not answer:
        state.status = FAILED
        state.fail_reason = REASON_HUMAN_ABORT
        return False
    parts = answer.split(",")
    if len(parts) == 4:
        try:
            coords = [int(p) for p in parts]
            state.human_region = Region(*coords)
        except (ValueError, TypeError):
            state.human_override = answer
    else:
        state.human_override = answer
    state.status = RUNNING
    state.fail_reason = None
    # A human answer starts a fresh failure event for the slow stream.
    state.msi_latch.clear()
    return True


# --- episode loop ---------------------------------------------------------------


@dataclass
class TickEvent:
    step: int
    stream: str
    command_kind: str
    active_instruction: str
    validity: float
    s_max: float
    t_new: float
    latency_ms: float
    near: bool
    command_region: Region | None = None
    grounded_tool_box: Region | None = None
    operational_box: Region | None = None
    functional_box: Region | None = None
    explored_box: Region | None = None
    gt_box: Region | None = None
    gt_handle: Region | None = None
    gt_body: Region | None = None
    gt_container_box: Region | None = None
    correct: bool = False
    events: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        def box(r: Region | None):
            return r.as_list() if r is not None else None

        return {
            "step": self.step,
            "stream": self.stream,
            "command": self.command_kind,
            "instruction": self.active_instruction,
            "validity": round(self.validity, 6),
            "s_max": round(self.s_max, 6),
            "t_new": round(self.t_new, 6),
            "latency_ms": round(self.latency_ms, 3),
            "near": self.near,
            "command_region": box(self.command_region),
            "tool_box": box(self.grounded_tool_box),
            "operational_box": box(self.operational_box),
            "functional_box": box(self.functional_box),
            "explored_box": box(self.explored_box),
            "gt_box": box(self.gt_box),
            "gt_container_box": box(self.gt_container_box),
            "correct": self.correct,
            "events": list(self.events),
        }


@dataclass
class EpisodeTrace:
    world_id: str
    instruction: str
    category: str
    rows: list[TickEvent] = field(default_factory=list)
    status: str = RUNNING
    fail_reason: str | None = None
    manipulate_step: int | None = None
    wall_seconds: float = 0.0

    @property
    def steps(self) -> int:
        return len(self.rows)

    def valid_rows(self) -> list[TickEvent]:
        """Ticks from start up to (excluding) the manipulation tick."""
        if self.manipulate_step is None:
            return list(self.rows)
        return [r for r in self.rows if r.step < self.manipulate_step]


def _command_region(command: MotionCommand) -> Region | None:
    if isinstance(command, Approach):
        return command.region
    if isinstance(command, Reformulate):
        return command.key_region
    if isinstance(command, Manipulate):
        return command.operational.union_bounds(command.functional)
    return None


def run_closed_loop(
    instruction: str,
    world: World,
    space: RelationshipSpace,
    params: ConfigParams,
    perception: PerceptionBackend,
    max_steps: int = 400,
    answer_human: Callable[[str], str | None] | None = None,
    interventions: dict[int, Callable[[World], None]] | None = None,
) -> EpisodeTrace:
    """Alternate planner ticks with world updates until the episode settles.

    ``answer_human`` resolves RequestHuman prompts (batch runs answer from the
    world's hint table via the harness; None leaves the failure in place).
    ``interventions`` maps tick indices to world mutations, used for error
    injection. Exhausting ``max_steps`` fails the episode with a timeout.
    """
    trace = EpisodeTrace(
        world_id=world.world_id, instruction=instruction, category=world.category
    )
    state = PlannerState()
    answered_prompts: set[str] = set()
    t_start = time.perf_counter()

    for index in range(max_steps):
        run_intervention(world, world.tick, interventions)
        frame, projections = observe(world, params)
        t0 = time.perf_counter()
        state, command = step(
            state, TaskInput(instruction, frame), space, params, perception
        )
        latency_ms = (time.perf_counter() - t0) * 1000.0

        if isinstance(command, RequestHuman) and answer_human is not None:
            if command.prompt not in answered_prompts:
                answered_prompts.add(command.prompt)
                provide_human_answer(state, answer_human(command.prompt))

        apply_events = apply(world, command, params)
        diag = state.last_diag
        gt_box, gt_handle, gt_body, gt_container = gt_projection(world, projections)
        target = _command_region(command)
        reference = gt_box if gt_box is not None else gt_container
        correct = bool(target and reference and target.intersects(reference))
        trace.rows.append(
            TickEvent(
                step=index,
                stream=state.stream,
                command_kind=type(command).__name__.lower(),
                active_instruction=diag.active_instruction or instruction,
                validity=state.last_validity,
                s_max=diag.s_max,
                t_new=diag.t_new,
                latency_ms=latency_ms,
                near=diag.near,
                command_region=target,
                grounded_tool_box=diag.grounded_tool_box,
                operational_box=diag.operational_box,
                functional_box=diag.functional_box,
                explored_box=diag.explored_box,
                gt_box=gt_box,
                gt_handle=gt_handle,
                gt_body=gt_body,
                gt_container_box=gt_container,
                correct=correct,
                events=tuple(diag.events + apply_events),
            )
        )
        if isinstance(command, Manipulate):
            trace.manipulate_step = index
        if state.status != RUNNING:
            break

    trace.wall_seconds = time.perf_counter() - t_start
    if state.status == RUNNING:
        state.status = FAILED
        state.fail_reason = REASON_TIMEOUT
    trace.status = state.status
    trace.fail_reason = state.fail_reason
    return trace


def write_trace(trace: EpisodeTrace, path: str | Path, episode_id: str | None = None) -> None:
    """Append one event per line; each line carries the episode identity."""
    tag = episode_id or f"{trace.world_id}"
    with Path(path).open("a", encoding="utf-8") as fh:
        for row in trace.rows:
            doc = {"episode": tag, "world": trace.world_id, **row.to_dict()}
            fh.write(json.dumps(doc) + "\n")
        fh.write(
            json.dumps(
                {
                    "episode": tag,
                    "world": trace.world_id,
                    "final": True,
                    "status": trace.status,
                    "fail_reason": trace.fail_reason,
                    "steps": trace.steps,
                    "wall_seconds": round(trace.wall_seconds, 6),
                }
            )
            + "\n"
        )
