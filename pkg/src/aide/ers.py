"""Retrieval-then-match grounding.

Given an instruction's affordance vector, retrieve a candidate pool from the
relationship space (DFS within radius ``c``, subcluster expansion within
``d``), then try to ground the tool in the scene: detect with the pool's
vocabulary, compare candidate crops against the pool's tool images, and either
emit a complete grounding result (highest similarity strictly above ``m``) or
hand the routing scores to the exploration policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .affordance import AffordanceVector
from .config import ConfigParams
from .geometry import Region, vertical_halves
from .perception import (
    Detection,
    PerceptionBackend,
    PerceptionError,
    SceneFrame,
    crop_reference,
)
from .space import GroundingResult, InstructionRecord, RelationshipSpace

PART_VOCABULARY = ("handle", "body")

CROP_PAD_FRACTION = 0.05


@dataclass(frozen=True)
class Novel:
    """Retrieval found nothing within radius c: the task is new to the space."""

    instruction: str


@dataclass
class CandidatePool:
    anchor: InstructionRecord
    candidates: list[InstructionRecord]
    tool_images: list[tuple[str, str]] = field(default_factory=list)
    unseen_hints: list[tuple[str, str]] = field(default_factory=list)

    def tool_labels(self) -> list[str]:
        seen: dict[str, None] = {}
        for record in self.candidates:
            for result in record.results:
                seen.setdefault(result.tool_label, None)
        return sorted(seen)

    def distinct_images(self) -> list[str]:
        """Tool image references without duplicates, in first-seen order."""
        seen: dict[str, None] = {}
        for _, image in self.tool_images:
            seen.setdefault(image, None)
        return list(seen)


@dataclass(frozen=True)
class Grounded:
    result: GroundingResult
    s_max: float
    detections: tuple[Detection, ...] = ()


@dataclass(frozen=True)
class NeedsExploration:
    pool: CandidatePool
    s_max: float
    t_new: float
    detections: tuple[Detection, ...] = ()


MatchOutcome = Grounded | NeedsExploration


def retrieve_candidates(
    space: RelationshipSpace,
    instruction: str,
    instruction_vector: AffordanceVector,
    params: ConfigParams,
) -> CandidatePool | Novel:
    anchor, _ = space.dfs_retrieve(instruction_vector, params.c)
    if anchor is None:
        return Novel(instruction=instruction)
    candidates = space.candidate_set(anchor, params.d)
    tool_images: list[tuple[str, str]] = []
    hints: dict[tuple[str, str], None] = {}
    for record in candidates:
        for result in record.results:
            tool_images.append((record.id, result.tool_image))
            if result.unseen_region_label is not None:
                hints.setdefault(
                    (result.unseen_region_label, result.unseen_region_image), None
                )
    return CandidatePool(
        anchor=anchor,
        candidates=candidates,
        tool_images=tool_images,
        unseen_hints=list(hints),
    )


def match_tool(
    frame: SceneFrame,
    pool: CandidatePool,
    params: ConfigParams,
    perception: PerceptionBackend,
) -> MatchOutcome:
    """Detect pool-vocabulary candidates and similarity-match their crops.

    ``s_max`` ranges over the top-N detections, ``t_new`` over the top-2N; the
    full ranked list (up to N') rides along for the exploration policy.
    """
    vocabulary = pool.tool_labels()
    fetch = max(params.N_prime, 2 * params.N, params.candidate_max_rank)
    try:
        detections = tuple(perception.detect(frame, vocabulary, fetch))
    except PerceptionError:
        # Unreachable backend degrades to an empty detection response.
        detections = ()
    if not detections:
        return NeedsExploration(pool=pool, s_max=0.0, t_new=0.0, detections=())
    images = pool.distinct_images()

    def best_match(rank_cap: int) -> tuple[float, Detection | None]:
        best_score, best_det = 0.0, None
        for det in detections[:rank_cap]:
            crop = crop_reference(frame, det.box, CROP_PAD_FRACTION)
            for image in images:
                try:
                    score = perception.similarity(crop, image).value
                except PerceptionError:
                    continue
                if score > best_score:
                    best_score, best_det = score, det
        return best_score, best_det

    s_max, best = best_match(params.N)
    if s_max > params.m and best is not None:
        operational, functional = ground_regions(frame, best, pool, params, perception)
        result = GroundingResult(
            tool_label=best.label,
            tool_image=crop_reference(frame, best.box, CROP_PAD_FRACTION),
            tool_region=best.box,
            operational_region=operational,
            functional_region=functional,
        )
        return Grounded(result=result, s_max=s_max, detections=detections)

    t_new, _ = best_match(2 * params.N)
    return NeedsExploration(pool=pool, s_max=s_max, t_new=t_new, detections=detections)


def ground_regions(
    frame: SceneFrame,
    tool: Detection,
    pool: CandidatePool,
    params: ConfigParams,
    perception: PerceptionBackend,
) -> tuple[Region, Region]:
    """Locate the operational and functional sub-regions of a grounded tool.

    Part detections are restricted to the (padded) tool box and matched against
    the pool's exemplar part crops; with no part detections the region proposer
    fallback splits the tool box.
    """
    frame_box = Region(0, 0, frame.width, frame.height)
    if not frame_box.contains(tool.box):
        raise ValueError("tool box must lie within the frame")
    search = tool.box.pad(CROP_PAD_FRACTION, frame.width, frame.height)
    try:
        part_detections = perception.detect(frame, list(PART_VOCABULARY), params.N_prime)
    except PerceptionError:
        part_detections = []
    parts = [det for det in part_detections if search.contains(det.box)]
    if not parts:
        try:
            return perception.segment_regions(tool, frame)
        except PerceptionError:
            lower, upper = vertical_halves(tool.box)
            return lower, upper

    images = pool.distinct_images()
    op_exemplars = [f"{image}#op" for image in images]
    fn_exemplars = [f"{image}#fn" for image in images]

    def pick(exemplars: list[str]) -> Region:
        best_score, best_box = -1.0, parts[0].box
        for det in parts:
            crop = crop_reference(frame, det.box, CROP_PAD_FRACTION)
            score = 0.0
            for exemplar in exemplars:
                try:
                    score = max(score, perception.similarity(crop, exemplar).value)
                except PerceptionError:
                    continue
            if score > best_score:
                best_score, best_box = score, det.box
        return best_box

    def clipped(box: Region) -> Region:
        inter = box.intersection(tool.box)
        return inter if inter is not None and inter.area > 0 else tool.box

    return clipped(pick(op_exemplars)), clipped(pick(fn_exemplars))


def ers_pipeline(
    frame: SceneFrame,
    instruction: str,
    space: RelationshipSpace,
    params: ConfigParams,
    perception: PerceptionBackend,
) -> MatchOutcome | Novel:
    """Retrieve, match, and ground in one pass over a single frame."""
    vector = perception.score_affordance(instruction)
    pool = retrieve_candidates(space, instruction, vector, params)
    if isinstance(pool, Novel):
        return pool
    return match_tool(frame, pool, params, perception)
