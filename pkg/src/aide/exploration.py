"""Exploration policy: where to look when matching cannot ground the tool.

Routing is threshold-driven: matching strictly above ``m`` skips exploration
entirely; otherwise visible exploration runs when the wider top-2N match score
exceeds the strategy threshold (the tool is probably in view but degraded) and
invisible exploration runs when it does not (the tool is probably hidden in a
container).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .config import ConfigParams
from .ers import CROP_PAD_FRACTION, CandidatePool
from .geometry import Region, bounding_region
from .perception import (
    Detection,
    PerceptionBackend,
    PerceptionError,
    SceneFrame,
    ToolHypothesis,
    crop_reference,
)


class Strategy(str, Enum):
    NONE = "none"
    VISIBLE = "visible"
    INVISIBLE = "invisible"


class ExplorationImpossible(RuntimeError):
    """No usable candidates for the requested exploration strategy."""


@dataclass(frozen=True)
class ExplorationOutcome:
    kind: Strategy
    region: Region | None = None
    label: str | None = None

    def __post_init__(self) -> None:
        if self.kind is Strategy.NONE and self.region is not None:
            raise ValueError("no-exploration outcome cannot carry a region")
        if self.kind is not Strategy.NONE and self.region is None:
            raise ValueError(f"{self.kind.value} exploration requires a region")
        if self.kind is Strategy.INVISIBLE and self.label is None:
            raise ValueError("invisible exploration requires a label")


def choose_strategy(s_max: float, t_new: float, params: ConfigParams) -> Strategy:
    """Pure routing rule; boundaries are strict greater-than on both scores."""
    if s_max > params.m:
        return Strategy.NONE
    if t_new > params.strategy_threshold:
        return Strategy.VISIBLE
    return Strategy.INVISIBLE


def _clipped_square(center: tuple[float, float], px: int, frame: SceneFrame) -> Region:
    cx, cy = center
    return Region(
        max(int(round(cx - px)), 0),
        max(int(round(cy - px)), 0),
        max(int(round(cx + px)), 0),
        max(int(round(cy + px)), 0),
    ).clip(frame.width, frame.height)


def visible_explore(
    detections: list[Detection], frame: SceneFrame, params: ConfigParams
) -> Region:
    """Weighted square accumulation over low-rank detections.

    Each detection ranked N+1..2N (configurable upper bound) centers a square
    of half-side PX. Detections ranked N+1..N' that intersect the square
    contribute weight N' - rank. The winning square, together with every
    contributing box, defines the minimal bounding rectangle returned.
    Ties resolve to the candidate with the smaller rank, then smaller x_min.
    """
    lo, hi = params.N + 1, params.candidate_max_rank
    candidates = [d for d in detections if lo <= d.rank <= hi]
    if not candidates:
        raise ExplorationImpossible(
            f"no detections ranked {lo}..{hi} to seed exploration squares"
        )
    members_pool = [d for d in detections if lo <= d.rank <= params.N_prime]

    best_key: tuple[int, int, int] | None = None
    best_square: Region | None = None
    best_boxes: list[Region] = []
    for cand in candidates:
        square = _clipped_square(cand.box.center, params.PX, frame)
        members = [d for d in members_pool if d.box.intersects(square)]
        weight = sum(params.N_prime - d.rank for d in members)
        key = (-weight, cand.rank, cand.box.x_min)
        if best_key is None or key < best_key:
            best_key, best_square = key, square
            best_boxes = [d.box for d in members]

    return bounding_region([best_square] + best_boxes).clip(frame.width, frame.height)


def invisible_explore(
    frame: SceneFrame,
    instruction: str,
    pool: CandidatePool | None,
    params: ConfigParams,
    perception: PerceptionBackend,
) -> tuple[Region, str]:
    """Locate the container the required tool most plausibly hides in.

    The container label comes from the pool's unseen hints (instruction text
    matched against hint labels) when available, otherwise from the reasoner.
    The region is the best-matching container detection.
    """
    if not instruction:
        raise ValueError("instruction must be non-empty")
    hints = pool.unseen_hints if pool is not None else []
    if hints:
        best_label, best_score = hints[0][0], -1.0
        for hint_label, _ in hints:
            try:
                score = perception.similarity(instruction, hint_label).value
            except PerceptionError:
                continue
            if score > best_score:
                best_label, best_score = hint_label, score
        label = best_label
    else:
        label = perception.infer_unseen_label(instruction, frame)

    try:
        detections = perception.detect(frame, [label], params.N)
    except PerceptionError:
        detections = []
    if not detections:
        raise ExplorationImpossible(f"no {label!r} region detected in the scene")

    hint_images = [image for _, image in hints if image]
    if hint_images:
        best_box, best_score = detections[0].box, -1.0
        for det in detections:
            crop = crop_reference(frame, det.box, CROP_PAD_FRACTION)
            score = 0.0
            for img in hint_images:
                try:
                    score = max(score, perception.similarity(crop, img).value)
                except PerceptionError:
                    continue
            if score > best_score:
                best_box, best_score = det.box, score
        return best_box, label

    index = perception.select_candidate(ToolHypothesis(label=label), detections, frame)
    return detections[index].box, label
