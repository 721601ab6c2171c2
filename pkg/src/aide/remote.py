"""Generic remote perception client.

One request/response contract over HTTP covers every capability; which models
sit behind the endpoints is deployment configuration, not code. Capabilities
map onto three paths:

  /detect      detect, segment_regions
  /similarity  similarity
  /reason      propose_tool, select_candidate, score_affordance,
               infer_unseen_label

After three consecutive transport failures the circuit opens and every call
raises ``CircuitOpenError`` until ``reset()`` or a successful probe.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from typing import Callable

from .affordance import AffordanceVector
from .geometry import Region
from .perception import (
    Detection,
    PerceptionBackend,
    PerceptionError,
    SceneFrame,
    SimilarityScore,
    ToolHypothesis,
)

Transport = Callable[[str, dict], dict]

_FAILURES_TO_OPEN = 3


class CircuitOpenError(PerceptionError):
    """Too many consecutive transport failures; calls are short-circuited."""


def _http_transport(timeout_ms: float, api_key: str | None) -> Transport:
    def call(url: str, payload: dict) -> dict:
        data = json.dumps(payload).encode("utf-8")
        request = urllib.request.Request(
            url, data=data, headers={"Content-Type": "application/json"}
        )
        if api_key:
            request.add_header("Authorization", f"Bearer {api_key}")
        try:
            with urllib.request.urlopen(request, timeout=timeout_ms / 1000.0) as response:
                return json.loads(response.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise PerceptionError(f"remote call to {url} failed: {exc}") from exc

    return call


def _frame_payload(frame: SceneFrame) -> dict:
    return {
        "image": frame.image,
        "width": frame.width,
        "height": frame.height,
        "timestamp": frame.timestamp,
    }


class RemotePerception(PerceptionBackend):
    def __init__(
        self,
        base_url: str,
        api_key_env: str = "AIDE_API_KEY",
        timeout_ms: float = 2000.0,
        transport: Transport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout_ms = timeout_ms
        self._transport = transport or _http_transport(timeout_ms, os.environ.get(api_key_env))
        self._consecutive_failures = 0

    def reset(self) -> None:
        self._consecutive_failures = 0

    @property
    def circuit_open(self) -> bool:
        return self._consecutive_failures >= _FAILURES_TO_OPEN

    def _call(self, path: str, payload: dict) -> dict:
        if self.circuit_open:
            raise CircuitOpenError(
                f"circuit open after {self._consecutive_failures} consecutive failures"
            )
        try:
            response = self._transport(f"{self.base_url}{path}", payload)
        except PerceptionError:
            self._consecutive_failures += 1
            raise
        self._consecutive_failures = 0
        if not isinstance(response, dict):
            raise PerceptionError(f"malformed response from {path}")
        return response

    # -- capabilities -----------------------------------------------------

    def detect(self, frame: SceneFrame, vocabulary: list[str], k: int) -> list[Detection]:
        response = self._call(
            "/detect",
            {"op": "detect", "frame": _frame_payload(frame), "vocabulary": vocabulary, "k": k},
        )
        detections = []
        for i, item in enumerate(response.get("detections", [])[:k]):
            detections.append(
                Detection(
                    label=item["label"],
                    box=Region(*item["box"]),
                    confidence=float(item["confidence"]),
                    rank=int(item.get("rank", i + 1)),
                )
            )
        return detections

    def similarity(self, a: str, b: str) -> SimilarityScore:
        response = self._call("/similarity", {"op": "similarity", "a": a, "b": b})
        return SimilarityScore(min(float(response["value"]), 1.0 - 1e-9))

    def propose_tool(self, instruction: str, frame: SceneFrame) -> ToolHypothesis:
        response = self._call(
            "/reason",
            {"op": "propose_tool", "instruction": instruction, "frame": _frame_payload(frame)},
        )
        return ToolHypothesis(
            label=response["label"], attributes=tuple(response.get("attributes", ()))
        )

    def select_candidate(
        self, hypothesis: ToolHypothesis, candidates: list[Detection], frame: SceneFrame
    ) -> int:
        response = self._call(
            "/reason",
            {
                "op": "select_candidate",
                "label": hypothesis.label,
                "attributes": list(hypothesis.attributes),
                "candidates": [
                    {"label": d.label, "box": d.box.as_list(), "confidence": d.confidence}
                    for d in candidates
                ],
                "frame": _frame_payload(frame),
            },
        )
        index = int(response["index"])
        if not (0 <= index < len(candidates)):
            raise PerceptionError(f"candidate index {index} out of range")
        return index

    def segment_regions(self, tool: Detection, frame: SceneFrame) -> tuple[Region, Region]:
        response = self._call(
            "/detect",
            {
                "op": "segment_regions",
                "box": tool.box.as_list(),
                "label": tool.label,
                "frame": _frame_payload(frame),
            },
        )
        return Region(*response["operational"]), Region(*response["functional"])

    def score_affordance(self, subject: str) -> AffordanceVector:
        response = self._call("/reason", {"op": "score_affordance", "subject": subject})
        return AffordanceVector(tuple(float(v) for v in response["scores"]))

    def infer_unseen_label(self, instruction: str, frame: SceneFrame) -> str:
        response = self._call(
            "/reason",
            {"op": "infer_unseen_label", "instruction": instruction, "frame": _frame_payload(frame)},
        )
        return str(response["label"])
