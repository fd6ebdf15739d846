"""Reward scoring for external RL trainers.

Two reward variants over two tasks (k1 sentence completion, k2 paraphrase
prediction). The discrete variant mixes the task components with weight
alpha: total = (1 - alpha) * temporal + alpha * consistency. The smooth
variant keeps +1 for an exact temporal match but penalizes a wrong answer
by its relative distance along the timeline, and adds the consistency
component unweighted. Requests carrying both tasks are supported; a
single-task request scores the absent component as 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO

from .corpus import Corpus, UnknownEntryError
from .textnorm import normalize_name

TASKS = ("k1", "k2", "both")
MODES = ("discrete", "smooth")

DEFAULT_ALPHA = 0.66


class MalformedRequestError(ValueError):
    def __init__(self, message: str, request_id=None):
        super().__init__(message)
        self.request_id = request_id


@dataclass(frozen=True)
class RewardRequest:
    id: str
    task: str = "k1"
    generated: str = ""
    gold: str = ""
    sr_id: str | None = None
    key_time_index: int | None = None
    gold_time_index: int | None = None
    timeline_end: int | None = None
    mode: str = "discrete"
    alpha: float = DEFAULT_ALPHA
    k2_generated: str | None = None
    k2_gold: str | None = None


@dataclass(frozen=True)
class RewardScore:
    id: str
    total: float
    temporal_component: float | None
    consistency_component: float | None
    matched: bool
    t_og: int | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "total": self.total,
            "temporal_component": self.temporal_component,
            "consistency_component": self.consistency_component,
            "matched": self.matched,
            "t_og": self.t_og,
        }


def locate_time_step(corpus: Corpus, sr_id: str, text: str) -> int | None:
    """Timeline index whose normalized name equals normalize(text), if any."""
    wanted = normalize_name(text)
    for idx, record in enumerate(corpus.entry(sr_id).timeline):
        if normalize_name(record.name) == wanted:
            return idx
    return None


def smooth_penalty(t_ol: int, t_og: int, t_n: int) -> float:
    """Relative timeline distance of a wrong answer from the gold one.

    Overshoots are scaled by the room above the gold step, undershoots by
    the room below it. A zero denominator (gold at the boundary being
    missed toward the boundary side) yields the maximal penalty 1.
    """
    distance = abs(t_ol - t_og)
    denom = (t_n - t_ol) if t_og > t_ol else t_ol
    if denom <= 0:
        return 1.0
    return distance / denom


def _validate(req: RewardRequest) -> None:
    if req.task not in TASKS:
        raise MalformedRequestError(f"task must be one of {TASKS}, got {req.task!r}", req.id)
    if req.mode not in MODES:
        raise MalformedRequestError(f"mode must be one of {MODES}, got {req.mode!r}", req.id)
    if req.mode == "discrete" and not 0.0 <= req.alpha <= 1.0:
        raise MalformedRequestError(f"alpha must be in [0, 1], got {req.alpha}", req.id)
    if req.task == "both" and (req.k2_generated is None or req.k2_gold is None):
        raise MalformedRequestError("task 'both' requires k2_generated and k2_gold", req.id)


def _bool_match(generated: str, gold: str, request_id) -> float:
    values = []
    for value in (generated, gold):
        flag = str(value).strip().lower()
        if flag not in ("true", "false"):
            raise MalformedRequestError(f"k2 values must be 'true'/'false', got {value!r}", request_id)
        values.append(flag)
    return 1.0 if values[0] == values[1] else 0.0


def _k1_discrete(req: RewardRequest) -> float:
    return 1.0 if normalize_name(req.generated) == normalize_name(req.gold) else 0.0


def _k2_component(req: RewardRequest) -> float:
    if req.task == "both":
        return _bool_match(req.k2_generated, req.k2_gold, req.id)
    return _bool_match(req.generated, req.gold, req.id)


def discrete_reward(req: RewardRequest) -> RewardScore:
    """Per-task exact-match components mixed per the alpha weighting."""
    _validate(req)
    r_t = _k1_discrete(req) if req.task in ("k1", "both") else None
    r_c = _k2_component(req) if req.task in ("k2", "both") else None
    total = (1.0 - req.alpha) * (r_t or 0.0) + req.alpha * (r_c or 0.0)
    matched = all(c == 1.0 for c in (r_t, r_c) if c is not None)
    return RewardScore(
        id=req.id,
        total=total,
        temporal_component=r_t,
        consistency_component=r_c,
        matched=matched,
    )


def _k1_smooth(req: RewardRequest, corpus: Corpus) -> tuple[float, int | None]:
    if normalize_name(req.generated) == normalize_name(req.gold):
        return 1.0, req.gold_time_index
    if req.sr_id is None or req.gold_time_index is None or req.timeline_end is None:
        raise MalformedRequestError(
            "smooth k1 requests need sr_id, gold_time_index and timeline_end", req.id
        )
    if not 0 <= req.gold_time_index <= req.timeline_end:
        raise MalformedRequestError(
            f"gold_time_index {req.gold_time_index} outside [0, {req.timeline_end}]", req.id
        )
    try:
        t_og = locate_time_step(corpus, req.sr_id, req.generated)
    except UnknownEntryError:
        raise MalformedRequestError(f"unknown sr_id {req.sr_id!r}", req.id) from None
    if t_og is None:
        return -1.0, None  # off-corpus generation: maximal penalty
    return -smooth_penalty(req.gold_time_index, t_og, req.timeline_end), t_og


def smooth_reward(req: RewardRequest, corpus: Corpus) -> RewardScore:
    """Distance-scaled temporal component plus unweighted consistency."""
    _validate(req)
    r_t, t_og = (None, None)
    if req.task in ("k1", "both"):
        r_t, t_og = _k1_smooth(req, corpus)
    r_c = _k2_component(req) if req.task in ("k2", "both") else None
    total = (r_t or 0.0) + (r_c or 0.0)
    matched = all(c == 1.0 for c in (r_t, r_c) if c is not None)
    return RewardScore(
        id=req.id,
        total=total,
        temporal_component=r_t,
        consistency_component=r_c,
        matched=matched,
        t_og=t_og,
    )


def score(req: RewardRequest, corpus: Corpus | None = None) -> RewardScore:
    _validate(req)
    if req.mode == "discrete":
        return discrete_reward(req)
    if corpus is None:
        raise MalformedRequestError("smooth mode requires a corpus", req.id)
    return smooth_reward(req, corpus)


def score_batch(requests: list[RewardRequest], corpus: Corpus | None = None) -> list[RewardScore]:
    """Element-wise, order-preserving scoring. The first malformed request
    aborts the batch with its id in the error."""
    return [score(req, corpus) for req in requests]


# ---------------------------------------------------------------------------
# Line protocol
# ---------------------------------------------------------------------------

_REQUEST_FIELDS = {
    "id", "task", "generated", "gold", "sr_id", "key_time_index",
    "gold_time_index", "timeline_end", "mode", "alpha", "k2_generated", "k2_gold",
}


def request_from_dict(obj: dict) -> RewardRequest:
    if not isinstance(obj, dict):
        raise MalformedRequestError(f"request must be an object, got {type(obj).__name__}")
    if "id" not in obj:
        raise MalformedRequestError("request missing 'id'")
    unknown = set(obj) - _REQUEST_FIELDS
    if unknown:
        raise MalformedRequestError(f"unknown fields {sorted(unknown)}", obj.get("id"))
    try:
        return RewardRequest(**obj)
    except TypeError as exc:
        raise MalformedRequestError(str(exc), obj.get("id")) from exc


def serve(input_stream: IO[str], output_stream: IO[str], corpus: Corpus | None = None) -> int:
    """Score JSONL requests line by line until end of input.

    Emits exactly one JSON line per input line, in order, flushing each.
    A malformed line produces an error object and the stream continues.
    """
    for line in input_stream:
        stripped = line.strip()
        try:
            if not stripped:
                raise MalformedRequestError("empty line")
            result = score(request_from_dict(json.loads(stripped)), corpus)
            payload = result.to_dict()
        except json.JSONDecodeError as exc:
            payload = {"id": None, "error": f"invalid json: {exc.msg}"}
        except MalformedRequestError as exc:
            payload = {"id": exc.request_id, "error": str(exc)}
        output_stream.write(json.dumps(payload) + "\n")
        output_stream.flush()
    return 0
