"""Probe enumeration, prompt rendering, and instruction-data generation.

A probe asks a model to continue a prefix pattern filled with a key entity;
the expected continuation is the timeline neighbor of the key (next entity
for forward probes, previous for backward). Instruction data covers two
tasks: k1 (sentence completion) and k2 (binary paraphrase prediction).
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass

from .corpus import Corpus, Direction, EntityRecord, Pattern, SubjectRelationEntry

DEFAULT_INSTRUCTION = "complete the given sentence with the correct phrase"
K2_INSTRUCTION = "predict true or false whether the two given sentences are paraphrases of each other"

CONTEXT_MODES = ("subject_relation_line", "none")


class InsufficientShotPoolError(ValueError):
    """Fewer same-entry probes available than the requested shot count."""


class InsufficientPatternsError(ValueError):
    """Not enough distinct patterns to draw the requested pairs."""


@dataclass(frozen=True)
class ProbeInstance:
    sr_id: str
    pattern_index: int
    direction: Direction
    key_object: EntityRecord
    expected_value: EntityRecord
    key_time_index: int
    expected_time_index: int

    @property
    def key(self) -> tuple[str, int, int, str]:
        """Unique identity of this probe within a run."""
        return (self.sr_id, self.pattern_index, self.key_time_index, self.direction.value)


@dataclass(frozen=True)
class PromptText:
    instruction: str
    shots: tuple[tuple[str, str], ...]
    query: str
    full_text: str


@dataclass(frozen=True)
class InstructionSample:
    task: str  # "k1" | "k2"
    instruction: str
    input: str
    context: str | None
    output: str

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "instruction": self.instruction,
            "input": self.input,
            "context": self.context,
            "output": self.output,
        }


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def _entry_probes(entry: SubjectRelationEntry) -> list[ProbeInstance]:
    out = []
    j = len(entry.timeline)
    for pat_idx, pat in enumerate(entry.patterns):
        if pat.direction is Direction.FORWARD:
            positions = [(t, t + 1) for t in range(j - 1)]
        else:
            positions = [(t, t - 1) for t in range(1, j)]
        for t, exp in positions:
            out.append(
                ProbeInstance(
                    sr_id=entry.id,
                    pattern_index=pat_idx,
                    direction=pat.direction,
                    key_object=entry.timeline[t],
                    expected_value=entry.timeline[exp],
                    key_time_index=t,
                    expected_time_index=exp,
                )
            )
    return out


def enumerate_probes(corpus: Corpus, direction_filter: Direction | None = None) -> list[ProbeInstance]:
    """All probe instances in deterministic (entry id, pattern index, t) order."""
    probes: list[ProbeInstance] = []
    for entry in sorted(corpus.entries, key=lambda e: e.id):
        probes.extend(_entry_probes(entry))
    probes.sort(key=lambda p: (p.sr_id, p.pattern_index, p.key_time_index))
    if direction_filter is not None:
        probes = [p for p in probes if p.direction is direction_filter]
    return probes


# ---------------------------------------------------------------------------
# Prompt rendering
# ---------------------------------------------------------------------------

def _compose(instruction: str, shots: tuple[tuple[str, str], ...], query: str) -> str:
    parts = f"{instruction}: " if instruction else ""
    for shot_query, shot_answer in shots:
        parts += f"{shot_query} => {shot_answer}. "
    parts += query
    if shots:
        parts += " =>"
    return parts


def zero_shot_prompt(pattern: Pattern, key: EntityRecord, instruction: str = DEFAULT_INSTRUCTION) -> PromptText:
    query = pattern.fill(key.name)
    return PromptText(instruction=instruction, shots=(), query=query, full_text=_compose(instruction, (), query))


def render_prompt(
    instance: ProbeInstance,
    corpus: Corpus,
    k: int = 0,
    seed: int = 0,
    instruction: str = DEFAULT_INSTRUCTION,
) -> PromptText:
    """Render the probe as prompt text, optionally with k in-context shots.

    Shots are drawn uniformly without replacement from the probes of the
    same entry and direction, excluding every probe that shares this
    instance's (key, expected) pair so the answer is never leaked. Fixed
    (instance, k, seed) always produces the same text.
    """
    entry = corpus.entry(instance.sr_id)
    pattern = entry.patterns[instance.pattern_index]
    query = pattern.fill(instance.key_object.name)
    shots: tuple[tuple[str, str], ...] = ()
    if k > 0:
        pool = [
            p
            for p in _entry_probes(entry)
            if p.direction is instance.direction
            and (p.key_time_index, p.expected_time_index)
            != (instance.key_time_index, instance.expected_time_index)
        ]
        if k > len(pool):
            raise InsufficientShotPoolError(
                f"{instance.sr_id}/{instance.direction.value}: need {k} shots, pool has {len(pool)}"
            )
        rng = random.Random(
            f"shots|{seed}|{instance.sr_id}|{instance.pattern_index}"
            f"|{instance.key_time_index}|{instance.direction.value}"
        )
        drawn = rng.sample(pool, k)
        shots = tuple(
            (entry.patterns[p.pattern_index].fill(p.key_object.name), p.expected_value.name)
            for p in drawn
        )
    return PromptText(
        instruction=instruction,
        shots=shots,
        query=query,
        full_text=_compose(instruction, shots, query),
    )


# ---------------------------------------------------------------------------
# Instruction-tuning data (tasks k1 and k2)
# ---------------------------------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _context_for(entry: SubjectRelationEntry, mode: str) -> str | None:
    if mode == "none":
        return None
    if mode == "subject_relation_line":
        return f"{entry.subject} - {entry.relation}"
    raise ValueError(f"unknown context_mode {mode!r}; expected one of {CONTEXT_MODES}")


def _k2_input(s1: str, s2: str) -> str:
    return f"sentence 1: {s1}. sentence 2: {s2}"


def gen_it_samples(
    corpus: Corpus,
    n_k2_pairs: int = 0,
    negative_ratio: float = 0.5,
    context_mode: str = "subject_relation_line",
    seed: int = 0,
    hard_negative_ratio: float = 0.5,
) -> list[InstructionSample]:
    """Build the instruction dataset: one k1 sample per probe plus sampled
    k2 sentence pairs.

    A k2 pair is labeled true only when both sentences come from the same
    entry, same direction, and same key with different patterns. Negatives
    are a mix of hard (same entry and key, flipped direction) and easy
    (different key or entry) pairs in ``hard_negative_ratio`` proportion.
    """
    for name, value in (("negative_ratio", negative_ratio), ("hard_negative_ratio", hard_negative_ratio)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {value}")

    samples: list[InstructionSample] = []
    for probe in enumerate_probes(corpus):
        entry = corpus.entry(probe.sr_id)
        pattern = entry.patterns[probe.pattern_index]
        samples.append(
            InstructionSample(
                task="k1",
                instruction=DEFAULT_INSTRUCTION,
                input=pattern.fill(probe.key_object.name),
                context=_context_for(entry, context_mode),
                output=probe.expected_value.name,
            )
        )

    if n_k2_pairs <= 0:
        return samples

    rng = random.Random(f"itdata|{seed}")
    entries = sorted(corpus.entries, key=lambda e: e.id)
    n_neg = _round_half_up(negative_ratio * n_k2_pairs)
    n_hard = _round_half_up(hard_negative_ratio * n_neg)
    n_easy = n_neg - n_hard
    n_true = n_k2_pairs - n_neg

    def filled(entry: SubjectRelationEntry, pat_idx: int, key_idx: int) -> str:
        return entry.patterns[pat_idx].fill(entry.timeline[key_idx].name)

    def random_query() -> tuple[str, int, int]:
        entry = rng.choice(entries)
        pat_idx = rng.randrange(len(entry.patterns))
        key_idx = rng.randrange(len(entry.timeline))
        return entry.id, pat_idx, key_idx

    for _ in range(n_true):
        pool = [
            (e, d)
            for e in entries
            for d in (Direction.FORWARD, Direction.BACKWARD)
            if len(e.patterns_in(d)) >= 2
        ]
        entry, direction = rng.choice(pool)
        key_idx = rng.randrange(len(entry.timeline))
        (i1, _), (i2, _) = rng.sample(entry.patterns_in(direction), 2)
        samples.append(
            InstructionSample(
                task="k2",
                instruction=K2_INSTRUCTION,
                input=_k2_input(filled(entry, i1, key_idx), filled(entry, i2, key_idx)),
                context=None,
                output="true",
            )
        )

    for _ in range(n_hard):
        entry = rng.choice(entries)
        key_idx = rng.randrange(len(entry.timeline))
        i1, _ = rng.choice(entry.patterns_in(Direction.FORWARD))
        i2, _ = rng.choice(entry.patterns_in(Direction.BACKWARD))
        samples.append(
            InstructionSample(
                task="k2",
                instruction=K2_INSTRUCTION,
                input=_k2_input(filled(entry, i1, key_idx), filled(entry, i2, key_idx)),
                context=None,
                output="false",
            )
        )

    for _ in range(n_easy):
        first = random_query()
        second = random_query()
        while (first[0], first[2]) == (second[0], second[2]):
            second = random_query()
        e1, p1, k1 = first
        e2, p2, k2 = second
        samples.append(
            InstructionSample(
                task="k2",
                instruction=K2_INSTRUCTION,
                input=_k2_input(
                    filled(corpus.entry(e1), p1, k1), filled(corpus.entry(e2), p2, k2)
                ),
                context=None,
                output="false",
            )
        )

    return samples


# ---------------------------------------------------------------------------
# Paraphrase pairs for the divergence study
# ---------------------------------------------------------------------------

def sample_paraphrase_pairs(
    corpus: Corpus,
    sr_id: str,
    key_index: int,
    direction: Direction,
    mode: str,
    n: int,
    seed: int = 0,
    instruction: str = "",
) -> list[tuple[PromptText, PromptText]]:
    """Draw n distinct paraphrase prompt pairs for one key entity.

    positive: both members use the requested direction, distinct patterns.
    agnostic: the second member is a direction-flipped pattern (hard
    negative). Prompts default to the bare filled sentence (no instruction).
    """
    entry = corpus.entry(sr_id)
    key = entry.timeline[key_index]
    same = entry.patterns_in(direction)
    flipped = entry.patterns_in(direction.flipped())
    if mode == "positive":
        pool = list(itertools.combinations(same, 2))
    elif mode == "agnostic":
        pool = [(a, b) for a in same for b in flipped]
    else:
        raise ValueError(f"unknown mode {mode!r}; expected 'positive' or 'agnostic'")
    if n > len(pool):
        raise InsufficientPatternsError(
            f"{sr_id}/{direction.value}/{mode}: {n} pairs requested, only {len(pool)} available"
        )
    rng = random.Random(f"pairs|{seed}|{sr_id}|{key_index}|{direction.value}|{mode}")
    drawn = rng.sample(pool, n)
    return [
        (zero_shot_prompt(p1, key, instruction), zero_shot_prompt(p2, key, instruction))
        for (_, p1), (_, p2) in drawn
    ]
