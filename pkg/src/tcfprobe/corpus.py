"""Corpus schema: subject-relation timelines with paraphrase patterns.

A corpus is a collection of subject-relation entries. Each entry carries a
strictly ordered entity timeline (the sequence index is the temporal order;
years are kept for binning only) and a set of prefix-style fill-in patterns
for the forward and backward probe directions.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .textnorm import normalize_name

ENTITY_TYPES = frozenset({
    "person", "movie", "album", "satellite", "software", "book",
    "vehicle", "song", "game", "location", "element",
})

YEAR_MIN = 1500
YEAR_MAX = 2030

PLACEHOLDER = "[X]"

CORPUS_VERSION = 1


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"

    def flipped(self) -> "Direction":
        return Direction.BACKWARD if self is Direction.FORWARD else Direction.FORWARD


class CorpusFormatError(Exception):
    """File is not structurally a corpus document (bad JSON, missing keys)."""


class SchemaViolationError(Exception):
    """Corpus parsed but violates one or more schema invariants."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        lines = "; ".join(str(v) for v in violations[:5])
        extra = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        super().__init__(f"{len(violations)} schema violation(s): {lines}{extra}")


class UnknownEntryError(KeyError):
    """Lookup of a subject-relation id that is not in the corpus."""


@dataclass(frozen=True)
class EntityRecord:
    name: str
    year: int
    entity_type: str


@dataclass(frozen=True)
class Pattern:
    template: str
    direction: Direction
    is_base: bool = False

    def fill(self, key_name: str) -> str:
        return self.template.replace(PLACEHOLDER, key_name)


@dataclass(frozen=True)
class SubjectRelationEntry:
    id: str
    subject: str
    relation: str
    domain_tag: str
    timeline: tuple[EntityRecord, ...]
    patterns: tuple[Pattern, ...]

    def patterns_in(self, direction: Direction) -> list[tuple[int, Pattern]]:
        """(pattern_index, pattern) for one direction, in stored order."""
        return [(i, p) for i, p in enumerate(self.patterns) if p.direction is direction]

    @property
    def base_pattern_forward(self) -> Pattern:
        return next(p for p in self.patterns if p.is_base and p.direction is Direction.FORWARD)

    @property
    def base_pattern_backward(self) -> Pattern:
        return next(p for p in self.patterns if p.is_base and p.direction is Direction.BACKWARD)


@dataclass(frozen=True)
class CandidateSet:
    sr_id: str
    candidates: frozenset[str]


@dataclass(frozen=True)
class Violation:
    entry_id: str
    invariant: str
    detail: str

    def __str__(self) -> str:
        return f"[{self.entry_id}] {self.invariant}: {self.detail}"


@dataclass(frozen=True)
class CorpusStats:
    n_pairs: int
    n_patterns: int
    n_forward: int
    n_backward: int
    avg_patterns_per_pair: float
    n_entities: int
    n_entity_types: int
    min_entities_per_pair: int
    max_entities_per_pair: int
    avg_entities_per_pair: float
    n_samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class Corpus:
    entries: tuple[SubjectRelationEntry, ...]
    version: int = CORPUS_VERSION
    _by_id: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._by_id.update({e.id: e for e in self.entries})

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, sr_id: str) -> bool:
        return sr_id in self._by_id

    def entry(self, sr_id: str) -> SubjectRelationEntry:
        try:
            return self._by_id[sr_id]
        except KeyError:
            raise UnknownEntryError(sr_id) from None


# ---------------------------------------------------------------------------
# Parsing / serialization
# ---------------------------------------------------------------------------

def _parse_entry(obj: dict, pos: int) -> SubjectRelationEntry:
    try:
        timeline = tuple(
            EntityRecord(name=str(t["name"]), year=int(t["year"]), entity_type=str(t["entity_type"]))
            for t in obj["timeline"]
        )
        patterns = tuple(
            Pattern(
                template=str(p["template"]),
                direction=Direction(p["direction"]),
                is_base=bool(p.get("is_base", False)),
            )
            for p in obj["patterns"]
        )
        return SubjectRelationEntry(
            id=str(obj["id"]),
            subject=str(obj["subject"]),
            relation=str(obj["relation"]),
            domain_tag=str(obj["domain_tag"]),
            timeline=timeline,
            patterns=patterns,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusFormatError(f"entry #{pos}: {exc!r}") from exc


def parse_corpus(doc: dict) -> Corpus:
    """Build a Corpus from a decoded JSON document. Structural checks only;
    invariant checks are :func:`validate`'s job."""
    if not isinstance(doc, dict) or "entries" not in doc:
        raise CorpusFormatError("top-level object must contain an 'entries' array")
    version = doc.get("version", CORPUS_VERSION)
    if version != CORPUS_VERSION:
        raise CorpusFormatError(f"unsupported corpus version {version!r}")
    entries = tuple(_parse_entry(e, i) for i, e in enumerate(doc["entries"]))
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise CorpusFormatError(f"duplicate entry ids: {dupes}")
    return Corpus(entries=entries, version=version)


def corpus_to_dict(corpus: Corpus) -> dict:
    return {
        "version": corpus.version,
        "entries": [
            {
                "id": e.id,
                "subject": e.subject,
                "relation": e.relation,
                "domain_tag": e.domain_tag,
                "timeline": [
                    {"name": t.name, "year": t.year, "entity_type": t.entity_type}
                    for t in e.timeline
                ],
                "patterns": [
                    {"template": p.template, "direction": p.direction.value, "is_base": p.is_base}
                    for p in e.patterns
                ],
            }
            for e in corpus.entries
        ],
    }


def save_resource(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(corpus_to_dict(corpus), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_resource(path: str | Path, strict: bool = True) -> Corpus:
    """Load a corpus JSON file.

    With ``strict`` (the default) a corpus that violates any schema
    invariant is rejected with :class:`SchemaViolationError`; pass
    ``strict=False`` to obtain the corpus anyway (e.g. to report on it).
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusFormatError(f"cannot read corpus at {path}: {exc}") from exc
    corpus = parse_corpus(doc)
    if strict:
        violations = validate(corpus)
        if violations:
            raise SchemaViolationError(violations)
    return corpus


def bundled_fixture_path() -> Path:
    """Path of the small corpus shipped with the package."""
    return Path(__file__).parent / "data" / "mini_corpus.json"


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(corpus: Corpus) -> list[Violation]:
    """Check every entry against the schema invariants.

    Violations are data, not exceptions: an empty list means the corpus is
    valid.
    """
    out: list[Violation] = []

    def bad(entry_id: str, invariant: str, detail: str) -> None:
        out.append(Violation(entry_id, invariant, detail))

    for e in corpus.entries:
        if len(e.timeline) < 2:
            bad(e.id, "timeline has >= 2 entries", f"got {len(e.timeline)}")
        years = [t.year for t in e.timeline]
        if any(b < a for a, b in zip(years, years[1:])):
            bad(e.id, "timeline years non-decreasing", f"years {years}")
        seen: dict[str, str] = {}
        for t in e.timeline:
            if not (YEAR_MIN <= t.year <= YEAR_MAX):
                bad(e.id, f"year within [{YEAR_MIN}, {YEAR_MAX}]", f"{t.name!r} has year {t.year}")
            if t.entity_type not in ENTITY_TYPES:
                bad(e.id, "entity_type is a known tag", f"{t.name!r} has type {t.entity_type!r}")
            key = normalize_name(t.name)
            if key in seen:
                bad(e.id, "entity names unique", f"{t.name!r} collides with {seen[key]!r}")
            else:
                seen[key] = t.name

        n_fwd = n_bwd = base_fwd = base_bwd = 0
        for p in e.patterns:
            n = p.template.count(PLACEHOLDER)
            if n != 1:
                bad(e.id, "exactly one placeholder", f"{p.template!r} has {n} occurrences of {PLACEHOLDER}")
            if "[Y]" in p.template:
                bad(e.id, "exactly one placeholder", f"{p.template!r} contains stray [Y]")
            if p.direction is Direction.FORWARD:
                n_fwd += 1
                base_fwd += p.is_base
            else:
                n_bwd += 1
                base_bwd += p.is_base
        if n_fwd < 1:
            bad(e.id, "at least one forward pattern", "none present")
        if n_bwd < 1:
            bad(e.id, "at least one backward pattern", "none present")
        if n_fwd >= 1 and base_fwd != 1:
            bad(e.id, "exactly one forward base pattern", f"got {base_fwd}")
        if n_bwd >= 1 and base_bwd != 1:
            bad(e.id, "exactly one backward base pattern", f"got {base_bwd}")

    return out


# ---------------------------------------------------------------------------
# Derived data
# ---------------------------------------------------------------------------

def candidate_set(corpus: Corpus, sr_id: str) -> CandidateSet:
    """Closed-vocabulary answer space: the normalized timeline names."""
    e = corpus.entry(sr_id)
    return CandidateSet(sr_id=sr_id, candidates=frozenset(normalize_name(t.name) for t in e.timeline))


def stats(corpus: Corpus) -> CorpusStats:
    """Deterministic corpus-level counts.

    ``n_samples`` is the number of enumerable probes:
    sum over entries of (n_forward + n_backward patterns) * (timeline - 1).
    """
    n_pairs = len(corpus.entries)
    n_fwd = sum(len(e.patterns_in(Direction.FORWARD)) for e in corpus.entries)
    n_bwd = sum(len(e.patterns_in(Direction.BACKWARD)) for e in corpus.entries)
    n_patterns = n_fwd + n_bwd
    sizes = [len(e.timeline) for e in corpus.entries]
    n_entities = sum(sizes)
    types = {t.entity_type for e in corpus.entries for t in e.timeline}
    n_samples = sum(
        (len(e.patterns_in(Direction.FORWARD)) + len(e.patterns_in(Direction.BACKWARD)))
        * (len(e.timeline) - 1)
        for e in corpus.entries
    )
    return CorpusStats(
        n_pairs=n_pairs,
        n_patterns=n_patterns,
        n_forward=n_fwd,
        n_backward=n_bwd,
        avg_patterns_per_pair=n_patterns / n_pairs if n_pairs else 0.0,
        n_entities=n_entities,
        n_entity_types=len(types),
        min_entities_per_pair=min(sizes) if sizes else 0,
        max_entities_per_pair=max(sizes) if sizes else 0,
        avg_entities_per_pair=n_entities / n_pairs if n_pairs else 0.0,
        n_samples=n_samples,
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def vertical_split(corpus: Corpus, test_ratio: float, seed: int) -> tuple[Corpus, Corpus]:
    """Partition entries into (train, test) by whole subject-relation pair.

    |test| = round-half-up(test_ratio * n_pairs). The shuffle is keyed on
    sorted entry ids, so the split is a pure function of (corpus, ratio,
    seed) regardless of entry order in the file.
    """
    if not 0.0 < test_ratio < 1.0:
        raise ValueError(f"test_ratio must be in (0, 1), got {test_ratio}")
    if len(corpus.entries) < 2:
        raise ValueError("corpus must have at least 2 entries to split")
    ids = sorted(e.id for e in corpus.entries)
    rng = random.Random(f"vertical-split|{seed}")
    rng.shuffle(ids)
    n_test = _round_half_up(test_ratio * len(ids))
    test_ids = set(ids[:n_test])
    train = tuple(e for e in corpus.entries if e.id not in test_ids)
    test = tuple(e for e in corpus.entries if e.id in test_ids)
    return Corpus(entries=train, version=corpus.version), Corpus(entries=test, version=corpus.version)
