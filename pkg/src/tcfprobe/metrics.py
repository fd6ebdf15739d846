"""The seven probe metrics, with direction splits and breakdowns.

Factuality is soft accuracy: the longest contiguous word run shared by the
gold answer and the generation, as a fraction of the gold length.
Consistency is the fraction of response pairs within one (entry, key,
direction) paraphrase group that are exactly equal after normalization.
The composite metric credits factuality only when the whole group agrees.
"""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

from .backends import ModelResponse
from .corpus import Direction
from .probegen import ProbeInstance
from .textnorm import normalize_words

METRIC_NAMES = (
    "temp_fact",
    "temp_cons",
    "temp_cons_fact",
    "succ_patt",
    "succ_objs",
    "know_cons",
    "unk_cons",
)

SPLIT_ORDER = ("avg", "bwd", "fwd")


class EmptyResultsError(ValueError):
    pass


class GroupSizeError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeResult:
    instance: ProbeInstance
    response: ModelResponse
    closed_vocab_choice: str | None = None

    def effective_words(self) -> tuple[str, ...]:
        """Words the metrics compare: the closed-vocab choice when present,
        the normalized completion otherwise."""
        if self.closed_vocab_choice is not None:
            return tuple(normalize_words(self.closed_vocab_choice))
        return tuple(self.response.normalized)


@dataclass(frozen=True)
class DirectionSplit:
    avg: float | None
    fwd: float | None
    bwd: float | None


@dataclass(frozen=True)
class MetricValues:
    temp_fact: DirectionSplit
    temp_cons: DirectionSplit
    temp_cons_fact: DirectionSplit
    succ_patt: DirectionSplit
    succ_objs: DirectionSplit
    know_cons: DirectionSplit
    unk_cons: DirectionSplit
    n_probes: int
    n_groups: int


@dataclass(frozen=True)
class MetricReport:
    overall: MetricValues
    by_year_bin: dict[str, MetricValues]
    by_entity_type: dict[str, MetricValues]
    bin_size: int


# ---------------------------------------------------------------------------
# Kernel scores
# ---------------------------------------------------------------------------

def soft_accuracy(gold: tuple[str, ...] | list[str], generated: tuple[str, ...] | list[str]) -> float:
    """Longest contiguous run of gold words appearing contiguously and in
    order in the generation, divided by the gold length."""
    if not gold:
        raise ValueError("gold word list must be non-empty")
    best = 0
    prev = [0] * (len(generated) + 1)
    for g in gold:
        cur = [0] * (len(generated) + 1)
        for j, h in enumerate(generated, 1):
            if g == h:
                cur[j] = prev[j - 1] + 1
                if cur[j] > best:
                    best = cur[j]
        prev = cur
    return best / len(gold)


def group_consistency(responses: list[tuple[str, ...]]) -> float:
    """Fraction of unordered response pairs that are exactly equal."""
    n = len(responses)
    if n < 2:
        raise GroupSizeError(f"consistency needs >= 2 responses, got {n}")
    equal_pairs = sum(c * (c - 1) // 2 for c in Counter(responses).values())
    return equal_pairs / (n * (n - 1) // 2)


def temporally_consistent_factuality(gold: tuple[str, ...], responses: list[tuple[str, ...]]) -> float:
    """Soft accuracy of the shared response if the group is unanimous, else 0."""
    if len(responses) < 2:
        raise GroupSizeError(f"group needs >= 2 responses, got {len(responses)}")
    first = responses[0]
    if any(r != first for r in responses[1:]):
        return 0.0
    return soft_accuracy(gold, first)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _split(fwd: float | None, bwd: float | None) -> DirectionSplit:
    present = [v for v in (fwd, bwd) if v is not None]
    avg = sum(present) / len(present) if present else None
    return DirectionSplit(avg=avg, fwd=fwd, bwd=bwd)


def _metric_values(results: list[ProbeResult]) -> MetricValues:
    per_dir_soft: dict[Direction, list[float]] = defaultdict(list)
    groups: dict[tuple[str, int, Direction], list[tuple[int, tuple[str, ...], tuple[str, ...]]]] = defaultdict(list)
    pattern_seen: dict[Direction, set[tuple[str, int]]] = defaultdict(set)
    pattern_correct: dict[Direction, set[tuple[str, int]]] = defaultdict(set)
    object_seen: dict[Direction, set[tuple[str, int]]] = defaultdict(set)
    object_correct: dict[Direction, set[tuple[str, int]]] = defaultdict(set)

    for r in results:
        inst = r.instance
        gold = tuple(normalize_words(inst.expected_value.name))
        words = r.effective_words()
        d = inst.direction
        per_dir_soft[d].append(soft_accuracy(gold, words))
        groups[(inst.sr_id, inst.key_time_index, d)].append((inst.pattern_index, words, gold))
        pattern_seen[d].add((inst.sr_id, inst.pattern_index))
        object_seen[d].add((inst.sr_id, inst.expected_time_index))
        if words == gold:
            pattern_correct[d].add((inst.sr_id, inst.pattern_index))
            object_correct[d].add((inst.sr_id, inst.expected_time_index))

    per_dir_cons: dict[Direction, list[float]] = defaultdict(list)
    per_dir_tcf: dict[Direction, list[float]] = defaultdict(list)
    per_dir_known: dict[Direction, list[float]] = defaultdict(list)
    per_dir_unknown: dict[Direction, list[float]] = defaultdict(list)
    n_groups = 0

    for (sr_id, _key, d), members in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value)):
        if len(members) < 2:
            continue
        n_groups += 1
        words_list = [w for _, w, _ in members]
        gold = members[0][2]
        per_dir_cons[d].append(group_consistency(words_list))
        per_dir_tcf[d].append(temporally_consistent_factuality(gold, words_list))
        known = [w for pat, w, _ in members if (sr_id, pat) in pattern_correct[d]]
        unknown = [w for pat, w, _ in members if (sr_id, pat) not in pattern_correct[d]]
        if len(known) >= 2:
            per_dir_known[d].append(group_consistency(known))
        if len(unknown) >= 2:
            per_dir_unknown[d].append(group_consistency(unknown))

    def pct(values_by_dir: dict[Direction, list[float]], d: Direction) -> float | None:
        m = _mean(values_by_dir[d])
        return 100.0 * m if m is not None else None

    def ratio(num: dict[Direction, set], den: dict[Direction, set], d: Direction) -> float | None:
        if not den[d]:
            return None
        return 100.0 * len(num[d]) / len(den[d])

    f, b = Direction.FORWARD, Direction.BACKWARD
    return MetricValues(
        temp_fact=_split(pct(per_dir_soft, f), pct(per_dir_soft, b)),
        temp_cons=_split(pct(per_dir_cons, f), pct(per_dir_cons, b)),
        temp_cons_fact=_split(pct(per_dir_tcf, f), pct(per_dir_tcf, b)),
        succ_patt=_split(ratio(pattern_correct, pattern_seen, f), ratio(pattern_correct, pattern_seen, b)),
        succ_objs=_split(ratio(object_correct, object_seen, f), ratio(object_correct, object_seen, b)),
        know_cons=_split(pct(per_dir_known, f), pct(per_dir_known, b)),
        unk_cons=_split(pct(per_dir_unknown, f), pct(per_dir_unknown, b)),
        n_probes=len(results),
        n_groups=n_groups,
    )


def year_bin_label(year: int, bin_size: int) -> str:
    start = ((year - 1) // bin_size) * bin_size + 1
    return f"{start}-{start + bin_size - 1}"


def bin_by_year(results: list[ProbeResult], bin_size: int = 10) -> dict[str, MetricValues]:
    """Metrics per half-open year bin of the gold entity; empty bins omitted."""
    if bin_size < 1:
        raise ValueError(f"bin_size must be >= 1, got {bin_size}")
    binned: dict[str, list[ProbeResult]] = defaultdict(list)
    for r in results:
        binned[year_bin_label(r.instance.expected_value.year, bin_size)].append(r)
    ordered = sorted(binned.items(), key=lambda kv: int(kv[0].split("-")[0]))
    return {label: _metric_values(subset) for label, subset in ordered}


def by_entity_type(results: list[ProbeResult]) -> dict[str, MetricValues]:
    grouped: dict[str, list[ProbeResult]] = defaultdict(list)
    for r in results:
        grouped[r.instance.expected_value.entity_type].append(r)
    return {t: _metric_values(subset) for t, subset in sorted(grouped.items())}


def evaluate(results: list[ProbeResult], bin_size: int = 10) -> MetricReport:
    """All seven metrics with direction splits plus year-bin and
    entity-type breakdowns."""
    if not results:
        raise EmptyResultsError("no probe results to evaluate")
    return MetricReport(
        overall=_metric_values(results),
        by_year_bin=bin_by_year(results, bin_size),
        by_entity_type=by_entity_type(results),
        bin_size=bin_size,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _values_to_dict(mv: MetricValues) -> dict:
    out: dict = {}
    for name in METRIC_NAMES:
        split: DirectionSplit = getattr(mv, name)
        out[name] = {"avg": split.avg, "bwd": split.bwd, "fwd": split.fwd}
    out["n_probes"] = mv.n_probes
    out["n_groups"] = mv.n_groups
    return out


def report_to_dict(report: MetricReport) -> dict:
    return {
        "overall": _values_to_dict(report.overall),
        "by_year_bin": {k: _values_to_dict(v) for k, v in report.by_year_bin.items()},
        "by_entity_type": {k: _values_to_dict(v) for k, v in report.by_entity_type.items()},
        "bin_size": report.bin_size,
    }


def _csv_columns() -> list[str]:
    return [f"{metric}_{split}" for metric in METRIC_NAMES for split in SPLIT_ORDER]


def _csv_row(mv: MetricValues) -> list:
    row = []
    for metric in METRIC_NAMES:
        split: DirectionSplit = getattr(mv, metric)
        for field in SPLIT_ORDER:
            value = getattr(split, field)
            row.append("" if value is None else repr(value))
    row.extend([mv.n_probes, mv.n_groups])
    return row


def write_report_json(report: MetricReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2) + "\n", encoding="utf-8")


def write_report_csv(report: MetricReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_columns() + ["n_probes", "n_groups"])
        writer.writerow(_csv_row(report.overall))


def write_breakdown_csv(table: dict[str, MetricValues], key_name: str, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([key_name] + _csv_columns() + ["n_probes", "n_groups"])
        for key, mv in table.items():
            writer.writerow([key] + _csv_row(mv))
