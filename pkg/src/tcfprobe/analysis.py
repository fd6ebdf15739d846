"""Probabilistic-space consistency analysis.

Compares next-token distributions of positive paraphrase pairs (same
temporal direction) against agnostic pairs (direction flipped). A model
that treats paraphrases consistently shows low divergence on positive
pairs and, ideally, a wide gap to the agnostic ones.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from .backends import Backend
from .corpus import Corpus, Direction
from .probegen import sample_paraphrase_pairs

KL_DIRECTION = "first-member||second-member"


@dataclass(frozen=True)
class DivergenceRecord:
    sr_id: str
    pp: float  # mean KL over positive pairs, nats
    ap: float  # mean KL over agnostic pairs, nats

    @property
    def diff(self) -> float:
        return self.ap - self.pp


@dataclass(frozen=True)
class DivergenceReport:
    records: tuple[DivergenceRecord, ...]
    metadata: dict = field(default_factory=dict)
    deltas: dict[str, float] | None = None

    @property
    def avg_pp(self) -> float:
        return sum(r.pp for r in self.records) / len(self.records)

    @property
    def avg_ap(self) -> float:
        return sum(r.ap for r in self.records) / len(self.records)

    @property
    def avg_diff(self) -> float:
        return sum(r.diff for r in self.records) / len(self.records)

    @property
    def avg_delta(self) -> float | None:
        if self.deltas is None:
            return None
        return sum(self.deltas.values()) / len(self.deltas)


def kl_divergence(p, q, epsilon: float = 1e-9) -> float:
    """KL(p || q) in nats over the union support.

    Tokens absent from either distribution receive probability ``epsilon``;
    both distributions are then renormalized, which also absorbs the
    truncated tail of top-k inputs and keeps the result finite.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    p = dict(p)
    q = dict(q)
    for dist in (p, q):
        for token, prob in dist.items():
            if not 0.0 < prob <= 1.0:
                raise ValueError(f"probability for {token!r} outside (0, 1]: {prob}")
    support = sorted(set(p) | set(q))
    p_s = [p.get(t, epsilon) for t in support]
    q_s = [q.get(t, epsilon) for t in support]
    p_total, q_total = sum(p_s), sum(q_s)
    return sum(
        (pi / p_total) * math.log((pi / p_total) / (qi / q_total))
        for pi, qi in zip(p_s, q_s)
    )


def paraphrase_divergence_study(
    corpus: Corpus,
    backend: Backend,
    n_entries: int = 10,
    n_pairs_per_mode: int = 5,
    top_k: int = 10,
    epsilon: float = 1e-9,
    seed: int = 0,
) -> DivergenceReport:
    """Mean positive/agnostic first-token KL per sampled entry.

    For every key entity of each sampled entry, ``n_pairs_per_mode``
    positive and agnostic pairs are drawn per direction; KL(first member ||
    second member) is averaged over all of an entry's pairs.
    """
    ids = sorted(e.id for e in corpus.entries)
    if n_entries > len(ids):
        raise ValueError(f"n_entries {n_entries} exceeds corpus size {len(ids)}")
    rng = random.Random(f"klstudy|{seed}")
    chosen = sorted(rng.sample(ids, n_entries))

    records = []
    for sr_id in chosen:
        entry = corpus.entry(sr_id)
        kls = {"positive": [], "agnostic": []}
        for key_index in range(len(entry.timeline)):
            for direction in (Direction.FORWARD, Direction.BACKWARD):
                for mode, sink in kls.items():
                    pairs = sample_paraphrase_pairs(
                        corpus, sr_id, key_index, direction, mode, n_pairs_per_mode, seed=seed
                    )
                    for first, second in pairs:
                        p = backend.first_token_distribution(first, top_k)
                        q = backend.first_token_distribution(second, top_k)
                        sink.append(kl_divergence(p, q, epsilon))
        records.append(
            DivergenceRecord(
                sr_id=sr_id,
                pp=sum(kls["positive"]) / len(kls["positive"]),
                ap=sum(kls["agnostic"]) / len(kls["agnostic"]),
            )
        )
    metadata = {
        "kl_direction": KL_DIRECTION,
        "n_entries": n_entries,
        "n_pairs_per_mode": n_pairs_per_mode,
        "top_k": top_k,
        "epsilon": epsilon,
        "seed": seed,
    }
    return DivergenceReport(records=tuple(records), metadata=metadata)


def compare_reports(a: DivergenceReport, b: DivergenceReport) -> DivergenceReport:
    """Report b's rows with a per-entry delta column diff_b - diff_a.

    A positive delta means model b separates agnostic from positive
    paraphrases more widely than model a.
    """
    a_by_id = {r.sr_id: r for r in a.records}
    b_by_id = {r.sr_id: r for r in b.records}
    if set(a_by_id) != set(b_by_id):
        raise ValueError(
            f"entry sets differ: only-a={sorted(set(a_by_id) - set(b_by_id))}, "
            f"only-b={sorted(set(b_by_id) - set(a_by_id))}"
        )
    deltas = {sr_id: b_by_id[sr_id].diff - a_by_id[sr_id].diff for sr_id in b_by_id}
    metadata = dict(b.metadata)
    metadata["baseline"] = a.metadata
    return DivergenceReport(records=b.records, metadata=metadata, deltas=deltas)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def report_to_dict(report: DivergenceReport) -> dict:
    rows = []
    for r in report.records:
        row = {"sr_id": r.sr_id, "pp": r.pp, "ap": r.ap, "diff": r.diff}
        if report.deltas is not None:
            row["delta"] = report.deltas[r.sr_id]
        rows.append(row)
    out = {
        "records": rows,
        "average": {"pp": report.avg_pp, "ap": report.avg_ap, "diff": report.avg_diff},
        "metadata": report.metadata,
    }
    if report.deltas is not None:
        out["average"]["delta"] = report.avg_delta
    return out


def report_from_dict(doc: dict) -> DivergenceReport:
    records = tuple(DivergenceRecord(r["sr_id"], r["pp"], r["ap"]) for r in doc["records"])
    deltas = None
    if doc["records"] and "delta" in doc["records"][0]:
        deltas = {r["sr_id"]: r["delta"] for r in doc["records"]}
    return DivergenceReport(records=records, metadata=doc.get("metadata", {}), deltas=deltas)


def write_report_json(report: DivergenceReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2) + "\n", encoding="utf-8")


def write_report_csv(report: DivergenceReport, path: str | Path) -> None:
    header = ["sr_id", "pp", "ap", "diff"]
    if report.deltas is not None:
        header.append("delta")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in report.records:
            row = [r.sr_id, repr(r.pp), repr(r.ap), repr(r.diff)]
            if report.deltas is not None:
                row.append(repr(report.deltas[r.sr_id]))
            writer.writerow(row)
        avg = ["average", repr(report.avg_pp), repr(report.avg_ap), repr(report.avg_diff)]
        if report.deltas is not None:
            avg.append(repr(report.avg_delta))
        writer.writerow(avg)
