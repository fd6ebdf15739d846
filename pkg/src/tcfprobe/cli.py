"""Command-line front end wiring the corpus, probing, metrics, reward, and
analysis pieces together.

Exit codes: 0 success, 1 usage error, 2 data validation failure, 3 backend
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import analysis, metrics, probegen, reward
from .backends import Backend, BackendError, GenConfig, ModelResponse, backend_from_config
from .corpus import (
    Corpus,
    CorpusFormatError,
    Direction,
    SchemaViolationError,
    candidate_set,
    load_resource,
    save_resource,
    stats,
    validate,
    vertical_split,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    corpus: str
    out_dir: str
    backend: dict
    k: int = 0
    direction: str = "both"
    vocab: str = "open"
    seed: int = 0
    instruction: str = probegen.DEFAULT_INSTRUCTION
    max_new_tokens: int = 32
    top_logprobs: int = 0
    bin_size: int = 10
    parallelism: int = 1

    def __post_init__(self):
        if self.k < 0:
            raise UsageError(f"k must be >= 0, got {self.k}")
        if self.vocab not in ("open", "closed"):
            raise UsageError(f"vocab must be open or closed, got {self.vocab!r}")
        if self.direction not in ("both", "forward", "backward"):
            raise UsageError(f"direction must be both/forward/backward, got {self.direction!r}")
        if self.parallelism < 1:
            raise UsageError(f"parallelism must be >= 1, got {self.parallelism}")

    @property
    def direction_filter(self) -> Direction | None:
        return None if self.direction == "both" else Direction(self.direction)

    def gen_config(self) -> GenConfig:
        return GenConfig(max_new_tokens=self.max_new_tokens, top_logprobs=self.top_logprobs)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        doc = tomllib.loads(raw.decode("utf-8"))
    else:
        doc = json.loads(raw)
    try:
        backend = dict(doc.get("backend", {"kind": "oracle"}))
        probe = doc.get("probe", {})
        return RunConfig(
            corpus=doc["corpus"],
            out_dir=doc["out_dir"],
            backend=backend,
            k=int(probe.get("k", 0)),
            direction=probe.get("direction", "both"),
            vocab=probe.get("vocab", "open"),
            seed=int(probe.get("seed", 0)),
            instruction=probe.get("instruction", probegen.DEFAULT_INSTRUCTION),
            max_new_tokens=int(probe.get("max_new_tokens", 32)),
            top_logprobs=int(probe.get("top_logprobs", 0)),
            bin_size=int(doc.get("bin_size", 10)),
            parallelism=int(backend.pop("parallelism", 1)),
        )
    except KeyError as exc:
        raise UsageError(f"run config missing {exc}") from exc


# ---------------------------------------------------------------------------
# Probe running and result files
# ---------------------------------------------------------------------------

class IncompleteResultsError(ValueError):
    pass


def _row_key(row: dict) -> tuple:
    return (row["sr_id"], row["pattern_index"], row["key_time_index"], row["direction"])


def _read_result_rows(path: Path) -> list[dict]:
    """Parse a results file, silently dropping a torn trailing line."""
    rows = []
    if not path.exists():
        return rows
    lines = path.read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break
            raise
    return rows


def run_probes(corpus: Corpus, backend: Backend, cfg: RunConfig, results_path: Path) -> int:
    """Execute all configured probes, appending one JSONL row each.

    Resumable: probes whose key already appears in the file are skipped, so
    an interrupted run continues where it stopped and converges to the same
    file. Dispatch is parallel up to the configured bound, but rows are
    written in enumeration order.
    """
    probes = probegen.enumerate_probes(corpus, cfg.direction_filter)
    existing_rows = _read_result_rows(results_path)
    done = {_row_key(r) for r in existing_rows}
    if existing_rows:
        # rewrite to shed any torn trailing line before appending
        with open(results_path, "w", encoding="utf-8") as fh:
            for row in existing_rows:
                fh.write(json.dumps(row) + "\n")
    todo = [p for p in probes if p.key not in done]
    gen_cfg = cfg.gen_config()

    def one(instance: probegen.ProbeInstance) -> dict:
        prompt = probegen.render_prompt(
            instance, corpus, k=cfg.k, seed=cfg.seed, instruction=cfg.instruction
        )
        started = time.time()
        if cfg.vocab == "closed":
            ranked = backend.score_candidates(
                prompt, candidate_set(corpus, instance.sr_id).candidates, gen_cfg
            )
            choice = ranked[0][0]
            response = ModelResponse(
                raw_text=choice, normalized=tuple(choice.split()), first_token_dist=None
            )
            closed_choice = choice
        else:
            response = backend.complete(prompt, gen_cfg)
            closed_choice = None
        return {
            "sr_id": instance.sr_id,
            "pattern_index": instance.pattern_index,
            "key_time_index": instance.key_time_index,
            "direction": instance.direction.value,
            "prompt_sha256": hashlib.sha256(prompt.full_text.encode("utf-8")).hexdigest(),
            "raw_text": response.raw_text,
            "normalized": list(response.normalized),
            "closed_vocab_choice": closed_choice,
            "latency_s": round(time.time() - started, 6),
            "timestamp": time.time(),
        }

    written = 0
    with open(results_path, "a", encoding="utf-8") as fh:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            for row in pool.map(one, todo):
                fh.write(json.dumps(row) + "\n")
                fh.flush()
                written += 1
    return written


def results_to_probe_results(rows: list[dict], corpus: Corpus) -> list[metrics.ProbeResult]:
    instances = {p.key: p for p in probegen.enumerate_probes(corpus)}
    out = []
    for row in rows:
        key = _row_key(row)
        if key not in instances:
            raise IncompleteResultsError(f"results row does not match any corpus probe: {key}")
        out.append(
            metrics.ProbeResult(
                instance=instances[key],
                response=ModelResponse(
                    raw_text=row["raw_text"], normalized=tuple(row["normalized"])
                ),
                closed_vocab_choice=row.get("closed_vocab_choice"),
            )
        )
    return out


def check_complete(rows: list[dict], corpus: Corpus) -> None:
    """Every enumerated probe of each direction present in the rows must
    have exactly one row."""
    have = {_row_key(r) for r in rows}
    directions = {Direction(r["direction"]) for r in rows}
    for d in directions:
        wanted = {p.key for p in probegen.enumerate_probes(corpus, d)}
        missing = wanted - have
        if missing:
            raise IncompleteResultsError(
                f"results incomplete for {d.value}: {len(missing)} of {len(wanted)} probes missing"
            )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    corpus = load_resource(args.corpus, strict=False)
    violations = validate(corpus)
    if violations:
        for v in violations:
            print(v)
        print(f"{len(violations)} violation(s) in {len(corpus)} entries")
        return EXIT_DATA
    print(f"ok: {len(corpus)} entries, no violations")
    return EXIT_OK


def cmd_stats(args) -> int:
    corpus = load_resource(args.corpus)
    print(json.dumps(stats(corpus).to_dict(), indent=2))
    return EXIT_OK


def cmd_split(args) -> int:
    corpus = load_resource(args.corpus)
    train, test = vertical_split(corpus, args.ratio, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_resource(train, out_dir / "train.json")
    save_resource(test, out_dir / "test.json")
    print(f"train={len(train)} test={len(test)} -> {out_dir}")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = load_run_config(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    corpus = load_resource(cfg.corpus)
    backend = backend_from_config(cfg.backend, corpus)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.jsonl"
    written = run_probes(corpus, backend, cfg, results_path)
    print(f"wrote {written} new rows -> {results_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    corpus = load_resource(args.corpus)
    rows = _read_result_rows(Path(args.results))
    if not rows:
        raise IncompleteResultsError(f"no rows in {args.results}")
    check_complete(rows, corpus)
    results = results_to_probe_results(rows, corpus)
    report = metrics.evaluate(results, bin_size=args.bin_size)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_report_json(report, out_dir / "report.json")
    metrics.write_report_csv(report, out_dir / "report.csv")
    metrics.write_breakdown_csv(report.by_year_bin, "year_bin", out_dir / "bins.csv")
    metrics.write_breakdown_csv(report.by_entity_type, "entity_type", out_dir / "entity_types.csv")
    overall = report.overall
    for name in metrics.METRIC_NAMES:
        split = getattr(overall, name)
        avg = "-" if split.avg is None else f"{split.avg:.2f}"
        print(f"{name}: avg={avg}")
    print(f"reports -> {out_dir}")
    return EXIT_OK


def cmd_gen_itdata(args) -> int:
    corpus = load_resource(args.corpus)
    samples = probegen.gen_it_samples(
        corpus,
        n_k2_pairs=args.k2_pairs,
        negative_ratio=args.negative_ratio,
        context_mode=args.context_mode,
        seed=args.seed,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_dict()) + "\n")
    print(f"wrote {len(samples)} samples -> {args.out}")
    return EXIT_OK


def _reward_corpus(args) -> Corpus | None:
    return load_resource(args.corpus) if args.corpus else None


def cmd_reward_score(args) -> int:
    corpus = _reward_corpus(args)
    with open(args.infile, "r", encoding="utf-8") as src, open(args.outfile, "w", encoding="utf-8") as dst:
        return reward.serve(src, dst, corpus)


def cmd_reward_serve(args) -> int:
    return reward.serve(sys.stdin, sys.stdout, _reward_corpus(args))


def cmd_kl(args) -> int:
    corpus = load_resource(args.corpus)
    backend_table = {"kind": "oracle", "seed": args.seed}
    if args.config:
        backend_table = dict(load_run_config(args.config).backend)
    backend = backend_from_config(backend_table, corpus)
    report = analysis.paraphrase_divergence_study(
        corpus,
        backend,
        n_entries=args.entries,
        n_pairs_per_mode=args.pairs,
        top_k=args.top_k,
        epsilon=args.epsilon,
        seed=args.seed,
    )
    if args.baseline:
        baseline = analysis.report_from_dict(json.loads(Path(args.baseline).read_text(encoding="utf-8")))
        report = analysis.compare_reports(baseline, report)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    analysis.write_report_json(report, out_dir / "kl.json")
    analysis.write_report_csv(report, out_dir / "kl.csv")
    print(f"kl report -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tcfprobe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a corpus file against the schema invariants")
    p.add_argument("--corpus", required=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("stats", help="print corpus statistics as JSON")
    p.add_argument("--corpus", required=True)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("split", help="vertical train/test split by subject-relation pair")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("probe", help="run probes against the configured backend")
    p.add_argument("--config", required=True, help="run config (TOML or JSON)")
    p.add_argument("--out-dir", default=None, help="override the configured output directory")
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("eval", help="compute the metric report from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bin-size", type=int, default=10)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gen-itdata", help="emit the instruction dataset as JSONL")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k2-pairs", type=int, default=0)
    p.add_argument("--negative-ratio", type=float, default=0.5)
    p.add_argument("--context-mode", choices=probegen.CONTEXT_MODES, default="subject_relation_line")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen_itdata)

    p = sub.add_parser("reward", help="reward scoring service")
    rsub = p.add_subparsers(dest="reward_command", required=True)
    ps = rsub.add_parser("score", help="score a JSONL request file")
    ps.add_argument("--in", dest="infile", required=True)
    ps.add_argument("--out", dest="outfile", required=True)
    ps.add_argument("--corpus", default=None)
    ps.set_defaults(fn=cmd_reward_score)
    pv = rsub.add_parser("serve", help="score JSONL requests from stdin to stdout")
    pv.add_argument("--corpus", default=None)
    pv.set_defaults(fn=cmd_reward_serve)

    p = sub.add_parser("kl", help="positive vs agnostic paraphrase divergence study")
    p.add_argument("--corpus", required=True)
    p.add_argument("--entries", type=int, default=10)
    p.add_argument("--pairs", type=int, default=5)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="run config providing the backend table")
    p.add_argument("--baseline", default=None, help="previous kl.json to diff against")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_kl)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (CorpusFormatError, SchemaViolationError, IncompleteResultsError, metrics.EmptyResultsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
