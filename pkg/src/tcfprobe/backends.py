"""Text-completion backends behind one interface.

Two implementations ship with the harness: an HTTP client for
OpenAI-compatible ``/v1/completions`` endpoints, and a configurable oracle
that answers probes from the corpus itself (the test double used to verify
metrics end to end). Both decode greedily; temporal-consistency metrics are
not meaningful under sampling.
"""

from __future__ import annotations

import math
import os
import random
import threading
import time
from dataclasses import dataclass

import requests

from .corpus import Corpus, Direction
from .probegen import PromptText
from .textnorm import normalize_name, normalize_words

API_KEY_ENV = "TECFAP_API_KEY"

ERROR_MODELS = ("wrong_neighbor", "random_candidate", "off_corpus")
INCONSISTENCY_MODES = ("per_pattern", "per_query")

# Flat per-word logprob the oracle assigns to candidates it would not answer.
_REJECT_LOGPROB = math.log(1e-6)

normalize_output = normalize_words


class BackendError(Exception):
    pass


class TransportError(BackendError):
    """Endpoint unreachable or still failing after the retry budget."""


class MalformedResponseError(BackendError):
    """Endpoint replied but not in the expected completions shape."""


class TokenBudgetError(BackendError):
    """Prompt leaves no room for a completion within the total budget."""


class LogprobsUnsupportedError(BackendError):
    """Backend cannot provide token log-probabilities."""


@dataclass(frozen=True)
class GenConfig:
    max_new_tokens: int = 32
    max_total_tokens: int = 256
    top_logprobs: int = 0
    timeout: float = 30.0
    retries: int = 2
    retry_backoff: float = 0.5


@dataclass(frozen=True)
class ModelResponse:
    raw_text: str
    normalized: tuple[str, ...]
    first_token_dist: tuple[tuple[str, float], ...] | None = None


@dataclass(frozen=True)
class OracleConfig:
    error_rate: float = 0.0
    error_model: str = "wrong_neighbor"
    inconsistency_mode: str = "per_pattern"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError(f"error_rate must be in [0, 1], got {self.error_rate}")
        if self.error_model not in ERROR_MODELS:
            raise ValueError(f"error_model must be one of {ERROR_MODELS}")
        if self.inconsistency_mode not in INCONSISTENCY_MODES:
            raise ValueError(f"inconsistency_mode must be one of {INCONSISTENCY_MODES}")


def _budget(prompt: PromptText, cfg: GenConfig) -> int:
    room = cfg.max_total_tokens - len(prompt.full_text.split())
    allowed = min(cfg.max_new_tokens, room)
    if allowed <= 0:
        raise TokenBudgetError(
            f"prompt of {len(prompt.full_text.split())} words leaves no room "
            f"within {cfg.max_total_tokens} total"
        )
    return allowed


def rank_candidates(scores: dict[str, float]) -> list[tuple[str, float]]:
    """Descending by score; lexicographic on the candidate breaks ties."""
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


class Backend:
    """Stateless request/response completion interface.

    Implementations must be safe for concurrent in-flight requests; any
    randomness must derive from configuration so concurrency cannot change
    results.
    """

    def complete(self, prompt: PromptText, cfg: GenConfig) -> ModelResponse:
        raise NotImplementedError

    def score_candidates(
        self, prompt: PromptText, candidates: frozenset[str] | set[str], cfg: GenConfig
    ) -> list[tuple[str, float]]:
        raise NotImplementedError

    def first_token_distribution(self, prompt: PromptText, k: int) -> list[tuple[str, float]]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Oracle backend
# ---------------------------------------------------------------------------

class UnknownPromptError(BackendError):
    """The oracle only answers prompts rendered from its corpus."""


class OracleBackend(Backend):
    """Answers probe prompts from the corpus ground truth.

    With ``error_rate`` 0 the oracle always produces the expected timeline
    neighbor. Otherwise errors are injected per pattern (a seeded subset of
    patterns answers wrongly for every key; with the wrong_neighbor model
    all wrong patterns of a group share one wrong value, which makes group
    consistency analytic) or per query. Prompts are recognized by their
    query text, so shots do not confuse the lookup. Boundary fillings with
    no neighbor in the probed direction (never produced by probe
    enumeration, but legal in paraphrase studies) are answered with the
    nearest existing neighbor.
    """

    def __init__(self, corpus: Corpus, config: OracleConfig | None = None):
        self.corpus = corpus
        self.config = config or OracleConfig()
        self._by_query: dict[str, tuple[str, int, int]] = {}
        for entry in corpus.entries:
            for pat_idx, pat in enumerate(entry.patterns):
                for key_idx in range(len(entry.timeline)):
                    query = pat.fill(entry.timeline[key_idx].name)
                    self._by_query.setdefault(query, (entry.id, pat_idx, key_idx))

    # -- error machinery ----------------------------------------------------

    def _is_wrong(self, sr_id: str, pattern_index: int, key_index: int) -> bool:
        if self.config.error_rate == 0.0:
            return False
        if self.config.inconsistency_mode == "per_pattern":
            tag = f"flip|{self.config.seed}|{sr_id}|{pattern_index}"
        else:
            tag = f"flip|{self.config.seed}|{sr_id}|{pattern_index}|{key_index}"
        return random.Random(tag).random() < self.config.error_rate

    def flagged_wrong_patterns(self, sr_id: str, direction: Direction) -> set[int]:
        """Pattern indices that answer wrongly under per_pattern mode."""
        entry = self.corpus.entry(sr_id)
        return {
            idx
            for idx, _ in entry.patterns_in(direction)
            if self._is_wrong(sr_id, idx, 0)
        }

    def _wrong_value(self, sr_id: str, pattern_index: int, key_index: int, expected_index: int) -> str:
        entry = self.corpus.entry(sr_id)
        model = self.config.error_model
        if model == "wrong_neighbor":
            wrong = expected_index + 1 if expected_index + 1 < len(entry.timeline) else expected_index - 1
            return entry.timeline[wrong].name
        rng = random.Random(
            f"wrongval|{self.config.seed}|{sr_id}|{pattern_index}|{key_index}"
        )
        if model == "random_candidate":
            options = [i for i in range(len(entry.timeline)) if i != expected_index]
            return entry.timeline[rng.choice(options)].name
        return f"unrecorded entity {rng.randrange(10**6)}"

    def _answer(self, sr_id: str, pattern_index: int, key_index: int) -> str:
        entry = self.corpus.entry(sr_id)
        direction = entry.patterns[pattern_index].direction
        step = 1 if direction is Direction.FORWARD else -1
        expected_index = key_index + step
        if not 0 <= expected_index < len(entry.timeline):
            expected_index = key_index - step  # boundary filling: nearest neighbor
        if self._is_wrong(sr_id, pattern_index, key_index):
            return self._wrong_value(sr_id, pattern_index, key_index, expected_index)
        return entry.timeline[expected_index].name

    def _resolve(self, prompt: PromptText) -> tuple[str, int, int]:
        try:
            return self._by_query[prompt.query]
        except KeyError:
            raise UnknownPromptError(f"query does not match any corpus probe: {prompt.query!r}") from None

    # -- Backend interface ----------------------------------------------------

    def complete(self, prompt: PromptText, cfg: GenConfig) -> ModelResponse:
        _budget(prompt, cfg)
        answer = self._answer(*self._resolve(prompt))
        dist = None
        if cfg.top_logprobs >= 1:
            words = normalize_words(answer)
            dist = ((words[0] if words else "", 0.0),)
        return ModelResponse(raw_text=answer, normalized=tuple(normalize_words(answer)), first_token_dist=dist)

    def score_candidates(self, prompt, candidates, cfg) -> list[tuple[str, float]]:
        if not candidates:
            raise BackendError("candidate set is empty")
        answer = normalize_name(self._answer(*self._resolve(prompt)))
        scores = {c: (0.0 if c == answer else _REJECT_LOGPROB) for c in candidates}
        return rank_candidates(scores)

    def first_token_distribution(self, prompt: PromptText, k: int) -> list[tuple[str, float]]:
        if k < 1:
            raise LogprobsUnsupportedError("k must be >= 1")
        words = normalize_words(self._answer(*self._resolve(prompt)))
        return [(words[0] if words else "", 1.0)]


# ---------------------------------------------------------------------------
# HTTP backend (OpenAI-compatible completions)
# ---------------------------------------------------------------------------

class HTTPBackend(Backend):
    """Client for ``POST {base_url}/v1/completions`` endpoints.

    Requests greedy decoding (temperature 0). The API key is read from the
    ``TECFAP_API_KEY`` environment variable unless given explicitly.
    Candidate scoring uses echoed logprobs: each candidate is appended to
    the prompt and its continuation log-probability summed, length-
    normalized by word count unless disabled.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        length_normalize: bool = True,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.length_normalize = length_normalize
        self._local = threading.local()

    def _session(self) -> requests.Session:
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def _post(self, payload: dict, cfg: GenConfig) -> dict:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/v1/completions"
        last_exc: Exception | None = None
        for attempt in range(cfg.retries + 1):
            try:
                resp = self._session().post(url, json=payload, headers=headers, timeout=cfg.timeout)
                if resp.status_code in (429,) or resp.status_code >= 500:
                    last_exc = TransportError(f"HTTP {resp.status_code} from {url}")
                elif resp.status_code >= 400:
                    raise MalformedResponseError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    return resp.json()
            except (requests.RequestException, ValueError) as exc:
                last_exc = exc
            if attempt < cfg.retries:
                time.sleep(cfg.retry_backoff * (attempt + 1))
        raise TransportError(f"completions call failed after {cfg.retries + 1} attempts: {last_exc}")

    @staticmethod
    def _choice(reply: dict) -> dict:
        try:
            return reply["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"reply missing choices: {reply!r:.200}") from exc

    def complete(self, prompt: PromptText, cfg: GenConfig) -> ModelResponse:
        payload = {
            "model": self.model,
            "prompt": prompt.full_text,
            "max_tokens": _budget(prompt, cfg),
            "temperature": 0,
        }
        if cfg.top_logprobs >= 1:
            payload["logprobs"] = cfg.top_logprobs
        choice = self._choice(self._post(payload, cfg))
        text = choice.get("text")
        if not isinstance(text, str):
            raise MalformedResponseError("choice has no text field")
        dist = None
        if cfg.top_logprobs >= 1:
            top = (choice.get("logprobs") or {}).get("top_logprobs") or []
            if top:
                first = top[0]
                dist = tuple(sorted(first.items(), key=lambda kv: (-kv[1], kv[0])))[: cfg.top_logprobs]
        return ModelResponse(raw_text=text, normalized=tuple(normalize_words(text)), first_token_dist=dist)

    def score_candidates(self, prompt, candidates, cfg) -> list[tuple[str, float]]:
        if not candidates:
            raise BackendError("candidate set is empty")
        scores: dict[str, float] = {}
        for cand in candidates:
            payload = {
                "model": self.model,
                "prompt": f"{prompt.full_text} {cand}",
                "max_tokens": 0,
                "temperature": 0,
                "echo": True,
                "logprobs": 1,
            }
            choice = self._choice(self._post(payload, cfg))
            lp = choice.get("logprobs") or {}
            token_logprobs = lp.get("token_logprobs") or []
            offsets = lp.get("text_offset") or []
            if len(token_logprobs) != len(offsets):
                raise MalformedResponseError("token_logprobs/text_offset length mismatch")
            start = len(prompt.full_text)
            total = sum(
                logprob
                for logprob, offset in zip(token_logprobs, offsets)
                if offset >= start and logprob is not None
            )
            if self.length_normalize:
                total /= max(len(cand.split()), 1)
            scores[cand] = total
        return rank_candidates(scores)

    def first_token_distribution(self, prompt: PromptText, k: int) -> list[tuple[str, float]]:
        if k < 1:
            raise LogprobsUnsupportedError("k must be >= 1")
        payload = {
            "model": self.model,
            "prompt": prompt.full_text,
            "max_tokens": 1,
            "temperature": 0,
            "logprobs": k,
        }
        choice = self._choice(self._post(payload, GenConfig(top_logprobs=k)))
        top = (choice.get("logprobs") or {}).get("top_logprobs") or []
        if not top:
            raise LogprobsUnsupportedError("endpoint returned no top_logprobs")
        items = sorted(top[0].items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        return [(token, math.exp(logprob)) for token, logprob in items]


def backend_from_config(table: dict, corpus: Corpus) -> Backend:
    """Build a backend from the run-config ``backend`` table."""
    kind = table.get("kind", "oracle")
    if kind == "oracle":
        return OracleBackend(
            corpus,
            OracleConfig(
                error_rate=float(table.get("error_rate", 0.0)),
                error_model=table.get("error_model", "wrong_neighbor"),
                inconsistency_mode=table.get("inconsistency_mode", "per_pattern"),
                seed=int(table.get("seed", 0)),
            ),
        )
    if kind == "http":
        try:
            return HTTPBackend(
                base_url=table["base_url"],
                model=table["model"],
                api_key=table.get("api_key"),
                length_normalize=bool(table.get("length_normalize", True)),
            )
        except KeyError as exc:
            raise BackendError(f"http backend config missing {exc}") from exc
    raise BackendError(f"unknown backend kind {kind!r}")
