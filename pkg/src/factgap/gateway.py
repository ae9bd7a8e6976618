"""Language-model access with record/replay cassettes.

Every request is identified by a sha256 fingerprint over its canonical
JSON payload. In ``record`` mode a cassette hit short-circuits the
backend, so re-running a partially recorded corpus only issues the
missing calls; in ``replay`` mode a miss is an error. Cassettes are
append-only JSONL and safe to share between worker threads.

Transport failures retry with exponential backoff; contract failures
(truncated output, missing logprobs, malformed payloads) never retry.
"""

from __future__ import annotations

import hashlib
import logging
import statistics
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

import json

from .jsonutil import canonical_dumps

log = logging.getLogger(__name__)


class GatewayError(Exception):
    """Base for every failure raised by this module."""


class TransportError(GatewayError):
    """Network-level failure or retryable HTTP status; safe to retry."""


class ResponseTruncated(GatewayError):
    """The model stopped for a reason other than finishing."""


class LogprobsUnsupported(GatewayError):
    """The backend cannot return token log-probabilities."""


class CassetteMiss(GatewayError):
    """Replay mode was asked for a request the cassette has never seen."""

    def __init__(self, fingerprint: str):
        super().__init__(f"no cassette record for fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class BackendExhausted(GatewayError):
    """A scripted backend ran out of queued responses."""


class GatewayMode(str, Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


class Aggregation(str, Enum):
    MEAN = "mean"
    SUM = "sum"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown chat role {self.role!r}")

    def to_json_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


def _fingerprint(payload: Mapping[str, Any]) -> str:
    return hashlib.sha256(canonical_dumps(payload).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenerationRequest:
    """A deterministic chat completion request.

    Temperature is pinned to 0.0; sampling parameters are deliberately
    not exposed because cassette identity depends on the full payload.
    """

    model_id: str
    messages: tuple[ChatMessage, ...]
    max_tokens: int = 1024
    temperature: float = 0.0
    fingerprint: str = field(init=False)

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("request has no messages")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")
        if self.temperature != 0.0:
            raise ValueError("temperature is fixed at 0.0 for reproducibility")
        object.__setattr__(self, "fingerprint", _fingerprint(self.payload()))

    def payload(self) -> dict[str, Any]:
        return {
            "kind": "generate",
            "model_id": self.model_id,
            "messages": [m.to_json_dict() for m in self.messages],
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        }

    def extended(self, assistant_text: str, user_text: str) -> "GenerationRequest":
        """The follow-up request for a repair round."""
        return GenerationRequest(
            model_id=self.model_id,
            messages=self.messages
            + (
                ChatMessage(role="assistant", content=assistant_text),
                ChatMessage(role="user", content=user_text),
            ),
            max_tokens=self.max_tokens,
        )


@dataclass(frozen=True)
class ScoreRequest:
    """Token-level log-probabilities of continuation given prefix."""

    model_id: str
    prefix: str
    continuation: str
    fingerprint: str = field(init=False)

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if not self.prefix:
            raise ValueError("prefix must be non-empty")
        if not self.continuation:
            raise ValueError("continuation must be non-empty")
        object.__setattr__(self, "fingerprint", _fingerprint(self.payload()))

    def payload(self) -> dict[str, Any]:
        return {
            "kind": "score",
            "model_id": self.model_id,
            "prefix": self.prefix,
            "continuation": self.continuation,
        }


@dataclass(frozen=True)
class ScoredContinuation:
    """Aggregated continuation likelihood under a model."""

    model_id: str
    prefix: str
    continuation: str
    token_logprobs: tuple[float, ...]
    aggregation: Aggregation
    score: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "token_logprobs", tuple(self.token_logprobs))
        if not isinstance(self.aggregation, Aggregation):
            object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        if not self.token_logprobs:
            raise ValueError("cannot score an empty continuation")
        expected = aggregate_logprobs(self.token_logprobs, self.aggregation)
        if self.score != expected:
            raise ValueError(f"score {self.score} != {self.aggregation.value} of token logprobs")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "prefix": self.prefix,
            "continuation": self.continuation,
            "token_logprobs": list(self.token_logprobs),
            "aggregation": self.aggregation.value,
            "score": self.score,
        }


def aggregate_logprobs(logprobs: Sequence[float], aggregation: Aggregation) -> float:
    if not logprobs:
        raise ValueError("no token logprobs to aggregate")
    if Aggregation(aggregation) is Aggregation.MEAN:
        return statistics.fmean(logprobs)
    import math

    return math.fsum(logprobs)


class Cassette:
    """Append-only JSONL store keyed by request fingerprint.

    Later records for the same fingerprint win, so re-recording a
    request replaces its response without rewriting history.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[str, dict[str, Any]] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as handle:
                for line_no, line in enumerate(handle, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise ValueError(
                            f"{self.path}:{line_no}: cassette line is not JSON: {exc}"
                        ) from exc
                    if "fingerprint" not in record or "response" not in record:
                        raise ValueError(
                            f"{self.path}:{line_no}: cassette record missing "
                            "fingerprint/response"
                        )
                    self._records[record["fingerprint"]] = record

    def __len__(self) -> int:
        return len(self._records)

    def get(self, fingerprint: str) -> Optional[dict[str, Any]]:
        with self._lock:
            return self._records.get(fingerprint)

    def append(self, record: Mapping[str, Any]) -> None:
        record = dict(record)
        with self._lock:
            self._records[record["fingerprint"]] = record
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(canonical_dumps(record) + "\n")
                handle.flush()


class ScriptedBackend:
    """Replays caller-provided responses in order; the recording tool
    and most tests drive the pipeline through this."""

    def __init__(
        self,
        generate_responses: Sequence[Any] = (),
        score_responses: Sequence[Any] = (),
    ):
        self._generate = list(generate_responses)
        self._score = list(score_responses)
        self._lock = threading.Lock()

    def complete(self, request: GenerationRequest) -> str:
        with self._lock:
            if not self._generate:
                raise BackendExhausted(
                    f"scripted backend has no response left for fingerprint "
                    f"{request.fingerprint}"
                )
            item = self._generate.pop(0)
        if isinstance(item, str):
            return item
        return item["text"]

    def score(self, request: ScoreRequest) -> tuple[float, ...]:
        with self._lock:
            if not self._score:
                raise BackendExhausted(
                    f"scripted backend has no score left for fingerprint "
                    f"{request.fingerprint}"
                )
            item = self._score.pop(0)
        if isinstance(item, dict):
            item = item["logprobs"]
        return tuple(float(x) for x in item)


class MockFileBackend:
    """Serves responses from a cassette-format file, keyed by
    fingerprint. Lets the CLI run fully offline."""

    def __init__(self, path: Path | str):
        self._cassette = Cassette(path)
        self.path = Path(path)

    def _lookup(self, fingerprint: str) -> dict[str, Any]:
        record = self._cassette.get(fingerprint)
        if record is None:
            raise CassetteMiss(fingerprint)
        return record

    def complete(self, request: GenerationRequest) -> str:
        return self._lookup(request.fingerprint)["response"]["text"]

    def score(self, request: ScoreRequest) -> tuple[float, ...]:
        logprobs = self._lookup(request.fingerprint)["response"].get("logprobs")
        if logprobs is None:
            raise LogprobsUnsupported(
                f"record {request.fingerprint} in {self.path} has no logprobs"
            )
        return tuple(float(x) for x in logprobs)


class HttpBackend:
    """OpenAI-compatible HTTP API.

    Chat completions serve generation; the legacy completions endpoint
    with echo and zero new tokens serves continuation scoring, because
    chat endpoints do not expose prompt token logprobs.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        timeout: float = 120.0,
        session: Any = None,
    ):
        if not base_url:
            raise ValueError("base_url must be non-empty")
        import requests

        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = session if session is not None else requests.Session()
        self._headers = {"Content-Type": "application/json"}
        if api_key:
            self._headers["Authorization"] = f"Bearer {api_key}"

    def _post(self, path: str, body: Mapping[str, Any]) -> dict[str, Any]:
        import requests

        url = f"{self.base_url}{path}"
        try:
            response = self._session.post(
                url, json=body, headers=self._headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"POST {url} failed: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransportError(f"POST {url} returned {response.status_code}")
        if response.status_code != 200:
            raise GatewayError(
                f"POST {url} returned {response.status_code}: {response.text[:500]}"
            )
        return response.json()

    def complete(self, request: GenerationRequest) -> str:
        body = {
            "model": request.model_id,
            "messages": [m.to_json_dict() for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        data = self._post("/chat/completions", body)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat completion payload: {exc}") from exc
        if choice.get("finish_reason") not in (None, "stop"):
            raise ResponseTruncated(
                f"generation stopped early: finish_reason={choice.get('finish_reason')!r}"
            )
        return text

    def score(self, request: ScoreRequest) -> tuple[float, ...]:
        body = {
            "model": request.model_id,
            "prompt": request.prefix + request.continuation,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0.0,
        }
        data = self._post("/completions", body)
        try:
            logprobs = data["choices"][0]["logprobs"]
            token_logprobs = logprobs["token_logprobs"]
            offsets = logprobs["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise LogprobsUnsupported(
                f"backend returned no token logprobs for model {request.model_id}: {exc}"
            ) from exc
        cut = len(request.prefix)
        selected = [
            lp for lp, offset in zip(token_logprobs, offsets) if offset >= cut
        ]
        if not selected:
            raise LogprobsUnsupported(
                "no tokens fell inside the continuation; check tokenization boundaries"
            )
        if any(lp is None for lp in selected):
            raise LogprobsUnsupported(
                f"model {request.model_id} returned null logprobs inside the continuation"
            )
        return tuple(float(lp) for lp in selected)


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 0.5
    factor: float = 2.0

    def __post_init__(self) -> None:
        if self.attempts < 1:
            raise ValueError("retry attempts must be at least 1")

    def delay(self, attempt: int) -> float:
        return self.base_delay * (self.factor ** attempt)


class LlmGateway:
    """Mode-aware front door for all model traffic.

    Only TransportError retries; every other failure surfaces
    immediately. A semaphore caps in-flight backend calls so corpus-level
    parallelism cannot stampede the API.
    """

    def __init__(
        self,
        backend: Any = None,
        mode: GatewayMode | str = GatewayMode.REPLAY,
        cassette_path: Optional[Path | str] = None,
        retry: RetryPolicy = RetryPolicy(),
        max_in_flight: int = 4,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.mode = GatewayMode(mode)
        self.backend = backend
        self.retry = retry
        self._sleeper = sleeper
        self._semaphore = threading.Semaphore(max_in_flight)
        self.cassette = Cassette(cassette_path) if cassette_path is not None else None
        if self.mode is not GatewayMode.LIVE and self.cassette is None:
            raise ValueError(f"{self.mode.value} mode requires a cassette path")
        if self.mode is not GatewayMode.REPLAY and self.backend is None:
            raise ValueError(f"{self.mode.value} mode requires a backend")

    def _call_with_retry(self, fn: Callable[[], Any], label: str) -> Any:
        last: Optional[TransportError] = None
        for attempt in range(self.retry.attempts):
            try:
                with self._semaphore:
                    return fn()
            except TransportError as exc:
                last = exc
                if attempt + 1 < self.retry.attempts:
                    delay = self.retry.delay(attempt)
                    log.warning(
                        "%s failed (%s); retrying in %.2fs (%d/%d)",
                        label,
                        exc,
                        delay,
                        attempt + 2,
                        self.retry.attempts,
                    )
                    self._sleeper(delay)
        assert last is not None
        raise last

    def generate(self, request: GenerationRequest) -> str:
        if self.cassette is not None:
            record = self.cassette.get(request.fingerprint)
            if record is not None:
                return record["response"]["text"]
            if self.mode is GatewayMode.REPLAY:
                raise CassetteMiss(request.fingerprint)
        text = self._call_with_retry(
            lambda: self.backend.complete(request), f"generate {request.fingerprint[:12]}"
        )
        if self.mode is GatewayMode.RECORD:
            self.cassette.append(
                {
                    "fingerprint": request.fingerprint,
                    "kind": "generate",
                    "request": request.payload(),
                    "response": {"text": text},
                }
            )
        return text

    def score_continuation(
        self,
        model_id: str,
        prefix: str,
        continuation: str,
        aggregation: Aggregation | str = Aggregation.MEAN,
    ) -> ScoredContinuation:
        request = ScoreRequest(model_id=model_id, prefix=prefix, continuation=continuation)
        aggregation = Aggregation(aggregation)
        logprobs: Optional[tuple[float, ...]] = None
        if self.cassette is not None:
            record = self.cassette.get(request.fingerprint)
            if record is not None:
                logprobs = tuple(float(x) for x in record["response"]["logprobs"])
            elif self.mode is GatewayMode.REPLAY:
                raise CassetteMiss(request.fingerprint)
        if logprobs is None:
            logprobs = self._call_with_retry(
                lambda: self.backend.score(request), f"score {request.fingerprint[:12]}"
            )
            if self.mode is GatewayMode.RECORD:
                self.cassette.append(
                    {
                        "fingerprint": request.fingerprint,
                        "kind": "score",
                        "request": request.payload(),
                        "response": {"logprobs": list(logprobs)},
                    }
                )
        return ScoredContinuation(
            model_id=model_id,
            prefix=prefix,
            continuation=continuation,
            token_logprobs=logprobs,
            aggregation=aggregation,
            score=aggregate_logprobs(logprobs, aggregation),
        )
