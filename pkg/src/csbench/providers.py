"""Uniform transcription interface over commercial ASR providers.

Each provider is described by a ProviderSpec carrying its endpoint, exact
API parameters, supported language pairs, concurrency cap, and audio
requirement. Adapters build provider-specific requests against one abstract
transport so tests can inject a scripted transport; a replay provider serves
hypotheses from a fixture table for fully offline runs. Pair-support gating
happens before any transport work: an unsupported (provider, pair) never
dispatches a network call and yields an unsupported_pair result.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .corpus import (
    LanguagePair,
    ResultStatus,
    TranscriptionResult,
    write_atomic,
    write_results,
)

logger = logging.getLogger(__name__)

ALL_PAIRS = frozenset(LanguagePair)
KEY_ENV_TEMPLATE = "CSB_{}_KEY"


class ProviderError(RuntimeError):
    """Provider configuration or dispatch problem (not a transport failure)."""


class TransportError(ProviderError):
    """Network-level failure; retried, then surfaced as a provider_error result."""


class AudioRequirement(enum.Enum):
    ORIGINAL = "original"
    WAV_16K_MONO = "wav16kMono"


@dataclass(frozen=True)
class ProviderSpec:
    provider_id: str
    kind: str  # adapter family: elevenlabs, openai, google, azure, deepgram, replay
    endpoint: str = ""
    params: dict = field(default_factory=dict)
    supported_pairs: frozenset = ALL_PAIRS
    max_concurrency: int = 4
    audio_requirement: AudioRequirement = AudioRequirement.ORIGINAL
    key_env: str = ""

    def __post_init__(self) -> None:
        if self.max_concurrency < 1:
            raise ProviderError("max_concurrency must be positive")


@dataclass(frozen=True)
class TranscriptionJob:
    sample_id: str
    audio_path: str
    pair: LanguagePair
    provider_id: str | None = None  # bound when the job meets a spec


@dataclass(frozen=True)
class ProviderRequest:
    provider_id: str
    url: str
    headers: dict
    params: dict
    audio_path: str
    payload_kind: str  # multipart | json | binary


@dataclass(frozen=True)
class ProviderResponse:
    status: int
    body: str


# Default per-dataset candidate locales for segment-level LID. These are
# editable assumptions (the published configuration names only the Egyptian
# list explicitly) and can be overridden in the provider config file.
AZURE_DEFAULT_LOCALES = {
    "ar-eg-en": ["ar-EG", "en-US"],
    "ar-sa-en": ["ar-SA", "en-US"],
    "fa-en": ["fa-IR", "en-US"],
    "de-en": ["de-DE", "en-US"],
}


def default_specs() -> list[ProviderSpec]:
    """The five benchmark systems with their exact API parameters."""
    return [
        ProviderSpec(
            provider_id="elevenlabs",
            kind="elevenlabs",
            endpoint="https://api.elevenlabs.io/v1/speech-to-text",
            params={"model_id": "scribe_v2", "diarize": False, "no_verbatim": False},
            key_env=KEY_ENV_TEMPLATE.format("ELEVENLABS"),
        ),
        ProviderSpec(
            provider_id="openai",
            kind="openai",
            endpoint="https://api.openai.com/v1/audio/transcriptions",
            params={"model": "gpt-4o-transcribe", "response_format": "text", "temperature": 0},
            key_env=KEY_ENV_TEMPLATE.format("OPENAI"),
        ),
        ProviderSpec(
            provider_id="google",
            kind="google",
            endpoint="https://us-speech.googleapis.com/v2/recognize",
            params={
                "model": "chirp_3",
                "language_codes": ["auto"],
                "auto_decoding_config": {},
            },
            key_env=KEY_ENV_TEMPLATE.format("GOOGLE"),
        ),
        ProviderSpec(
            provider_id="azure",
            kind="azure",
            endpoint="https://eastus.stt.speech.microsoft.com/speech/recognition"
            "/conversation/cognitiveservices/v1",
            params={
                "SpeechServiceConnection_LanguageIdMode": "Continuous",
                "candidate_locales": dict(AZURE_DEFAULT_LOCALES),
            },
            max_concurrency=1,
            audio_requirement=AudioRequirement.WAV_16K_MONO,
            key_env=KEY_ENV_TEMPLATE.format("AZURE"),
        ),
        ProviderSpec(
            provider_id="deepgram",
            kind="deepgram",
            endpoint="https://api.deepgram.com/v1/listen",
            params={
                "model": "nova-3",
                "language": "multi",
                "smart_format": True,
                "punctuate": True,
            },
            supported_pairs=frozenset({LanguagePair.GERMAN_ENGLISH}),
            key_env=KEY_ENV_TEMPLATE.format("DEEPGRAM"),
        ),
    ]


def load_provider_specs(path: str) -> list[ProviderSpec]:
    """Read a provider config file (JSON mirroring the API-parameter table)."""
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    specs = []
    for entry in doc["providers"]:
        try:
            specs.append(
                ProviderSpec(
                    provider_id=entry["provider_id"],
                    kind=entry["kind"],
                    endpoint=entry.get("endpoint", ""),
                    params=entry.get("params", {}),
                    supported_pairs=frozenset(
                        LanguagePair.from_code(c) for c in entry["supported_pairs"]
                    ),
                    max_concurrency=entry.get("max_concurrency", 4),
                    audio_requirement=AudioRequirement(
                        entry.get("audio_requirement", "original")
                    ),
                    key_env=entry.get("key_env", ""),
                )
            )
        except KeyError as exc:
            raise ProviderError(f"{path}: provider entry missing field {exc}") from None
    return specs


REPLAY_HEADER = ["sample_id", "provider_id", "hypothesis"]


def load_replay_fixture(path: str) -> dict[tuple[str, str], str]:
    from .corpus import _read_rows

    table = {}
    for number, (sid, provider, hyp) in _read_rows(path, REPLAY_HEADER):
        key = (sid, provider)
        if key in table:
            raise ProviderError(f"{path}: line {number}: duplicate replay entry {key}")
        table[key] = hyp
    return table


@dataclass
class AudioConverter:
    """Shells out to an external converter with pinned arguments.

    Outputs are content-addressed by the input file's digest, so repeated
    conversions of the same audio reuse the cached file.
    """

    cache_dir: str
    command: tuple[str, ...] = (
        "ffmpeg", "-nostdin", "-y", "-i", "{input}", "-ar", "16000", "-ac", "1",
        "-f", "wav", "{output}",
    )

    def convert(self, path: str) -> str:
        with open(path, "rb") as handle:
            digest = hashlib.sha256(handle.read()).hexdigest()
        os.makedirs(self.cache_dir, exist_ok=True)
        target = os.path.join(self.cache_dir, f"{digest}.wav")
        if os.path.exists(target):
            return target
        argv = [arg.format(input=path, output=target) for arg in self.command]
        try:
            subprocess.run(argv, check=True, capture_output=True)
        except (OSError, subprocess.CalledProcessError) as exc:
            raise ProviderError(f"audio conversion failed for {path}: {exc}") from exc
        return target


def _auth_headers(spec: ProviderSpec) -> dict:
    key = os.environ.get(spec.key_env, "") if spec.key_env else ""
    if spec.kind == "elevenlabs":
        return {"xi-api-key": key}
    if spec.kind == "azure":
        return {"Ocp-Apim-Subscription-Key": key}
    return {"Authorization": f"Bearer {key}"}


def _build_request(job: TranscriptionJob, spec: ProviderSpec, audio_path: str) -> ProviderRequest:
    params = dict(spec.params)
    payload_kind = "multipart"
    if spec.kind == "google":
        payload_kind = "json"
    elif spec.kind == "azure":
        payload_kind = "binary"
        locales = params.pop("candidate_locales", AZURE_DEFAULT_LOCALES)
        params["candidate_locales"] = locales[job.pair.code]
    return ProviderRequest(
        provider_id=spec.provider_id,
        url=spec.endpoint,
        headers=_auth_headers(spec),
        params=params,
        audio_path=audio_path,
        payload_kind=payload_kind,
    )


def _parse_response(spec: ProviderSpec, body: str) -> str:
    try:
        if spec.kind == "elevenlabs":
            return json.loads(body)["text"]
        if spec.kind == "openai":
            return body.strip()
        if spec.kind == "google":
            doc = json.loads(body)
            return " ".join(
                r["alternatives"][0]["transcript"] for r in doc.get("results", [])
            ).strip()
        if spec.kind == "azure":
            return json.loads(body)["DisplayText"]
        if spec.kind == "deepgram":
            doc = json.loads(body)
            return doc["results"]["channels"][0]["alternatives"][0]["transcript"]
    except (ValueError, KeyError, IndexError) as exc:
        raise TransportError(f"{spec.provider_id}: unparseable response: {exc}") from exc
    raise ProviderError(f"no response parser for provider kind {spec.kind!r}")


class HttpTransport:
    """requests-backed transport executing a built ProviderRequest."""

    def __init__(self, timeout: float = 300.0):
        self.timeout = timeout

    def send(self, request: ProviderRequest) -> ProviderResponse:
        import requests

        try:
            if request.payload_kind == "multipart":
                with open(request.audio_path, "rb") as audio:
                    response = requests.post(
                        request.url,
                        headers=request.headers,
                        data={
                            k: json.dumps(v) if isinstance(v, (dict, list)) else v
                            for k, v in request.params.items()
                        },
                        files={"file": audio},
                        timeout=self.timeout,
                    )
            elif request.payload_kind == "json":
                with open(request.audio_path, "rb") as audio:
                    import base64

                    content = base64.b64encode(audio.read()).decode("ascii")
                response = requests.post(
                    request.url,
                    headers=request.headers,
                    json={**request.params, "content": content},
                    timeout=self.timeout,
                )
            else:
                with open(request.audio_path, "rb") as audio:
                    response = requests.post(
                        request.url,
                        headers={**request.headers, "Content-Type": "audio/wav"},
                        params={
                            k: json.dumps(v) if isinstance(v, (dict, list)) else v
                            for k, v in request.params.items()
                        },
                        data=audio.read(),
                        timeout=self.timeout,
                    )
            response.raise_for_status()
            return ProviderResponse(status=response.status_code, body=response.text)
        except requests.RequestException as exc:
            raise TransportError(f"{request.provider_id}: {exc}") from exc


@dataclass
class RetrySettings:
    attempts: int = 3
    backoff_base: float = 1.0


class ProviderClient:
    """Binds a spec to a transport and executes jobs against it."""

    def __init__(
        self,
        spec: ProviderSpec,
        transport=None,
        converter: AudioConverter | None = None,
        replay_table: dict[tuple[str, str], str] | None = None,
        retry: RetrySettings | None = None,
    ):
        self.spec = spec
        self.transport = transport
        self.converter = converter
        self.replay_table = replay_table
        self.retry = retry or RetrySettings()

    def transcribe(self, job: TranscriptionJob) -> TranscriptionResult:
        spec = self.spec
        if job.pair not in spec.supported_pairs:
            return TranscriptionResult(
                sample_id=job.sample_id,
                provider_id=spec.provider_id,
                hypothesis_raw="",
                status=ResultStatus.UNSUPPORTED_PAIR,
                latency_ms=0,
            )
        if spec.kind == "replay":
            return self._replay(job)
        if not os.path.exists(job.audio_path):
            raise ProviderError(f"audio file missing before dispatch: {job.audio_path}")
        audio_path = job.audio_path
        if spec.audio_requirement is AudioRequirement.WAV_16K_MONO:
            if self.converter is None:
                raise ProviderError(f"{spec.provider_id} requires 16 kHz mono WAV conversion")
            audio_path = self.converter.convert(job.audio_path)
        request = _build_request(job, spec, audio_path)
        started = time.monotonic()
        last: TransportError | None = None
        for attempt in range(self.retry.attempts):
            try:
                response = self.transport.send(request)
                hypothesis = _parse_response(spec, response.body)
                latency = int((time.monotonic() - started) * 1000)
                return TranscriptionResult(
                    sample_id=job.sample_id,
                    provider_id=spec.provider_id,
                    hypothesis_raw=hypothesis,
                    status=ResultStatus.OK,
                    latency_ms=latency,
                )
            except TransportError as exc:
                last = exc
                if attempt + 1 < self.retry.attempts and self.retry.backoff_base:
                    time.sleep(self.retry.backoff_base * (2**attempt))
        logger.warning("%s: giving up on %s: %s", spec.provider_id, job.sample_id, last)
        return TranscriptionResult(
            sample_id=job.sample_id,
            provider_id=spec.provider_id,
            hypothesis_raw="",
            status=ResultStatus.PROVIDER_ERROR,
            latency_ms=int((time.monotonic() - started) * 1000),
        )

    def _replay(self, job: TranscriptionJob) -> TranscriptionResult:
        table = self.replay_table or {}
        hypothesis = table.get((job.sample_id, self.spec.provider_id))
        if hypothesis is None:
            return TranscriptionResult(
                sample_id=job.sample_id,
                provider_id=self.spec.provider_id,
                hypothesis_raw="",
                status=ResultStatus.PROVIDER_ERROR,
                latency_ms=0,
            )
        return TranscriptionResult(
            sample_id=job.sample_id,
            provider_id=self.spec.provider_id,
            hypothesis_raw=hypothesis,
            status=ResultStatus.OK,
            latency_ms=0,
        )


def transcribe(job: TranscriptionJob, spec: ProviderSpec, **deps) -> TranscriptionResult:
    """One-shot convenience wrapper around ProviderClient."""
    return ProviderClient(spec, **deps).transcribe(job)


class _ResultCheckpoint:
    """Append-only result log giving crash-safe resume for benchmark runs."""

    def __init__(self, path: str):
        from .corpus import RESULT_HEADER, load_results

        self.path = path
        self._lock = threading.Lock()
        self.existing: dict[tuple[str, str], TranscriptionResult] = {}
        if path and os.path.exists(path):
            for result in load_results(path):
                self.existing[(result.sample_id, result.provider_id)] = result
        self._handle = None
        if path:
            fresh = not os.path.exists(path)
            self._handle = open(path, "a", encoding="utf-8", newline="\n")
            if fresh:
                self._handle.write("\t".join(RESULT_HEADER) + "\n")
                self._handle.flush()

    def append(self, result: TranscriptionResult) -> None:
        from .corpus import escape_field

        with self._lock:
            self.existing[(result.sample_id, result.provider_id)] = result
            if self._handle is not None:
                fields = (
                    result.sample_id,
                    result.provider_id,
                    result.status.value,
                    str(result.latency_ms),
                    result.hypothesis_raw,
                )
                self._handle.write("\t".join(escape_field(f) for f in fields) + "\n")
                self._handle.flush()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()


def run_benchmark(
    jobs: list[TranscriptionJob],
    specs: list[ProviderSpec],
    clients: dict[str, ProviderClient] | None = None,
    checkpoint_path: str = "",
    max_workers: int | None = None,
    **client_deps,
) -> list[TranscriptionResult]:
    """Run every job against every spec, bounded per-spec, resuming from a checkpoint.

    Completed (sample, provider) pairs in the checkpoint file are not
    re-dispatched. A failing provider or job never aborts the run: exceptions
    become provider_error results. On completion the checkpoint file is
    rewritten in canonical (spec order, job order) order so identical runs
    produce identical files.
    """
    clients = clients or {}
    checkpoint = _ResultCheckpoint(checkpoint_path)
    try:
        for spec in specs:
            client = clients.get(spec.provider_id) or ProviderClient(spec, **client_deps)
            pending = [
                job
                for job in jobs
                if (job.sample_id, spec.provider_id) not in checkpoint.existing
            ]
            if not pending:
                continue
            workers = spec.max_concurrency
            if max_workers is not None:
                workers = min(workers, max(1, max_workers))

            def run_one(job, client=client, spec=spec):
                try:
                    result = client.transcribe(job)
                except Exception as exc:  # noqa: BLE001 - per-job isolation
                    logger.error("%s failed on %s: %s", spec.provider_id, job.sample_id, exc)
                    result = TranscriptionResult(
                        sample_id=job.sample_id,
                        provider_id=spec.provider_id,
                        hypothesis_raw="",
                        status=ResultStatus.PROVIDER_ERROR,
                        latency_ms=0,
                    )
                checkpoint.append(result)

            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(run_one, pending))
        ordered = [
            checkpoint.existing[(job.sample_id, spec.provider_id)]
            for spec in specs
            for job in jobs
        ]
    finally:
        checkpoint.close()
    if checkpoint_path:
        write_results(checkpoint_path, ordered)
    return ordered


def write_provider_config(path: str, specs: list[ProviderSpec]) -> None:
    doc = {
        "providers": [
            {
                "provider_id": s.provider_id,
                "kind": s.kind,
                "endpoint": s.endpoint,
                "params": s.params,
                "supported_pairs": sorted(p.code for p in s.supported_pairs),
                "max_concurrency": s.max_concurrency,
                "audio_requirement": s.audio_requirement.value,
                "key_env": s.key_env,
            }
            for s in specs
        ]
    }
    write_atomic(path, json.dumps(doc, indent=2, ensure_ascii=False) + "\n")
