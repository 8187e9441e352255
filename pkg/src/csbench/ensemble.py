"""Stage-2 scoring: two LLM judges per candidate, averaged, with resumable checkpoints.

Each candidate transcript goes to two independent judges that return a
structured JSON assessment (overall 1-10, six dimension scores with evidence,
up to five hard tokens, a summary). The ensemble score is the exact mean of
the two overall scores; rows where the judges disagree by more than three
points on any dimension are flagged for inspection but stay eligible for
selection. Completed assessments land in a SQLite store so an interrupted
run resumes without re-requesting finished samples.
"""

from __future__ import annotations

import enum
import json
import os
import re
import sqlite3
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .corpus import Sample

FLAG_THRESHOLD = 3  # dimension-score gap that triggers a disagreement flag
JUDGE_TEMPERATURE = 0.1
JUDGE_A_KEY_ENV = "CSB_JUDGE_A_KEY"
JUDGE_B_KEY_ENV = "CSB_JUDGE_B_KEY"


class Dimension(enum.Enum):
    MORPHOLOGICAL_BLENDING = "morphological_blending"
    SWITCHING_DENSITY = "switching_density"
    SLANG_AND_REGISTER_MIX = "slang_and_register_mix"
    PHONOLOGICAL_AMBIGUITY = "phonological_ambiguity"
    NAMED_ENTITY_JARGON_DENSITY = "named_entity_jargon_density"
    SCRIPT_ORTHOGRAPHIC_COMPLEXITY = "script_orthographic_complexity"


DIMENSION_KEYS = tuple(d.value for d in Dimension)
MAX_HARD_TOKENS = 5


class AssessmentError(ValueError):
    """Judge response failed validation; the message names the offending field."""


class JudgeTransportError(RuntimeError):
    """Judge endpoint unreachable or returned a transport-level failure."""


class StoreCorruptionError(RuntimeError):
    """Checkpoint store unreadable; the run must abort rather than guess."""


@dataclass(frozen=True)
class DimensionScore:
    dimension: Dimension
    score: int
    evidence: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.score, int) or isinstance(self.score, bool):
            raise AssessmentError(f"dimensions.{self.dimension.value}.score must be an integer")
        if not 1 <= self.score <= 10:
            raise AssessmentError(
                f"dimensions.{self.dimension.value}.score {self.score} outside 1-10"
            )


@dataclass(frozen=True)
class JudgeAssessment:
    judge_id: str
    overall_score: int
    dimensions: tuple[DimensionScore, ...]
    hard_tokens: tuple[tuple[str, str], ...] = ()
    summary: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.overall_score, int) or isinstance(self.overall_score, bool):
            raise AssessmentError("overall_score must be an integer")
        if not 1 <= self.overall_score <= 10:
            raise AssessmentError(f"overall_score {self.overall_score} outside 1-10")
        seen = [d.dimension for d in self.dimensions]
        for dim in Dimension:
            if seen.count(dim) != 1:
                raise AssessmentError(f"dimensions.{dim.value} must appear exactly once")
        if len(self.hard_tokens) > MAX_HARD_TOKENS:
            raise AssessmentError(f"hard_tokens has {len(self.hard_tokens)} entries, cap is 5")

    def score_of(self, dimension: Dimension) -> int:
        return next(d.score for d in self.dimensions if d.dimension is dimension)

    def to_dict(self) -> dict:
        return {
            "judge_id": self.judge_id,
            "overall_score": self.overall_score,
            "dimensions": {
                d.dimension.value: {"score": d.score, "evidence": d.evidence}
                for d in self.dimensions
            },
            "hard_tokens": [{"token": t, "reason": r} for t, r in self.hard_tokens],
            "summary": self.summary,
        }


@dataclass(frozen=True)
class EnsembleAssessment:
    sample_id: str
    judges: tuple[JudgeAssessment, JudgeAssessment]
    ensemble_score: float
    flagged: bool
    flag_reasons: tuple[tuple[Dimension, int], ...] = ()

    def __post_init__(self) -> None:
        a, b = self.judges
        if self.ensemble_score != (a.overall_score + b.overall_score) / 2:
            raise AssessmentError("ensemble_score is not the mean of the overall scores")
        if self.flagged != bool(self.flag_reasons):
            raise AssessmentError("flagged must mirror the presence of flag reasons")

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "ensemble_score": self.ensemble_score,
            "flagged": self.flagged,
            "flag_reasons": [[dim.value, diff] for dim, diff in self.flag_reasons],
            "judges": [j.to_dict() for j in self.judges],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EnsembleAssessment":
        judges = tuple(
            JudgeAssessment(
                judge_id=j["judge_id"],
                overall_score=j["overall_score"],
                dimensions=tuple(
                    DimensionScore(Dimension(key), entry["score"], entry["evidence"])
                    for key, entry in j["dimensions"].items()
                ),
                hard_tokens=tuple((h["token"], h["reason"]) for h in j["hard_tokens"]),
                summary=j["summary"],
            )
            for j in doc["judges"]
        )
        return cls(
            sample_id=doc["sample_id"],
            judges=judges,
            ensemble_score=doc["ensemble_score"],
            flagged=doc["flagged"],
            flag_reasons=tuple((Dimension(d), diff) for d, diff in doc["flag_reasons"]),
        )


_SCHEMA_LINES = ",\n".join(
    f'    "{key}":         {{"score": <int 1-10>, "evidence": "..."}}' for key in DIMENSION_KEYS
)

_PROMPT_TEMPLATE = """You rate how difficult a code-switching utterance is for automatic speech recognition.

Language pair: {pair}
Transcript: {transcript}

Score the transcript on each of the six dimensions below from 1 (trivial) to 10 \
(extremely challenging), quoting verbatim evidence for each. List up to five hard \
tokens with a one-sentence recognition-risk reason each, then a one-sentence summary.

Return ONLY a JSON object with exactly this schema:
{{
  "overall_score": <int 1-10>,
  "dimensions": {{
{schema}
  }},
  "hard_tokens": [{{"token": "...", "reason": "..."}}],
  "summary": "..."
}}
"""


def build_prompt(sample: Sample) -> str:
    """Deterministic judge prompt embedding the transcript and pair label.

    The transcript is JSON-escaped so embedded quotes or newlines cannot break
    the instructed output schema.
    """
    return _PROMPT_TEMPLATE.format(
        pair=sample.pair.code,
        transcript=json.dumps(sample.transcript, ensure_ascii=False),
        schema=_SCHEMA_LINES,
    )


_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)\n\s*```", re.DOTALL)


def parse_assessment(raw: str, judge_id: str) -> JudgeAssessment:
    """Validate a judge response against the response schema.

    Raises AssessmentError naming the offending field on any violation:
    malformed JSON, out-of-range or non-integer scores, a missing or duplicated
    dimension, more than five hard tokens, or a missing summary.
    """
    fence = _FENCE_RE.search(raw)
    text = fence.group(1) if fence else raw
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AssessmentError(f"response is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise AssessmentError("response must be a JSON object")
    for key in ("overall_score", "dimensions", "hard_tokens", "summary"):
        if key not in doc:
            raise AssessmentError(f"missing field {key}")
    dims_doc = doc["dimensions"]
    if not isinstance(dims_doc, dict):
        raise AssessmentError("dimensions must be an object")
    for key in DIMENSION_KEYS:
        if key not in dims_doc:
            raise AssessmentError(f"missing field dimensions.{key}")
    for key in dims_doc:
        if key not in DIMENSION_KEYS:
            raise AssessmentError(f"unknown field dimensions.{key}")
    dimensions = []
    for key in DIMENSION_KEYS:
        entry = dims_doc[key]
        if not isinstance(entry, dict) or "score" not in entry:
            raise AssessmentError(f"dimensions.{key} must carry a score")
        evidence = entry.get("evidence", "")
        if not isinstance(evidence, str):
            raise AssessmentError(f"dimensions.{key}.evidence must be a string")
        dimensions.append(DimensionScore(Dimension(key), entry["score"], evidence))
    hard_doc = doc["hard_tokens"]
    if not isinstance(hard_doc, list):
        raise AssessmentError("hard_tokens must be a list")
    if len(hard_doc) > MAX_HARD_TOKENS:
        raise AssessmentError(f"hard_tokens has {len(hard_doc)} entries, cap is 5")
    hard_tokens = []
    for i, item in enumerate(hard_doc):
        if not isinstance(item, dict) or "token" not in item or "reason" not in item:
            raise AssessmentError(f"hard_tokens[{i}] must carry token and reason")
        hard_tokens.append((str(item["token"]), str(item["reason"])))
    if not isinstance(doc["summary"], str):
        raise AssessmentError("summary must be a string")
    return JudgeAssessment(
        judge_id=judge_id,
        overall_score=doc["overall_score"],
        dimensions=tuple(dimensions),
        hard_tokens=tuple(hard_tokens),
        summary=doc["summary"],
    )


def combine(a: JudgeAssessment, b: JudgeAssessment, sample_id: str) -> EnsembleAssessment:
    """Average the two judges and flag dimension disagreements above the threshold.

    The mean is kept exact (halves are representable); no rounding, since
    final ranking ties depend on exact values.
    """
    if a.judge_id == b.judge_id:
        raise AssessmentError(f"both assessments come from judge {a.judge_id!r}")
    reasons = []
    for dim in Dimension:
        diff = abs(a.score_of(dim) - b.score_of(dim))
        if diff > FLAG_THRESHOLD:
            reasons.append((dim, diff))
    return EnsembleAssessment(
        sample_id=sample_id,
        judges=(a, b),
        ensemble_score=(a.overall_score + b.overall_score) / 2,
        flagged=bool(reasons),
        flag_reasons=tuple(reasons),
    )


class CheckpointStore:
    """Durable single-file store keyed by sample id.

    Rows are written in two phases: the serialized assessment first, the
    completion marker after the payload is committed. An entry without its
    marker is treated as absent, so a crash can never leave a partial
    assessment that resumes as complete. Failure notes are kept separately
    for the run report and do not block a retry on rerun.
    """

    def __init__(self, path: str):
        self._lock = threading.Lock()
        try:
            self._conn = sqlite3.connect(path, check_same_thread=False)
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS assessments ("
                " sample_id TEXT PRIMARY KEY,"
                " payload TEXT NOT NULL,"
                " complete INTEGER NOT NULL DEFAULT 0)"
            )
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS failures ("
                " sample_id TEXT PRIMARY KEY,"
                " reason TEXT NOT NULL)"
            )
            self._conn.commit()
        except sqlite3.DatabaseError as exc:
            raise StoreCorruptionError(f"cannot open checkpoint store {path}: {exc}") from exc

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> "CheckpointStore":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def completed_ids(self) -> set[str]:
        try:
            with self._lock:
                rows = self._conn.execute(
                    "SELECT sample_id FROM assessments WHERE complete = 1"
                ).fetchall()
        except sqlite3.DatabaseError as exc:
            raise StoreCorruptionError(f"checkpoint store unreadable: {exc}") from exc
        return {r[0] for r in rows}

    def get(self, sample_id: str) -> EnsembleAssessment | None:
        try:
            with self._lock:
                row = self._conn.execute(
                    "SELECT payload FROM assessments WHERE sample_id = ? AND complete = 1",
                    (sample_id,),
                ).fetchone()
        except sqlite3.DatabaseError as exc:
            raise StoreCorruptionError(f"checkpoint store unreadable: {exc}") from exc
        if row is None:
            return None
        try:
            return EnsembleAssessment.from_dict(json.loads(row[0]))
        except (KeyError, ValueError) as exc:
            raise StoreCorruptionError(
                f"stored assessment for {sample_id!r} is unreadable: {exc}"
            ) from exc

    def put(self, assessment: EnsembleAssessment) -> None:
        payload = json.dumps(assessment.to_dict(), ensure_ascii=False)
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO assessments (sample_id, payload, complete)"
                " VALUES (?, ?, 0)",
                (assessment.sample_id, payload),
            )
            self._conn.commit()
            self._conn.execute(
                "UPDATE assessments SET complete = 1 WHERE sample_id = ?",
                (assessment.sample_id,),
            )
            self._conn.execute(
                "DELETE FROM failures WHERE sample_id = ?", (assessment.sample_id,)
            )
            self._conn.commit()

    def record_failure(self, sample_id: str, reason: str) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO failures (sample_id, reason) VALUES (?, ?)",
                (sample_id, reason),
            )
            self._conn.commit()

    def failures(self) -> dict[str, str]:
        with self._lock:
            rows = self._conn.execute("SELECT sample_id, reason FROM failures").fetchall()
        return dict(rows)


class StubJudge:
    """Deterministic offline judge: scores derive from a hash of (judge, transcript)."""

    def __init__(self, judge_id: str):
        self.judge_id = judge_id
        self.calls = 0

    def send(self, prompt: str) -> str:
        import hashlib

        self.calls += 1
        digest = hashlib.sha256(f"{self.judge_id}|{prompt}".encode("utf-8")).digest()
        scores = {key: digest[i] % 10 + 1 for i, key in enumerate(DIMENSION_KEYS)}
        doc = {
            "overall_score": digest[8] % 10 + 1,
            "dimensions": {
                key: {"score": score, "evidence": f"stub evidence for {key}"}
                for key, score in scores.items()
            },
            "hard_tokens": [{"token": "stub", "reason": "deterministic fixture"}],
            "summary": f"stub summary from {self.judge_id}",
        }
        return json.dumps(doc, ensure_ascii=False)


class HttpJudgeClient:
    """Chat-completions style HTTP judge adapter.

    Reads its API key from the configured environment variable; the endpoint
    and model name come from the run config. Responses are expected to carry
    the assessment JSON as the first message's content.
    """

    def __init__(self, judge_id: str, endpoint: str, model: str, key_env: str,
                 temperature: float = JUDGE_TEMPERATURE, timeout: float = 120.0):
        self.judge_id = judge_id
        self.endpoint = endpoint
        self.model = model
        self.key_env = key_env
        self.temperature = temperature
        self.timeout = timeout

    def send(self, prompt: str) -> str:
        import requests

        key = os.environ.get(self.key_env, "")
        if not key:
            raise JudgeTransportError(f"missing API key in ${self.key_env}")
        try:
            response = requests.post(
                self.endpoint,
                headers={"Authorization": f"Bearer {key}"},
                json={
                    "model": self.model,
                    "temperature": self.temperature,
                    "messages": [{"role": "user", "content": prompt}],
                },
                timeout=self.timeout,
            )
            response.raise_for_status()
            return response.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise JudgeTransportError(f"judge {self.judge_id} transport failure: {exc}") from exc


@dataclass
class RetryPolicy:
    transport_attempts: int = 3
    backoff_base: float = 0.5
    validation_rerequests: int = 1


@dataclass
class ScoreRun:
    """Outcome of one score_candidates invocation."""

    assessments: list[EnsembleAssessment]
    failed: list[tuple[str, str]] = field(default_factory=list)
    resumed: int = 0  # candidates satisfied from the checkpoint store


def _request_with_retries(judge, prompt: str, policy: RetryPolicy) -> str:
    last: Exception | None = None
    for attempt in range(policy.transport_attempts):
        try:
            return judge.send(prompt)
        except JudgeTransportError as exc:
            last = exc
            if attempt + 1 < policy.transport_attempts and policy.backoff_base:
                time.sleep(policy.backoff_base * (2**attempt))
    raise last  # type: ignore[misc]


def _judge_sample(judge, sample: Sample, policy: RetryPolicy) -> JudgeAssessment:
    prompt = build_prompt(sample)
    attempts = 1 + policy.validation_rerequests
    last_error: Exception | None = None
    for _ in range(attempts):
        raw = _request_with_retries(judge, prompt, policy)
        try:
            return parse_assessment(raw, judge.judge_id)
        except AssessmentError as exc:
            last_error = exc
    raise last_error  # type: ignore[misc]


def score_candidates(
    candidates: list[Sample],
    judges,
    store: CheckpointStore,
    max_in_flight: int = 4,
    retry: RetryPolicy | None = None,
) -> ScoreRun:
    """Assess every candidate with both judges, resuming from the store.

    Samples already completed in the store are returned without any judge
    call. Per sample the two judge requests run in parallel; across samples
    at most max_in_flight candidates are active. A sample whose judging
    ultimately fails is recorded and skipped, never aborting the run. Output
    order matches input order.
    """
    if len(judges) != 2:
        raise AssessmentError(f"need exactly two judges, got {len(judges)}")
    policy = retry or RetryPolicy()
    done = store.completed_ids()
    outcomes: dict[str, EnsembleAssessment] = {}
    failures: dict[str, str] = {}
    resumed = 0
    pending: list[Sample] = []
    for sample in candidates:
        if sample.id in done:
            cached = store.get(sample.id)
            assert cached is not None
            outcomes[sample.id] = cached
            resumed += 1
        else:
            pending.append(sample)

    def run_one(sample: Sample) -> None:
        with ThreadPoolExecutor(max_workers=2) as pair_pool:
            futures = [pair_pool.submit(_judge_sample, j, sample, policy) for j in judges]
            try:
                a, b = (f.result() for f in futures)
            except (JudgeTransportError, AssessmentError) as exc:
                failures[sample.id] = str(exc)
                store.record_failure(sample.id, str(exc))
                return
        assessment = combine(a, b, sample.id)
        store.put(assessment)
        outcomes[sample.id] = assessment

    if pending:
        with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
            list(pool.map(run_one, pending))

    ordered = [outcomes[s.id] for s in candidates if s.id in outcomes]
    failed = [(s.id, failures[s.id]) for s in candidates if s.id in failures]
    return ScoreRun(assessments=ordered, failed=failed, resumed=resumed)


def write_assessments(path: str, assessments: list[EnsembleAssessment]) -> None:
    """Export one JSON document per line mirroring the judge response schema."""
    from .corpus import write_atomic

    lines = [json.dumps(a.to_dict(), ensure_ascii=False) for a in assessments]
    write_atomic(path, "\n".join(lines) + ("\n" if lines else ""))


def load_assessments(path: str) -> list[EnsembleAssessment]:
    out = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                out.append(EnsembleAssessment.from_dict(json.loads(line)))
    return out
