"""Data model and file I/O for samples, datasets, and transcription results.

Files are UTF-8 tab-separated with a header row. Tab, newline, carriage
return, and backslash inside a field are C-escaped so that RTL transcripts
survive a round trip byte-exactly without any quoting ambiguity. Writes go
through a temp file + rename so readers never observe a partial file.
"""

from __future__ import annotations

import enum
import os
import tempfile
from dataclasses import dataclass, field


class CorpusFormatError(ValueError):
    """Malformed record, duplicate id, or wrong column count in a data file."""


class LanguagePair(enum.Enum):
    EGYPTIAN_ARABIC_ENGLISH = "ar-eg-en"
    SAUDI_ARABIC_ENGLISH = "ar-sa-en"
    PERSIAN_ENGLISH = "fa-en"
    GERMAN_ENGLISH = "de-en"

    @classmethod
    def from_code(cls, code: str) -> "LanguagePair":
        for pair in cls:
            if pair.value == code:
                return pair
        known = ", ".join(p.value for p in cls)
        raise CorpusFormatError(f"unknown language pair {code!r} (expected one of: {known})")

    @property
    def code(self) -> str:
        return self.value

    @property
    def latin_only(self) -> bool:
        """True when both languages of the pair are written in Latin script."""
        return self is LanguagePair.GERMAN_ENGLISH


class ResultStatus(enum.Enum):
    OK = "ok"
    PROVIDER_ERROR = "provider_error"
    UNSUPPORTED_PAIR = "unsupported_pair"


@dataclass(frozen=True)
class Sample:
    """One utterance: id, language pair, reference transcript, audio filename."""

    id: str
    pair: LanguagePair
    transcript: str
    audio_ref: str

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusFormatError("sample id must be non-empty")
        if not self.transcript.strip():
            raise CorpusFormatError(f"sample {self.id!r}: transcript is empty")


@dataclass
class Dataset:
    """Ordered collection of samples, all sharing one language pair."""

    pair: LanguagePair
    samples: list[Sample] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for sample in self.samples:
            if sample.pair is not self.pair:
                raise CorpusFormatError(
                    f"sample {sample.id!r} has pair {sample.pair.code}, dataset is {self.pair.code}"
                )
            if sample.id in seen:
                raise CorpusFormatError(f"duplicate sample id {sample.id!r}")
            seen.add(sample.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}


@dataclass(frozen=True)
class TranscriptionResult:
    """One provider hypothesis for one sample."""

    sample_id: str
    provider_id: str
    hypothesis_raw: str
    status: ResultStatus = ResultStatus.OK
    latency_ms: int = 0

    def __post_init__(self) -> None:
        if self.latency_ms < 0:
            raise CorpusFormatError(f"result {self.sample_id!r}: latency_ms must be >= 0")
        if self.status is ResultStatus.UNSUPPORTED_PAIR and self.hypothesis_raw:
            raise CorpusFormatError(
                f"result {self.sample_id!r}: unsupported_pair must carry an empty hypothesis"
            )


_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}

SAMPLE_HEADER = ["id", "pair", "transcript", "audio_ref"]
RESULT_HEADER = ["sample_id", "provider_id", "status", "latency_ms", "hypothesis_raw"]


def escape_field(value: str) -> str:
    out = []
    for ch in value:
        out.append(_ESCAPES.get(ch, ch))
    return "".join(out)


def unescape_field(value: str) -> str:
    out = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch == "\\":
            if i + 1 >= len(value) or value[i + 1] not in _UNESCAPES:
                raise CorpusFormatError(f"invalid escape sequence in field: {value!r}")
            out.append(_UNESCAPES[value[i + 1]])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def write_atomic(path: str, text: str) -> None:
    """Write text to path via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_rows(path: str, header: list[str]) -> list[tuple[int, list[str]]]:
    """Read a TSV file, validate the header, and return (line_number, fields) rows."""
    with open(path, "r", encoding="utf-8", newline="\n") as handle:
        lines = handle.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        return []
    if lines[0].split("\t") != header:
        raise CorpusFormatError(f"{path}: line 1: expected header {chr(9).join(header)!r}")
    rows = []
    for number, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(header):
            raise CorpusFormatError(
                f"{path}: line {number}: expected {len(header)} columns, got {len(fields)}"
            )
        try:
            rows.append((number, [unescape_field(f) for f in fields]))
        except CorpusFormatError as exc:
            raise CorpusFormatError(f"{path}: line {number}: {exc}") from None
    return rows


def load_dataset(path: str, pair: LanguagePair) -> Dataset:
    """Load a sample file, preserving file order. Duplicate ids are an error."""
    samples = []
    seen: set[str] = set()
    for number, (sid, code, transcript, audio_ref) in _read_rows(path, SAMPLE_HEADER):
        if code != pair.code:
            raise CorpusFormatError(
                f"{path}: line {number}: pair {code!r} does not match dataset pair {pair.code!r}"
            )
        if sid in seen:
            raise CorpusFormatError(f"{path}: line {number}: duplicate sample id {sid!r}")
        seen.add(sid)
        try:
            samples.append(Sample(id=sid, pair=pair, transcript=transcript, audio_ref=audio_ref))
        except CorpusFormatError as exc:
            raise CorpusFormatError(f"{path}: line {number}: {exc}") from None
    return Dataset(pair=pair, samples=samples)


def write_dataset(path: str, dataset: Dataset) -> None:
    lines = ["\t".join(SAMPLE_HEADER)]
    for s in dataset:
        lines.append(
            "\t".join(escape_field(f) for f in (s.id, s.pair.code, s.transcript, s.audio_ref))
        )
    write_atomic(path, "\n".join(lines) + "\n")


def load_results(path: str) -> list[TranscriptionResult]:
    results = []
    for number, (sid, provider, status, latency, hyp) in _read_rows(path, RESULT_HEADER):
        try:
            parsed_status = ResultStatus(status)
        except ValueError:
            raise CorpusFormatError(f"{path}: line {number}: unknown status {status!r}") from None
        if not latency.isdigit():
            raise CorpusFormatError(f"{path}: line {number}: latency_ms {latency!r} is not a count")
        results.append(
            TranscriptionResult(
                sample_id=sid,
                provider_id=provider,
                hypothesis_raw=hyp,
                status=parsed_status,
                latency_ms=int(latency),
            )
        )
    return results


def write_results(path: str, results: list[TranscriptionResult]) -> None:
    lines = ["\t".join(RESULT_HEADER)]
    for r in results:
        fields = (r.sample_id, r.provider_id, r.status.value, str(r.latency_ms), r.hypothesis_raw)
        lines.append("\t".join(escape_field(f) for f in fields))
    write_atomic(path, "\n".join(lines) + "\n")
