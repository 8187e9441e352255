"""Transcript metrics: normalization, WER, BERTScore greedy matching, Kendall tau, divergence."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass

import numpy as np

from .kernels import edit_counts

TATWEEL = "ـ"

# Optional pre-metric canonicalisation for the script-normalised WER mode.
# Deliberately NOT part of the default normalization: the default evaluates
# raw decoder output, so orthographic variants stay visible to WER.
_HAMZA_MAP = str.maketrans({"أ": "ا", "إ": "ا"})  # أ إ -> ا
_TA_MARBUTA_MAP = str.maketrans({"ة": "ه"})  # ة -> ه
_DIGIT_MAP = str.maketrans(
    {chr(0x0660 + d): str(d) for d in range(10)} | {chr(0x06F0 + d): str(d) for d in range(10)}
)


class MetricError(ValueError):
    """Invalid metric input (empty reference, tied ranking, mismatched systems...)."""


@dataclass(frozen=True)
class NormalizedText:
    """Token sequence produced by metric-side normalization, plus the original text."""

    tokens: tuple[str, ...]
    original: str

    @property
    def joined(self) -> str:
        return " ".join(self.tokens)


def _is_stripped(ch: str) -> bool:
    # Unicode punctuation categories; the Arabic block's punctuation is category
    # P as well, and the tatweel filler is stripped by documented decision.
    return ch == TATWEEL or unicodedata.category(ch).startswith("P")


def script_normalise(text: str) -> str:
    """Arabic/Persian canonicalisation: hamza unification, ta-marbuta collapse,
    diacritic stripping, and Arabic-Indic to Western digit conversion."""
    text = text.translate(_HAMZA_MAP).translate(_TA_MARBUTA_MAP).translate(_DIGIT_MAP)
    return "".join(
        ch
        for ch in text
        if not (0x0600 <= ord(ch) <= 0x06FF and unicodedata.category(ch) == "Mn")
    )


def normalize(text: str, script_normalised: bool = False) -> NormalizedText:
    """Lowercase, delete punctuation, collapse whitespace, split to tokens.

    Arabic and Persian letters pass through unchanged; punctuation (including
    the Arabic block's punctuation marks) is deleted outright rather than
    replaced by a space. Idempotent: normalizing the joined token string
    yields the same tokens.
    """
    source = script_normalise(text) if script_normalised else text
    cleaned = "".join(ch for ch in source.lower() if not _is_stripped(ch))
    return NormalizedText(tokens=tuple(cleaned.split()), original=text)


@dataclass(frozen=True)
class WerOutcome:
    """Word error rate with its alignment counts. wer may exceed 1.0."""

    substitutions: int
    deletions: int
    insertions: int
    ref_len: int
    wer: float

    def __post_init__(self) -> None:
        if self.ref_len <= 0:
            raise MetricError("reference length must be positive")
        expected = (self.substitutions + self.deletions + self.insertions) / self.ref_len
        if abs(self.wer - expected) > 1e-9:
            raise MetricError("wer does not match (S+D+I)/N")

    @property
    def distance(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def _tokens_of(text) -> tuple[str, ...]:
    if isinstance(text, NormalizedText):
        return text.tokens
    return tuple(text)


def wer(reference, hypothesis) -> WerOutcome:
    """Word error rate (S+D+I)/N from a minimum edit-distance token alignment.

    Accepts NormalizedText or plain token sequences. The reference must be
    non-empty; the hypothesis may be empty (all deletions).
    """
    ref = _tokens_of(reference)
    hyp = _tokens_of(hypothesis)
    if not ref:
        raise MetricError("reference has no tokens; WER is undefined")
    vocab: dict[str, int] = {}
    for token in ref + hyp:
        vocab.setdefault(token, len(vocab))
    ref_ids = np.fromiter((vocab[t] for t in ref), dtype=np.int32, count=len(ref))
    hyp_ids = np.fromiter((vocab[t] for t in hyp), dtype=np.int32, count=len(hyp))
    subs, dels, ins = edit_counts(ref_ids, hyp_ids)
    return WerOutcome(
        substitutions=subs,
        deletions=dels,
        insertions=ins,
        ref_len=len(ref),
        wer=(subs + dels + ins) / len(ref),
    )


@dataclass(frozen=True)
class TokenEmbeddings:
    """Unit-norm contextual token vectors for one text."""

    tokens: tuple[str, ...]
    vectors: np.ndarray  # shape (len(tokens), d), rows L2-normalised

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        object.__setattr__(self, "vectors", vectors)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.tokens) or not self.tokens:
            raise MetricError("need one vector per token and at least one token")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise MetricError("token vectors must be unit-norm within 1e-6")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class BertScoreOutcome:
    precision: float
    recall: float
    f1: float

    def __post_init__(self) -> None:
        total = self.precision + self.recall
        if total != 0 and abs(self.f1 - 2 * self.precision * self.recall / total) > 1e-9:
            raise MetricError("f1 is not the harmonic mean of precision and recall")


def bertscore(ref: TokenEmbeddings, hyp: TokenEmbeddings) -> BertScoreOutcome:
    """Greedy soft token alignment: each side's tokens match their best cosine
    partner on the other side. No idf weighting, no baseline rescaling."""
    if ref.dim != hyp.dim:
        raise MetricError(f"embedding dimension mismatch: ref d={ref.dim}, hyp d={hyp.dim}")
    # Rows are unit-norm, so cosine similarity reduces to a dot product.
    sim = ref.vectors @ hyp.vectors.T
    precision = float(sim.max(axis=0).mean())
    recall = float(sim.max(axis=1).mean())
    total = precision + recall
    f1 = 2 * precision * recall / total if total != 0 else 0.0
    return BertScoreOutcome(precision=precision, recall=recall, f1=f1)


def kendall_tau(ranking_a: list[tuple[str, float]], ranking_b: list[tuple[str, float]]) -> float:
    """Rank concordance (C - D) / C(n,2) between two strict rankings.

    Both rankings must cover the same systems with scores oriented
    higher-is-better; tied scores within a ranking are rejected.
    """
    scores_a = dict(ranking_a)
    scores_b = dict(ranking_b)
    if len(scores_a) != len(ranking_a) or len(scores_b) != len(ranking_b):
        raise MetricError("duplicate system in ranking")
    if set(scores_a) != set(scores_b):
        raise MetricError("rankings cover different system sets")
    systems = sorted(scores_a)
    n = len(systems)
    if n < 2:
        raise MetricError("need at least two systems")
    for label, scores in (("first", scores_a), ("second", scores_b)):
        if len(set(scores.values())) != n:
            raise MetricError(f"tied scores in {label} ranking")
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = scores_a[systems[i]] - scores_a[systems[j]]
            db = scores_b[systems[i]] - scores_b[systems[j]]
            if (da > 0) == (db > 0):
                concordant += 1
            else:
                discordant += 1
    return (concordant - discordant) / (n * (n - 1) / 2)


def divergence(wer_value: float, f1: float) -> float:
    """How much WER over-penalises relative to the semantic error rate 1 - F1."""
    return wer_value - (1.0 - f1)


@dataclass(frozen=True)
class MetricRecord:
    """Per (sample, provider) metric row."""

    sample_id: str
    provider_id: str
    wer: WerOutcome
    bert: BertScoreOutcome
    delta: float

    def __post_init__(self) -> None:
        if abs(self.delta - divergence(self.wer.wer, self.bert.f1)) > 1e-9:
            raise MetricError("delta does not equal wer - (1 - f1)")

    @classmethod
    def compute(cls, sample_id: str, provider_id: str, wer_outcome: WerOutcome,
                bert_outcome: BertScoreOutcome) -> "MetricRecord":
        return cls(
            sample_id=sample_id,
            provider_id=provider_id,
            wer=wer_outcome,
            bert=bert_outcome,
            delta=divergence(wer_outcome.wer, bert_outcome.f1),
        )


METRIC_HEADER = ["sample_id", "provider_id", "S", "D", "I", "N", "wer", "P", "R", "F1", "delta"]


def write_metrics(path: str, records: list[MetricRecord]) -> None:
    from .corpus import write_atomic

    lines = ["\t".join(METRIC_HEADER)]
    for r in records:
        lines.append(
            "\t".join(
                [
                    r.sample_id,
                    r.provider_id,
                    str(r.wer.substitutions),
                    str(r.wer.deletions),
                    str(r.wer.insertions),
                    str(r.wer.ref_len),
                    repr(r.wer.wer),
                    repr(r.bert.precision),
                    repr(r.bert.recall),
                    repr(r.bert.f1),
                    repr(r.delta),
                ]
            )
        )
    write_atomic(path, "\n".join(lines) + "\n")


def load_metrics(path: str) -> list[MetricRecord]:
    from .corpus import _read_rows

    records = []
    for _number, fields in _read_rows(path, METRIC_HEADER):
        sid, provider, s, d, i, n, w, p, r, f1, delta = fields
        records.append(
            MetricRecord(
                sample_id=sid,
                provider_id=provider,
                wer=WerOutcome(int(s), int(d), int(i), int(n), float(w)),
                bert=BertScoreOutcome(float(p), float(r), float(f1)),
                delta=float(delta),
            )
        )
    return records
