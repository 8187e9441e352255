"""Candidate routing between pipeline stages and the final difficulty ranking.

Stage 1 forwards either every row (Latin-only pairs, where the script
signals are degenerate) or the top rows by composite difficulty. The final
benchmark split ranks assessed rows by ensemble score with the heuristic
composite as tie-breaker and ascending sample id as the last resort, giving
a reproducible total order. Pre-sampling for oversized corpora uses a
seeded keyed-hash ordering with the seed recorded in the run manifest.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

from .corpus import LanguagePair, write_atomic
from .ensemble import EnsembleAssessment

logger = logging.getLogger(__name__)

DEFAULT_FINAL_COUNT = 300


class SelectionError(ValueError):
    """Invalid policy or inputs for a selection step."""


@dataclass(frozen=True)
class SelectionPolicy:
    """Per-pair routing parameters (source size, optional pre-sample, counts)."""

    pair: LanguagePair
    source_size: int
    llm_candidate_count: int
    pre_sample: int | None = None
    final_count: int = DEFAULT_FINAL_COUNT
    rng_seed: int = 0
    forward_all: bool = False  # Latin-only pairs skip the heuristic threshold

    def __post_init__(self) -> None:
        pool = self.pre_sample if self.pre_sample is not None else self.source_size
        if self.pre_sample is not None and self.pre_sample > self.source_size:
            raise SelectionError("pre_sample cannot exceed source_size")
        if self.llm_candidate_count > pool:
            raise SelectionError("llm_candidate_count cannot exceed the scored pool")
        if self.final_count > self.llm_candidate_count:
            raise SelectionError("final_count cannot exceed llm_candidate_count")


@dataclass(frozen=True)
class RankedCandidate:
    sample_id: str
    ensemble_score: float
    h_score: float
    rank: int


def pre_sample(ids: list[str], n: int, seed: int) -> list[str]:
    """Uniform sample of n ids without replacement, in original list order.

    Each id is keyed by SHA-256 of "seed|id" and the n smallest keys win.
    A keyed-hash ordering is uniform over subsets and, unlike library PRNG
    streams, cannot drift between interpreter or library versions, so a
    recorded seed reproduces the same pre-sample forever.
    """
    if n > len(ids):
        raise SelectionError(f"cannot pre-sample {n} from {len(ids)} ids")
    keyed = sorted(
        ids, key=lambda sid: (hashlib.sha256(f"{seed}|{sid}".encode("utf-8")).digest(), sid)
    )
    keep = set(keyed[:n])
    return [sid for sid in ids if sid in keep]


def _h_of(entry) -> float:
    return entry.composite if hasattr(entry, "composite") else float(entry)


def stage1_select(scored: list[tuple[str, object]], policy: SelectionPolicy) -> list[str]:
    """Pick the candidate ids forwarded to LLM scoring.

    With forward_all every scored row passes through in order; otherwise the
    top llm_candidate_count rows by composite (descending, sample id as the
    deterministic tie-break). A pool smaller than the requested count is
    forwarded whole with a warning.
    """
    if policy.forward_all:
        return [sid for sid, _ in scored]
    if len(scored) < policy.llm_candidate_count:
        logger.warning(
            "scored pool for %s has %d rows, fewer than the %d requested; forwarding all",
            policy.pair.code,
            len(scored),
            policy.llm_candidate_count,
        )
        limit = len(scored)
    else:
        limit = policy.llm_candidate_count
    ranked = sorted(scored, key=lambda item: (-_h_of(item[1]), item[0]))
    return [sid for sid, _ in ranked[:limit]]


def final_select(
    assessments: list[EnsembleAssessment], h_scores: dict[str, float], k: int
) -> list[RankedCandidate]:
    """Rank by (ensemble desc, composite desc, sample id asc) and keep the top k."""
    missing = [a.sample_id for a in assessments if a.sample_id not in h_scores]
    if missing:
        raise SelectionError(f"no heuristic score for assessed ids: {missing[:5]}")
    ordered = sorted(
        assessments,
        key=lambda a: (-a.ensemble_score, -h_scores[a.sample_id], a.sample_id),
    )
    return [
        RankedCandidate(
            sample_id=a.sample_id,
            ensemble_score=a.ensemble_score,
            h_score=h_scores[a.sample_id],
            rank=i,
        )
        for i, a in enumerate(ordered[:k], start=1)
    ]


@dataclass(frozen=True)
class PolicyReduction:
    pair: LanguagePair
    source_size: int
    scored_pool: int
    candidates: int
    reduction_vs_pool: float
    reduction_vs_source: float


@dataclass(frozen=True)
class ReductionReport:
    """LLM-call savings from the heuristic filter on the script-mixing pairs."""

    rows: list[PolicyReduction]
    filtered_candidates: int
    filtered_source: int

    @property
    def call_fraction(self) -> float:
        return self.filtered_candidates / self.filtered_source

    @property
    def reduction_percent(self) -> float:
        return (1.0 - self.call_fraction) * 100.0

    def render(self) -> str:
        lines = [
            "pair\tsource\tscored_pool\tllm_candidates\treduction_vs_pool\treduction_vs_source"
        ]
        for row in self.rows:
            lines.append(
                "\t".join(
                    [
                        row.pair.code,
                        str(row.source_size),
                        str(row.scored_pool),
                        str(row.candidates),
                        f"{row.reduction_vs_pool * 100:.1f}%",
                        f"{row.reduction_vs_source * 100:.1f}%",
                    ]
                )
            )
        lines.append(
            f"filtered pairs total: {self.filtered_candidates}/{self.filtered_source} "
            f"LLM calls ({self.call_fraction * 100:.1f}%), "
            f"reduction {self.reduction_percent:.1f}%"
        )
        return "\n".join(lines)


def audit_reduction(policies: list[SelectionPolicy]) -> ReductionReport:
    """Compare LLM candidate counts to exhaustive scoring.

    The headline number aggregates over filter-active policies only (the
    script-mixing pairs); per-policy rows report the reduction against both
    the scored pool and the raw source, since a pre-sample makes the two
    bases differ.
    """
    rows = []
    filtered_candidates = filtered_source = 0
    for policy in policies:
        pool = policy.pre_sample if policy.pre_sample is not None else policy.source_size
        rows.append(
            PolicyReduction(
                pair=policy.pair,
                source_size=policy.source_size,
                scored_pool=pool,
                candidates=policy.llm_candidate_count,
                reduction_vs_pool=1.0 - policy.llm_candidate_count / pool,
                reduction_vs_source=1.0 - policy.llm_candidate_count / policy.source_size,
            )
        )
        if not policy.forward_all:
            filtered_candidates += policy.llm_candidate_count
            filtered_source += policy.source_size
    if not filtered_source:
        raise SelectionError("no filter-active policies to audit")
    return ReductionReport(
        rows=rows,
        filtered_candidates=filtered_candidates,
        filtered_source=filtered_source,
    )


POLICY_HEADER = [
    "pair", "source_size", "pre_sample", "llm_candidates", "final_count", "seed", "forward_all",
]


def load_policies(path: str) -> dict[LanguagePair, SelectionPolicy]:
    from .corpus import _read_rows

    policies: dict[LanguagePair, SelectionPolicy] = {}
    for number, fields in _read_rows(path, POLICY_HEADER):
        pair_code, source, pre, candidates, final, seed, forward = fields
        pair = LanguagePair.from_code(pair_code)
        if pair in policies:
            raise SelectionError(f"{path}: line {number}: duplicate policy for {pair.code}")
        policies[pair] = SelectionPolicy(
            pair=pair,
            source_size=int(source),
            pre_sample=None if pre in ("-", "") else int(pre),
            llm_candidate_count=int(candidates),
            final_count=int(final),
            rng_seed=int(seed),
            forward_all=forward.strip().lower() in ("yes", "true", "1"),
        )
    return policies


RANKING_HEADER = ["rank", "sample_id", "ensemble_score", "h_score"]


def write_ranking(path: str, ranked: list[RankedCandidate]) -> None:
    lines = ["\t".join(RANKING_HEADER)]
    for r in ranked:
        lines.append(
            "\t".join([str(r.rank), r.sample_id, repr(r.ensemble_score), repr(r.h_score)])
        )
    write_atomic(path, "\n".join(lines) + "\n")


def load_ranking(path: str) -> list[RankedCandidate]:
    from .corpus import _read_rows

    return [
        RankedCandidate(
            sample_id=fields[1],
            ensemble_score=float(fields[2]),
            h_score=float(fields[3]),
            rank=int(fields[0]),
        )
        for _n, fields in _read_rows(path, RANKING_HEADER)
    ]


def write_candidates(path: str, ids: list[str]) -> None:
    write_atomic(path, "\n".join(ids) + ("\n" if ids else ""))


def load_candidates(path: str) -> list[str]:
    with open(path, "r", encoding="utf-8") as handle:
        return [line.strip() for line in handle if line.strip()]
