"""Aggregation and reporting: difficulty quartiles, per-pair tables, rank
concordance, divergence tables, and plot-data emission.

Suppression rule: a (provider, pair) outside the provider's support set is
reported as a suppressed row with no means and never contributes to overall
means, quartile tables, or rankings. Overall provider means are
sample-weighted across supported pairs.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from .corpus import LanguagePair, write_atomic
from .metrics import MetricRecord, kendall_tau

DISPLAY_TRUNCATION = 200  # codepoints kept in report excerpts
BOLD_THRESHOLD = 0.10  # strict: a row is bold iff delta > threshold
OVERALL_KEY = "overall"


class AnalysisError(ValueError):
    """Invalid aggregation input."""


class Quartile(enum.Enum):
    Q1 = "Q1"  # easiest: lowest composite scores
    Q2 = "Q2"
    Q3 = "Q3"
    Q4 = "Q4"  # hardest


@dataclass(frozen=True)
class QuartileAssignment:
    sample_id: str
    quartile: Quartile
    h_score: float


def assign_quartiles(h_scores: list[tuple[str, float]]) -> list[QuartileAssignment]:
    """Split samples into four contiguous difficulty bands by composite score.

    Samples sort ascending by score with sample id as the stable tie order;
    any remainder goes to the lower quartiles, so sizes differ by at most one.
    """
    if len(h_scores) < 4:
        raise AnalysisError(f"need at least 4 samples to stratify, got {len(h_scores)}")
    ordered = sorted(h_scores, key=lambda item: (item[1], item[0]))
    base, remainder = divmod(len(ordered), 4)
    assignments = []
    start = 0
    for index, quartile in enumerate(Quartile):
        size = base + (1 if index < remainder else 0)
        for sample_id, h in ordered[start:start + size]:
            assignments.append(QuartileAssignment(sample_id, quartile, h))
        start += size
    return assignments


@dataclass(frozen=True)
class AggregateRow:
    provider_id: str
    key: str  # pair code or "overall"
    mean_wer: float | None
    mean_f1: float | None
    sample_count: int
    suppressed: bool = False
    partial: bool = False  # overall covers fewer pairs than the benchmark


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def aggregate(
    records: list[MetricRecord],
    support: dict[str, set[LanguagePair]],
    sample_pairs: dict[str, LanguagePair],
) -> list[AggregateRow]:
    """Per-provider per-pair means plus a sample-weighted overall per provider."""
    groups: dict[tuple[str, LanguagePair], list[MetricRecord]] = {}
    for record in records:
        pair = sample_pairs.get(record.sample_id)
        if pair is None:
            raise AnalysisError(f"no language pair known for sample {record.sample_id!r}")
        groups.setdefault((record.provider_id, pair), []).append(record)

    providers = sorted({p for p, _ in groups})
    pairs_present = sorted({pair for _, pair in groups}, key=lambda p: p.code)
    rows = []
    for provider in providers:
        supported = support.get(provider, set(LanguagePair))
        kept: list[MetricRecord] = []
        covered: set[LanguagePair] = set()
        for pair in pairs_present:
            bucket = groups.get((provider, pair))
            if bucket is None:
                continue
            if pair not in supported:
                rows.append(
                    AggregateRow(provider, pair.code, None, None, len(bucket), suppressed=True)
                )
                continue
            rows.append(
                AggregateRow(
                    provider,
                    pair.code,
                    _mean([r.wer.wer for r in bucket]),
                    _mean([r.bert.f1 for r in bucket]),
                    len(bucket),
                )
            )
            kept.extend(bucket)
            covered.add(pair)
        if kept:
            rows.append(
                AggregateRow(
                    provider,
                    OVERALL_KEY,
                    _mean([r.wer.wer for r in kept]),
                    _mean([r.bert.f1 for r in kept]),
                    len(kept),
                    partial=covered < set(pairs_present),
                )
            )
    return rows


@dataclass(frozen=True)
class QuartileRow:
    provider_id: str
    quartile: Quartile
    mean_wer: float
    mean_f1: float
    sample_count: int


def quartile_table(
    records: list[MetricRecord],
    assignments: list[QuartileAssignment],
    support: dict[str, set[LanguagePair]],
    sample_pairs: dict[str, LanguagePair],
) -> list[QuartileRow]:
    """Mean metrics per (provider, difficulty quartile) over supported samples."""
    quartile_of = {a.sample_id: a.quartile for a in assignments}
    buckets: dict[tuple[str, Quartile], list[MetricRecord]] = {}
    for record in records:
        pair = sample_pairs.get(record.sample_id)
        supported = support.get(record.provider_id, set(LanguagePair))
        if pair is None or pair not in supported:
            continue
        quartile = quartile_of.get(record.sample_id)
        if quartile is None:
            continue
        buckets.setdefault((record.provider_id, quartile), []).append(record)
    rows = []
    for provider in sorted({p for p, _ in buckets}):
        for quartile in Quartile:
            bucket = buckets.get((provider, quartile))
            if bucket:
                rows.append(
                    QuartileRow(
                        provider,
                        quartile,
                        _mean([r.wer.wer for r in bucket]),
                        _mean([r.bert.f1 for r in bucket]),
                        len(bucket),
                    )
                )
    return rows


@dataclass(frozen=True)
class ConcordanceRow:
    pair: LanguagePair
    systems: int
    pair_count: int
    tau: float


def concordance_table(
    per_pair_scores: dict[LanguagePair, list[tuple[str, float, float]]],
) -> list[ConcordanceRow]:
    """Kendall tau between the WER ranking and the F1 ranking per pair.

    Lower WER is better, so WER scores are negated to orient both rankings
    higher-is-better before comparing.
    """
    rows = []
    for pair in sorted(per_pair_scores, key=lambda p: p.code):
        scores = per_pair_scores[pair]
        if len(scores) < 2:
            raise AnalysisError(f"{pair.code}: need at least 2 systems for concordance")
        wer_ranking = [(system, -wer) for system, wer, _ in scores]
        f1_ranking = [(system, f1) for system, _, f1 in scores]
        tau = kendall_tau(wer_ranking, f1_ranking)
        n = len(scores)
        rows.append(ConcordanceRow(pair, n, n * (n - 1) // 2, tau))
    return rows


@dataclass(frozen=True)
class DivergenceRow:
    pair: LanguagePair
    sample_id: str
    provider_id: str
    wer: float
    f1: float
    delta: float
    bold: bool
    reference: str = ""
    hypothesis: str = ""


def _excerpt(text: str) -> str:
    if len(text) <= DISPLAY_TRUNCATION:
        return text
    return text[:DISPLAY_TRUNCATION] + "…"


def top_divergence(
    records: list[MetricRecord],
    sample_pairs: dict[str, LanguagePair],
    references: dict[str, str] | None = None,
    hypotheses: dict[tuple[str, str], str] | None = None,
    per_pair_k: int = 5,
    bold_threshold: float = BOLD_THRESHOLD,
) -> list[DivergenceRow]:
    """The k records with the largest WER-BERTScore divergence per pair.

    Rows are bold iff delta strictly exceeds the threshold. Reference and
    hypothesis texts are report excerpts, truncated at 200 codepoints; the
    underlying data stays untruncated.
    """
    references = references or {}
    hypotheses = hypotheses or {}
    by_pair: dict[LanguagePair, list[MetricRecord]] = {}
    for record in records:
        pair = sample_pairs.get(record.sample_id)
        if pair is None:
            raise AnalysisError(f"no language pair known for sample {record.sample_id!r}")
        by_pair.setdefault(pair, []).append(record)
    rows = []
    for pair in sorted(by_pair, key=lambda p: p.code):
        bucket = sorted(
            by_pair[pair], key=lambda r: (-r.delta, r.sample_id, r.provider_id)
        )
        for record in bucket[:per_pair_k]:
            rows.append(
                DivergenceRow(
                    pair=pair,
                    sample_id=record.sample_id,
                    provider_id=record.provider_id,
                    wer=record.wer.wer,
                    f1=record.bert.f1,
                    delta=record.delta,
                    bold=record.delta > bold_threshold,
                    reference=_excerpt(references.get(record.sample_id, "")),
                    hypothesis=_excerpt(
                        hypotheses.get((record.sample_id, record.provider_id), "")
                    ),
                )
            )
    return rows


def emit_plot_data(
    aggregates: list[AggregateRow],
    quartiles: list[QuartileRow],
    path: str,
) -> None:
    """Write grouped-bar plot data (pair x provider x metric) as JSON.

    Suppressed cells appear as explicit nulls so the provider grid stays
    rectangular for external plotting.
    """
    pair_rows = [row for row in aggregates if row.key != OVERALL_KEY]
    providers = sorted({row.provider_id for row in pair_rows})
    pairs = sorted({row.key for row in pair_rows})
    cells = {(row.provider_id, row.key): row for row in pair_rows}
    doc: dict = {"wer": [], "f1": [], "quartiles": []}
    for pair in pairs:
        for provider in providers:
            row = cells.get((provider, pair))
            wer_value = row.mean_wer if row and not row.suppressed else None
            f1_value = row.mean_f1 if row and not row.suppressed else None
            doc["wer"].append({"pair": pair, "provider": provider, "value": wer_value})
            doc["f1"].append({"pair": pair, "provider": provider, "value": f1_value})
    for row in quartiles:
        doc["quartiles"].append(
            {
                "provider": row.provider_id,
                "quartile": row.quartile.value,
                "wer": row.mean_wer,
                "f1": row.mean_f1,
                "count": row.sample_count,
            }
        )
    write_atomic(path, json.dumps(doc, indent=2, ensure_ascii=False) + "\n")


def _format(value: float | None) -> str:
    return "-" if value is None else repr(value)


AGGREGATE_HEADER = ["provider_id", "key", "mean_wer", "mean_f1", "sample_count",
                    "suppressed", "partial"]
QUARTILE_HEADER = ["provider_id", "quartile", "mean_wer", "mean_f1", "sample_count"]
CONCORDANCE_HEADER = ["pair", "n", "pair_count", "tau"]
DIVERGENCE_HEADER = ["pair", "sample_id", "provider_id", "wer", "f1", "delta", "bold",
                     "reference", "hypothesis"]


def write_aggregates(path: str, rows: list[AggregateRow]) -> None:
    lines = ["\t".join(AGGREGATE_HEADER)]
    for r in rows:
        lines.append(
            "\t".join(
                [r.provider_id, r.key, _format(r.mean_wer), _format(r.mean_f1),
                 str(r.sample_count), str(r.suppressed).lower(), str(r.partial).lower()]
            )
        )
    write_atomic(path, "\n".join(lines) + "\n")


def write_quartiles(path: str, rows: list[QuartileRow]) -> None:
    lines = ["\t".join(QUARTILE_HEADER)]
    for r in rows:
        lines.append(
            "\t".join(
                [r.provider_id, r.quartile.value, repr(r.mean_wer), repr(r.mean_f1),
                 str(r.sample_count)]
            )
        )
    write_atomic(path, "\n".join(lines) + "\n")


def write_concordance(path: str, rows: list[ConcordanceRow]) -> None:
    lines = ["\t".join(CONCORDANCE_HEADER)]
    for r in rows:
        lines.append("\t".join([r.pair.code, str(r.systems), str(r.pair_count),
                                f"{r.tau:.3f}"]))
    write_atomic(path, "\n".join(lines) + "\n")


def write_divergence(path: str, rows: list[DivergenceRow]) -> None:
    from .corpus import escape_field

    lines = ["\t".join(DIVERGENCE_HEADER)]
    for r in rows:
        lines.append(
            "\t".join(
                [r.pair.code, r.sample_id, r.provider_id, repr(r.wer), repr(r.f1),
                 repr(r.delta), str(r.bold).lower(), escape_field(r.reference),
                 escape_field(r.hypothesis)]
            )
        )
    write_atomic(path, "\n".join(lines) + "\n")


def render_summary(
    aggregates: list[AggregateRow],
    quartiles: list[QuartileRow],
    concordance: list[ConcordanceRow],
    divergence: list[DivergenceRow],
) -> str:
    """Human-readable digest of the report tables."""
    lines = ["== Overall results (sample-weighted over supported pairs) =="]
    for row in aggregates:
        if row.key != OVERALL_KEY:
            continue
        note = "  [partial coverage; not directly comparable]" if row.partial else ""
        lines.append(
            f"{row.provider_id}: WER {row.mean_wer * 100:.1f}%  "
            f"F1 {row.mean_f1:.3f}  (n={row.sample_count}){note}"
        )
    lines.append("")
    lines.append("== Mean WER by difficulty quartile ==")
    for row in quartiles:
        lines.append(
            f"{row.provider_id} {row.quartile.value}: WER {row.mean_wer * 100:.1f}%  "
            f"F1 {row.mean_f1:.3f}  (n={row.sample_count})"
        )
    lines.append("")
    lines.append("== WER-BERTScore rank concordance ==")
    for row in concordance:
        lines.append(
            f"{row.pair.code}: n={row.systems} pairs={row.pair_count} tau={row.tau:.3f}"
        )
    lines.append("")
    lines.append("== Top WER-BERTScore divergence (bold = delta > 0.10) ==")
    for row in divergence:
        marker = "*" if row.bold else " "
        lines.append(
            f"{marker} {row.pair.code} {row.sample_id} {row.provider_id}: "
            f"WER {row.wer:.3f} F1 {row.f1:.3f} delta {row.delta:+.3f}"
        )
    return "\n".join(lines) + "\n"
