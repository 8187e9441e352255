import json

import pytest

from csbench.analysis import (
    AnalysisError,
    Quartile,
    aggregate,
    assign_quartiles,
    concordance_table,
    emit_plot_data,
    quartile_table,
    render_summary,
    top_divergence,
    write_aggregates,
    write_concordance,
    write_divergence,
    write_quartiles,
)
from csbench.corpus import LanguagePair
from csbench.metrics import BertScoreOutcome, MetricRecord, WerOutcome

EG = LanguagePair.EGYPTIAN_ARABIC_ENGLISH
SA = LanguagePair.SAUDI_ARABIC_ENGLISH
FA = LanguagePair.PERSIAN_ENGLISH
DE = LanguagePair.GERMAN_ENGLISH
ALL = {EG, SA, FA, DE}


def make_record(sample_id, provider, wer_value, f1):
    # Integer S over N=1000 keeps wer exactly representable for test values.
    s = round(wer_value * 1000)
    outcome = WerOutcome(s, 0, 0, 1000, s / 1000)
    bert = BertScoreOutcome(f1, f1, f1)  # harmonic mean of equal P/R is f1
    return MetricRecord.compute(sample_id, provider, outcome, bert)


class TestAssignQuartiles:
    def test_eight_samples_two_per_quartile(self):
        scores = [(f"s{i}", float(i)) for i in range(8)]
        assignments = assign_quartiles(scores)
        by_quartile = {}
        for a in assignments:
            by_quartile.setdefault(a.quartile, []).append(a.sample_id)
        assert by_quartile[Quartile.Q1] == ["s0", "s1"]
        assert by_quartile[Quartile.Q4] == ["s6", "s7"]

    def test_remainder_goes_to_lower_quartiles(self):
        scores = [(f"s{i}", float(i)) for i in range(10)]
        assignments = assign_quartiles(scores)
        sizes = [sum(1 for a in assignments if a.quartile is q) for q in Quartile]
        assert sizes == [3, 3, 2, 2]

    def test_equal_scores_split_by_id(self):
        scores = [(f"s{i}", 5.0) for i in (3, 1, 0, 2)]
        assignments = assign_quartiles(scores)
        assert [a.sample_id for a in assignments] == ["s0", "s1", "s2", "s3"]
        assert [a.quartile for a in assignments] == list(Quartile)

    def test_partition_and_band_ordering(self):
        scores = [(f"s{i:02d}", float((i * 17) % 23)) for i in range(23)]
        assignments = assign_quartiles(scores)
        assert sorted(a.sample_id for a in assignments) == sorted(s for s, _ in scores)
        for earlier, later in zip(list(Quartile), list(Quartile)[1:]):
            max_earlier = max(a.h_score for a in assignments if a.quartile is earlier)
            min_later = min(a.h_score for a in assignments if a.quartile is later)
            assert max_earlier <= min_later

    def test_fewer_than_four_rejected(self):
        with pytest.raises(AnalysisError, match="4"):
            assign_quartiles([("a", 1.0), ("b", 2.0), ("c", 3.0)])


class TestAggregate:
    def test_partial_coverage_flagged(self):
        records = []
        sample_pairs = {}
        for i, pair in enumerate(sorted(ALL, key=lambda p: p.code)):
            sid = f"s{i}"
            sample_pairs[sid] = pair
            records.append(make_record(sid, "deepgram", 0.05, 0.959))
        rows = aggregate(records, {"deepgram": {DE}}, sample_pairs)
        suppressed = [r for r in rows if r.suppressed]
        assert {r.key for r in suppressed} == {EG.code, SA.code, FA.code}
        assert all(r.mean_wer is None and r.mean_f1 is None for r in suppressed)
        overall = next(r for r in rows if r.key == "overall")
        assert overall.partial is True
        assert overall.sample_count == 1
        assert overall.mean_wer == pytest.approx(0.05)

    def test_single_record_mean_is_itself(self):
        records = [make_record("s1", "prov", 0.25, 0.9)]
        rows = aggregate(records, {"prov": ALL}, {"s1": EG})
        pair_row = next(r for r in rows if r.key == EG.code)
        assert pair_row.mean_wer == pytest.approx(0.25)
        assert pair_row.mean_f1 == pytest.approx(0.9)

    def test_empty_records(self):
        assert aggregate([], {}, {}) == []

    def test_overall_is_sample_weighted(self):
        records = [
            make_record("e1", "prov", 0.1, 0.9),
            make_record("e2", "prov", 0.2, 0.8),
            make_record("e3", "prov", 0.3, 0.7),
            make_record("g1", "prov", 0.5, 0.5),
        ]
        pairs = {"e1": EG, "e2": EG, "e3": EG, "g1": DE}
        rows = aggregate(records, {"prov": ALL}, pairs)
        overall = next(r for r in rows if r.key == "overall")
        per_pair = {r.key: r for r in rows if r.key != "overall"}
        weighted = (
            per_pair[EG.code].mean_wer * 3 + per_pair[DE.code].mean_wer * 1
        ) / 4
        assert overall.mean_wer == pytest.approx(weighted)
        assert overall.mean_wer == pytest.approx((0.1 + 0.2 + 0.3 + 0.5) / 4)

    def test_suppressed_never_contributes_to_overall(self):
        records = [
            make_record("g1", "prov", 0.1, 0.9),
            make_record("f1", "prov", 0.9, 0.1),
        ]
        rows = aggregate(records, {"prov": {DE}}, {"g1": DE, "f1": FA})
        overall = next(r for r in rows if r.key == "overall")
        assert overall.mean_wer == pytest.approx(0.1)
        assert overall.sample_count == 1


class TestQuartileTable:
    def test_unsupported_records_excluded(self):
        assignments = assign_quartiles([(f"s{i}", float(i)) for i in range(4)])
        records = [make_record(f"s{i}", "prov", 0.1 * (i + 1), 0.9) for i in range(4)]
        pairs = {f"s{i}": FA for i in range(4)}
        rows = quartile_table(records, assignments, {"prov": {DE}}, pairs)
        assert rows == []
        rows = quartile_table(records, assignments, {"prov": {FA}}, pairs)
        assert len(rows) == 4
        assert [r.quartile for r in rows] == list(Quartile)
        assert rows[0].mean_wer == pytest.approx(0.1)


class TestConcordance:
    def test_four_systems_in_agreement(self):
        scores = {
            EG: [("a", 0.13, 0.94), ("b", 0.39, 0.86), ("c", 0.40, 0.85), ("d", 0.60, 0.80)]
        }
        rows = concordance_table(scores)
        assert rows[0].systems == 4
        assert rows[0].pair_count == 6
        assert rows[0].tau == pytest.approx(1.0)

    def test_five_systems_one_discordant(self):
        # Best-WER system has slightly lower F1 than the runner-up: one
        # discordant pair out of ten.
        scores = {
            DE: [
                ("a", 0.018, 0.961),
                ("b", 0.041, 0.964),
                ("c", 0.050, 0.930),
                ("d", 0.060, 0.920),
                ("e", 0.171, 0.817),
            ]
        }
        rows = concordance_table(scores)
        assert rows[0].pair_count == 10
        assert rows[0].tau == pytest.approx(0.8)

    def test_two_systems_agreeing(self):
        rows = concordance_table({FA: [("a", 0.1, 0.9), ("b", 0.2, 0.8)]})
        assert (rows[0].systems, rows[0].pair_count, rows[0].tau) == (2, 1, 1.0)

    def test_single_system_rejected(self):
        with pytest.raises(AnalysisError, match="2 systems"):
            concordance_table({FA: [("a", 0.1, 0.9)]})


class TestTopDivergence:
    def test_k_capped_by_availability(self):
        records = [make_record(f"s{i}", "p", 0.1 * (i + 1), 0.9) for i in range(3)]
        pairs = {f"s{i}": FA for i in range(3)}
        rows = top_divergence(records, pairs, per_pair_k=5)
        assert len(rows) == 3
        assert rows[0].delta >= rows[1].delta >= rows[2].delta

    def test_bold_is_strictly_greater(self):
        exactly = make_record("s1", "p", 0.1, 1.0)  # delta exactly 0.1
        assert exactly.delta == 0.1
        above = make_record("s2", "p", 0.12, 1.0)
        rows = top_divergence([exactly, above], {"s1": FA, "s2": FA})
        by_id = {r.sample_id: r for r in rows}
        assert by_id["s1"].bold is False
        assert by_id["s2"].bold is True

    def test_nonpositive_deltas_still_emitted(self):
        records = [make_record("s1", "p", 0.0, 1.0), make_record("s2", "p", 0.1, 0.9)]
        rows = top_divergence(records, {"s1": FA, "s2": FA})
        assert len(rows) == 2
        assert not any(r.bold for r in rows)

    def test_excerpts_truncate_at_200_codepoints(self):
        record = make_record("s1", "p", 0.5, 0.5)
        long_text = "و" * 300
        rows = top_divergence(
            [record], {"s1": EG}, references={"s1": long_text},
            hypotheses={("s1", "p"): "short"},
        )
        assert len(rows[0].reference) == 201
        assert rows[0].reference.endswith("…")
        assert rows[0].hypothesis == "short"


class TestEmitPlotData:
    def test_grid_with_nulls(self, tmp_path):
        records = []
        sample_pairs = {}
        providers = ["p1", "p2", "p3", "p4"]
        for i, pair in enumerate(sorted(ALL, key=lambda p: p.code)):
            for provider in providers:
                sid = f"s{i}-{provider}"
                sample_pairs[sid] = pair
                records.append(make_record(sid, provider, 0.2, 0.8))
        support = {p: ALL for p in providers}
        support["p4"] = {DE}  # three pairs suppressed for p4
        rows = aggregate(records, support, sample_pairs)
        quartiles = []
        path = tmp_path / "plot.json"
        emit_plot_data(rows, quartiles, str(path))
        doc = json.loads(path.read_text(encoding="utf-8"))
        assert len(doc["wer"]) == 16 and len(doc["f1"]) == 16
        nulls = [c for c in doc["wer"] if c["value"] is None]
        assert {(c["pair"], c["provider"]) for c in nulls} == {
            (EG.code, "p4"), (SA.code, "p4"), (FA.code, "p4")
        }


def test_report_writers_and_summary(tmp_path):
    records = [
        make_record("s1", "p1", 0.1, 0.9),
        make_record("s2", "p1", 0.3, 0.7),
        make_record("s1", "p2", 0.2, 0.8),
        make_record("s2", "p2", 0.4, 0.6),
    ]
    pairs = {"s1": FA, "s2": FA}
    support = {"p1": ALL, "p2": ALL}
    rows = aggregate(records, support, pairs)
    assignments = assign_quartiles(
        [("s1", 2.0), ("s2", 4.0), ("s3", 6.0), ("s4", 8.0)]
    )
    quartiles = quartile_table(records, assignments, support, pairs)
    concordance = concordance_table({FA: [("p1", 0.2, 0.8), ("p2", 0.3, 0.7)]})
    div_rows = top_divergence(records, pairs)
    write_aggregates(str(tmp_path / "agg.tsv"), rows)
    write_quartiles(str(tmp_path / "q.tsv"), quartiles)
    write_concordance(str(tmp_path / "c.tsv"), concordance)
    write_divergence(str(tmp_path / "d.tsv"), div_rows)
    summary = render_summary(rows, quartiles, concordance, div_rows)
    assert "rank concordance" in summary
    assert "p1" in summary
    assert (tmp_path / "agg.tsv").read_text(encoding="utf-8").startswith("provider_id\t")
