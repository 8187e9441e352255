import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csbench.metrics import (
    BertScoreOutcome,
    MetricError,
    MetricRecord,
    TokenEmbeddings,
    WerOutcome,
    bertscore,
    divergence,
    kendall_tau,
    load_metrics,
    normalize,
    script_normalise,
    wer,
    write_metrics,
)

ARABIC_SENTENCE = "الـ feature بتاعي"


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def embeddings(tokens, vectors):
    return TokenEmbeddings(tokens=tuple(tokens), vectors=np.stack([unit(v) for v in vectors]))


class TestNormalize:
    def test_lowercase_and_punctuation(self):
        assert normalize("Hello,  WORLD!").tokens == ("hello", "world")

    def test_arabic_preserved_three_tokens(self):
        result = normalize(ARABIC_SENTENCE)
        assert len(result.tokens) == 3
        assert result.tokens[1] == "feature"
        assert result.tokens[2] == "بتاعي"

    def test_tatweel_removed(self):
        assert normalize("الـ").tokens == ("ال",)

    def test_arabic_punctuation_removed(self):
        assert normalize("ده محتاج redesign،").tokens == ("ده", "محتاج", "redesign")

    def test_idempotent_on_fixture(self):
        first = normalize(ARABIC_SENTENCE)
        assert normalize(first.joined).tokens == first.tokens

    @given(
        st.text(
            alphabet=st.characters(
                whitelist_categories=("Lu", "Ll", "Nd", "Po", "Zs"),
                whitelist_characters="أإآابتةثجحخدذرزسشصضطظعغفقكلمنهويپچژگ،؟؛ـ \t\n",
            ),
            max_size=60,
        )
    )
    @settings(max_examples=300)
    def test_idempotence_property(self, text):
        first = normalize(text)
        assert normalize(first.joined).tokens == first.tokens

    @given(
        st.text(
            alphabet=st.characters(
                whitelist_categories=("Lu", "Ll", "Nd", "Po", "Zs"),
                whitelist_characters="ابتةثجحخدذرزسشصضطظعغفقكلمنهوي",
            ),
            max_size=60,
        )
    )
    @settings(max_examples=300)
    def test_arabic_letters_never_altered(self, text):
        kept = normalize(text).joined
        for ch in text:
            if 0x0600 <= ord(ch) <= 0x06FF and ch != "ـ":
                import unicodedata

                if not unicodedata.category(ch).startswith("P"):
                    assert ch in kept


class TestScriptNormalise:
    def test_four_mappings(self):
        assert script_normalise("أحمد") == "احمد"
        assert script_normalise("إن") == "ان"
        assert script_normalise("مدرسة") == "مدرسه"
        assert script_normalise("٠١٢") == "012"
        assert script_normalise("۱۲۳") == "123"

    def test_diacritics_stripped(self):
        assert script_normalise("كَتَبَ") == "كتب"

    def test_default_normalize_keeps_variants(self):
        assert normalize("أحمد").tokens == ("أحمد",)
        assert normalize("أحمد", script_normalised=True).tokens == ("احمد",)


class TestWer:
    def test_identical(self):
        outcome = wer(["a", "b"], ["a", "b"])
        assert (outcome.substitutions, outcome.deletions, outcome.insertions) == (0, 0, 0)
        assert outcome.wer == 0.0

    def test_all_deletions(self):
        outcome = wer(["a", "b"], [])
        assert outcome.deletions == 2
        assert outcome.wer == 1.0

    def test_can_exceed_one(self):
        outcome = wer(["a"], ["x", "y", "z"])
        assert outcome.wer > 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(MetricError, match="reference"):
            wer([], ["a"])

    def test_accepts_normalized_text(self):
        out = wer(normalize("Hello world"), normalize("hello world"))
        assert out.wer == 0.0

    def test_distance_symmetric_with_d_i_exchanged(self):
        ref, hyp = ["a", "b", "c", "d"], ["a", "x", "d"]
        fwd = wer(ref, hyp)
        back = wer(hyp, ref)
        assert fwd.distance == back.distance
        assert (fwd.deletions, fwd.insertions) == (back.insertions, back.deletions)
        assert fwd.substitutions == back.substitutions


class TestBertScore:
    def test_identical_embeddings_perfect(self):
        emb = embeddings(["a", "b"], [[1, 0, 0], [0, 1, 0]])
        out = bertscore(emb, emb)
        assert out.precision == out.recall == out.f1 == pytest.approx(1.0)

    def test_orthonormal_two_ref_one_hyp(self):
        ref = embeddings(["a", "b"], [[1, 0], [0, 1]])
        hyp = embeddings(["a"], [[1, 0]])
        out = bertscore(ref, hyp)
        assert out.precision == pytest.approx(1.0)
        assert out.recall == pytest.approx(0.5)
        assert out.f1 == pytest.approx(2 / 3)

    def test_swap_exchanges_p_and_r(self):
        rng = np.random.default_rng(5)
        ref = embeddings(list("abc"), rng.standard_normal((3, 8)))
        hyp = embeddings(list("de"), rng.standard_normal((2, 8)))
        fwd = bertscore(ref, hyp)
        back = bertscore(hyp, ref)
        assert fwd.precision == pytest.approx(back.recall, abs=1e-12)
        assert fwd.recall == pytest.approx(back.precision, abs=1e-12)
        assert fwd.f1 == pytest.approx(back.f1, abs=1e-12)

    def test_matching_token_never_decreases_recall(self):
        rng = np.random.default_rng(9)
        ref = embeddings(list("abcd"), rng.standard_normal((4, 16)))
        hyp = embeddings(list("xy"), rng.standard_normal((2, 16)))
        base = bertscore(ref, hyp)
        extended = TokenEmbeddings(
            tokens=hyp.tokens + ("b",),
            vectors=np.vstack([hyp.vectors, ref.vectors[1:2]]),
        )
        assert bertscore(ref, extended).recall >= base.recall - 1e-12

    def test_dimension_mismatch_rejected(self):
        ref = embeddings(["a"], [[1, 0]])
        hyp = embeddings(["a"], [[1, 0, 0]])
        with pytest.raises(MetricError, match="dimension"):
            bertscore(ref, hyp)

    def test_non_unit_vectors_rejected(self):
        with pytest.raises(MetricError, match="unit-norm"):
            TokenEmbeddings(tokens=("a",), vectors=np.array([[2.0, 0.0]]))


class TestKendallTau:
    def test_identical_four_system_rankings(self):
        a = [("s1", 4.0), ("s2", 3.0), ("s3", 2.0), ("s4", 1.0)]
        assert kendall_tau(a, a) == pytest.approx(1.0)

    def test_five_systems_one_discordant_pair(self):
        a = [("s1", 5.0), ("s2", 4.0), ("s3", 3.0), ("s4", 2.0), ("s5", 1.0)]
        b = [("s1", 5.0), ("s2", 4.0), ("s3", 3.0), ("s4", 1.0), ("s5", 2.0)]
        assert kendall_tau(a, b) == pytest.approx(0.8)

    def test_reversal_is_minus_one(self):
        a = [("s1", 3.0), ("s2", 2.0), ("s3", 1.0)]
        b = [("s1", 1.0), ("s2", 2.0), ("s3", 3.0)]
        assert kendall_tau(a, b) == pytest.approx(-1.0)

    def test_monotone_transform_invariance(self):
        a = [("s1", 0.1), ("s2", 0.5), ("s3", 0.2), ("s4", 0.9)]
        b = [("s1", 10.0), ("s2", 3.0), ("s3", 7.0), ("s4", 1.0)]
        squared = [(s, v * v) for s, v in a]
        assert kendall_tau(a, b) == kendall_tau(squared, b)

    def test_ties_rejected(self):
        a = [("s1", 1.0), ("s2", 1.0), ("s3", 2.0)]
        b = [("s1", 1.0), ("s2", 2.0), ("s3", 3.0)]
        with pytest.raises(MetricError, match="tied"):
            kendall_tau(a, b)

    def test_mismatched_systems_rejected(self):
        with pytest.raises(MetricError, match="system"):
            kendall_tau([("s1", 1.0), ("s2", 2.0)], [("s1", 1.0), ("s3", 2.0)])


class TestDivergence:
    def test_perfect_transcription(self):
        assert divergence(0.0, 1.0) == 0.0

    def test_worked_value(self):
        assert divergence(0.308, 0.95) == pytest.approx(0.258)

    def test_agreement_case(self):
        assert divergence(0.25, 0.75) == pytest.approx(0.0)


def test_metric_record_delta_invariant():
    w = WerOutcome(1, 0, 0, 4, 0.25)
    b = BertScoreOutcome(0.9, 0.8, 2 * 0.9 * 0.8 / 1.7)
    record = MetricRecord.compute("s1", "prov", w, b)
    assert record.delta == pytest.approx(0.25 - (1 - b.f1))
    with pytest.raises(MetricError, match="delta"):
        MetricRecord("s1", "prov", w, b, delta=record.delta + 0.01)


def test_metric_file_round_trip(tmp_path):
    w = WerOutcome(1, 2, 0, 6, 0.5)
    b = BertScoreOutcome(0.875, 0.75, 2 * 0.875 * 0.75 / 1.625)
    records = [MetricRecord.compute("s1", "prov", w, b)]
    path = tmp_path / "metrics.tsv"
    write_metrics(str(path), records)
    assert load_metrics(str(path)) == records
