import json
import sqlite3

import pytest

from csbench.corpus import LanguagePair, Sample
from csbench.ensemble import (
    DIMENSION_KEYS,
    AssessmentError,
    CheckpointStore,
    Dimension,
    DimensionScore,
    JudgeAssessment,
    JudgeTransportError,
    RetryPolicy,
    StoreCorruptionError,
    StubJudge,
    build_prompt,
    combine,
    load_assessments,
    parse_assessment,
    score_candidates,
    write_assessments,
)

FA = LanguagePair.PERSIAN_ENGLISH


def make_sample(i=1, transcript="این feature جدید کلی bug داره"):
    return Sample(id=f"s{i}", pair=FA, transcript=transcript, audio_ref=f"a{i}.mp3")


def make_response(overall=7, scores=None, hard_tokens=1, drop=None, extra=None):
    scores = scores or {}
    doc = {
        "overall_score": overall,
        "dimensions": {
            key: {"score": scores.get(key, 5), "evidence": f"evidence {key}"}
            for key in DIMENSION_KEYS
        },
        "hard_tokens": [
            {"token": f"t{i}", "reason": f"reason {i}"} for i in range(hard_tokens)
        ],
        "summary": "a summary",
    }
    if drop:
        section, _, leaf = drop.partition(".")
        if leaf:
            del doc[section][leaf]
        else:
            del doc[section]
    if extra:
        doc["dimensions"][extra] = {"score": 5, "evidence": ""}
    return json.dumps(doc, ensure_ascii=False)


class FakeJudge:
    """Scripted judge: yields queued responses/exceptions, then repeats the last."""

    def __init__(self, judge_id, responses):
        self.judge_id = judge_id
        self.responses = list(responses)
        self.calls = 0

    def send(self, prompt):
        self.calls += 1
        item = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if isinstance(item, Exception):
            raise item
        return item


class TestBuildPrompt:
    def test_contains_transcript_and_dimensions(self):
        sample = make_sample()
        prompt = build_prompt(sample)
        assert sample.transcript in prompt
        assert sample.pair.code in prompt
        for key in DIMENSION_KEYS:
            assert key in prompt

    def test_quotes_and_newlines_escaped(self):
        sample = make_sample(transcript='he said "hi"\nthen left')
        prompt = build_prompt(sample)
        assert '\\"hi\\"' in prompt
        assert "\\n" in prompt

    def test_deterministic(self):
        sample = make_sample()
        assert build_prompt(sample) == build_prompt(sample)


class TestParseAssessment:
    def test_well_formed(self):
        assessment = parse_assessment(make_response(overall=8), "judge-a")
        assert assessment.overall_score == 8
        assert len(assessment.dimensions) == 6
        assert assessment.judge_id == "judge-a"

    def test_markdown_fence_tolerated(self):
        raw = "```json\n" + make_response() + "\n```"
        assert parse_assessment(raw, "j").overall_score == 7

    def test_out_of_range_overall_names_field(self):
        with pytest.raises(AssessmentError, match="overall_score"):
            parse_assessment(make_response(overall=11), "j")

    def test_missing_dimension_named(self):
        raw = make_response(drop="dimensions.phonological_ambiguity")
        with pytest.raises(AssessmentError, match="phonological_ambiguity"):
            parse_assessment(raw, "j")

    def test_unknown_dimension_rejected(self):
        with pytest.raises(AssessmentError, match="bonus_dim"):
            parse_assessment(make_response(extra="bonus_dim"), "j")

    def test_too_many_hard_tokens(self):
        with pytest.raises(AssessmentError, match="hard_tokens"):
            parse_assessment(make_response(hard_tokens=6), "j")

    def test_five_hard_tokens_allowed(self):
        assert len(parse_assessment(make_response(hard_tokens=5), "j").hard_tokens) == 5

    def test_non_integer_score_named(self):
        raw = make_response(scores={"switching_density": 5})
        doc = json.loads(raw)
        doc["dimensions"]["switching_density"]["score"] = 5.5
        with pytest.raises(AssessmentError, match="switching_density"):
            parse_assessment(json.dumps(doc), "j")

    def test_garbage_rejected(self):
        with pytest.raises(AssessmentError, match="JSON"):
            parse_assessment("not json at all", "j")

    def test_missing_summary_named(self):
        with pytest.raises(AssessmentError, match="summary"):
            parse_assessment(make_response(drop="summary"), "j")


class TestCombine:
    def test_mean_without_flags(self):
        a = parse_assessment(make_response(overall=7), "a")
        b = parse_assessment(make_response(overall=9), "b")
        out = combine(a, b, "s1")
        assert out.ensemble_score == 8.0
        assert not out.flagged and out.flag_reasons == ()

    def test_halves_kept_exact(self):
        a = parse_assessment(make_response(overall=7), "a")
        b = parse_assessment(make_response(overall=8), "b")
        assert combine(a, b, "s1").ensemble_score == 7.5

    def test_dimension_gap_flags(self):
        a = parse_assessment(make_response(overall=7, scores={"switching_density": 2}), "a")
        b = parse_assessment(make_response(overall=9, scores={"switching_density": 6}), "b")
        out = combine(a, b, "s1")
        assert out.flagged
        assert out.flag_reasons == ((Dimension.SWITCHING_DENSITY, 4),)

    def test_identical_assessments(self):
        a = parse_assessment(make_response(overall=6), "a")
        b = parse_assessment(make_response(overall=6), "b")
        out = combine(a, b, "s1")
        assert out.ensemble_score == 6.0 and not out.flagged

    def test_same_judge_rejected(self):
        a = parse_assessment(make_response(), "a")
        with pytest.raises(AssessmentError, match="judge"):
            combine(a, a, "s1")

    def test_flag_grid_exhaustive_on_one_dimension(self):
        for i in range(1, 11):
            for j in range(1, 11):
                a = parse_assessment(make_response(scores={"slang_and_register_mix": i}), "a")
                b = parse_assessment(make_response(scores={"slang_and_register_mix": j}), "b")
                out = combine(a, b, "s")
                assert out.flagged == (abs(i - j) > 3)


class TestCheckpointStore:
    def test_round_trip(self, tmp_path):
        store = CheckpointStore(str(tmp_path / "cp.sqlite"))
        a = parse_assessment(make_response(overall=4), "a")
        b = parse_assessment(make_response(overall=6), "b")
        assessment = combine(a, b, "s1")
        store.put(assessment)
        assert store.get("s1") == assessment
        assert store.completed_ids() == {"s1"}

    def test_incomplete_entry_is_absent(self, tmp_path):
        path = tmp_path / "cp.sqlite"
        store = CheckpointStore(str(path))
        conn = sqlite3.connect(str(path))
        conn.execute(
            "INSERT INTO assessments (sample_id, payload, complete) VALUES ('s9', '{}', 0)"
        )
        conn.commit()
        conn.close()
        assert store.completed_ids() == set()
        assert store.get("s9") is None

    def test_failures_recorded_and_cleared(self, tmp_path):
        store = CheckpointStore(str(tmp_path / "cp.sqlite"))
        store.record_failure("s1", "transport down")
        assert store.failures() == {"s1": "transport down"}
        a = parse_assessment(make_response(), "a")
        b = parse_assessment(make_response(), "b")
        store.put(combine(a, b, "s1"))
        assert store.failures() == {}

    def test_corrupt_file_aborts(self, tmp_path):
        path = tmp_path / "cp.sqlite"
        path.write_bytes(b"this is not a sqlite file, clearly not")
        with pytest.raises(StoreCorruptionError):
            store = CheckpointStore(str(path))
            store.completed_ids()


class TestScoreCandidates:
    def fresh(self, tmp_path, n=10):
        store = CheckpointStore(str(tmp_path / "cp.sqlite"))
        samples = [make_sample(i, transcript=f"نمونه sample {i}") for i in range(n)]
        return store, samples

    def test_two_calls_per_candidate(self, tmp_path):
        store, samples = self.fresh(tmp_path)
        judges = (StubJudge("judge-a"), StubJudge("judge-b"))
        run = score_candidates(samples, judges, store)
        assert len(run.assessments) == 10
        assert judges[0].calls == 10 and judges[1].calls == 10
        assert [a.sample_id for a in run.assessments] == [s.id for s in samples]

    def test_rerun_issues_zero_calls_and_is_identical(self, tmp_path):
        store, samples = self.fresh(tmp_path)
        judges = (StubJudge("judge-a"), StubJudge("judge-b"))
        first = score_candidates(samples, judges, store)
        second = score_candidates(samples, judges, store)
        assert judges[0].calls == 10 and judges[1].calls == 10
        assert second.assessments == first.assessments
        assert second.resumed == 10

    def test_resume_after_partial_run(self, tmp_path):
        store, samples = self.fresh(tmp_path)
        warmup = (StubJudge("judge-a"), StubJudge("judge-b"))
        score_candidates(samples[:6], warmup, store)
        judges = (StubJudge("judge-a"), StubJudge("judge-b"))
        run = score_candidates(samples, judges, store)
        assert judges[0].calls + judges[1].calls == 8
        assert len(run.assessments) == 10 and run.resumed == 6

    def test_empty_candidates(self, tmp_path):
        store, _ = self.fresh(tmp_path, n=0)
        judges = (StubJudge("a"), StubJudge("b"))
        run = score_candidates([], judges, store)
        assert run.assessments == [] and judges[0].calls == 0

    def test_transport_failure_marks_sample_and_continues(self, tmp_path):
        store, samples = self.fresh(tmp_path, n=3)
        flaky = FakeJudge("a", [JudgeTransportError("down")])
        good = StubJudge("b")
        run = score_candidates(
            samples, (flaky, good), store, retry=RetryPolicy(backoff_base=0)
        )
        assert run.assessments == []
        assert {sid for sid, _ in run.failed} == {"s0", "s1", "s2"}
        assert set(store.failures()) == {"s0", "s1", "s2"}
        # 3 transport attempts per judged sample
        assert flaky.calls == 9

    def test_validation_failure_rerequests_exactly_once(self, tmp_path):
        store, samples = self.fresh(tmp_path, n=1)
        bad = FakeJudge("a", ["{invalid json"])
        good = StubJudge("b")
        run = score_candidates(samples, (bad, good), store, retry=RetryPolicy(backoff_base=0))
        assert bad.calls == 2  # initial + one re-request, no transport retries
        assert run.failed and run.failed[0][0] == "s0"

    def test_validation_failure_then_success(self, tmp_path):
        store, samples = self.fresh(tmp_path, n=1)
        recovering = FakeJudge("a", ["{invalid json", make_response(overall=9)])
        good = StubJudge("b")
        run = score_candidates(
            samples, (recovering, good), store, retry=RetryPolicy(backoff_base=0)
        )
        assert recovering.calls == 2
        assert len(run.assessments) == 1 and not run.failed

    def test_failed_sample_retried_on_rerun(self, tmp_path):
        store, samples = self.fresh(tmp_path, n=1)
        flaky = FakeJudge("a", [JudgeTransportError("down")])
        score_candidates(samples, (flaky, StubJudge("b")), store,
                         retry=RetryPolicy(backoff_base=0))
        run = score_candidates(samples, (StubJudge("a"), StubJudge("b")), store)
        assert len(run.assessments) == 1
        assert store.failures() == {}

    def test_exactly_two_judges_required(self, tmp_path):
        store, samples = self.fresh(tmp_path, n=1)
        with pytest.raises(AssessmentError, match="two judges"):
            score_candidates(samples, (StubJudge("a"),), store)


def test_assessment_ndjson_round_trip(tmp_path):
    a = parse_assessment(make_response(overall=3, scores={"switching_density": 9}), "a")
    b = parse_assessment(make_response(overall=8), "b")
    assessments = [combine(a, b, "s1")]
    path = tmp_path / "assessments.ndjson"
    write_assessments(str(path), assessments)
    assert load_assessments(str(path)) == assessments
    doc = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert doc["ensemble_score"] == 5.5
    assert doc["flagged"] is True


def test_judge_assessment_requires_all_dimensions():
    dims = tuple(
        DimensionScore(Dimension(key), 5, "") for key in DIMENSION_KEYS[:5]
    )
    with pytest.raises(AssessmentError, match="exactly once"):
        JudgeAssessment(judge_id="j", overall_score=5, dimensions=dims)
