"""Command-line surface wiring the pipeline stages together.

One executable with subcommands mirroring the pipeline order:

    score-heuristic -> select --stage candidates -> score-ensemble
        -> select --stage final -> transcribe -> evaluate -> analyze / audit

Every stage reads and writes conventional filenames under --out-dir and
updates a run manifest (seeds, config hash, stage completion markers, model
identifiers) so a deterministic stage can be reproduced from the manifest
alone. Secrets come from environment variables only; everything else lives
in the config file so reruns do not depend on ambient state.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import uuid
from dataclasses import dataclass, field

from . import analysis, heuristics, metrics, providers, selection
from .corpus import (
    CorpusFormatError,
    Dataset,
    LanguagePair,
    ResultStatus,
    load_dataset,
    load_results,
    write_atomic,
)
from .embeddings import HashEmbeddingBackend, ServiceEmbeddingBackend
from .ensemble import (
    CheckpointStore,
    HttpJudgeClient,
    StubJudge,
    load_assessments,
    score_candidates,
    write_assessments,
)


class CliError(RuntimeError):
    """User-facing failure: bad flag, missing file, invalid config."""


# Conventional stage outputs under --out-dir.
def hscores_path(out_dir: str, pair: LanguagePair) -> str:
    return os.path.join(out_dir, f"hscores-{pair.code}.tsv")


def candidates_path(out_dir: str, pair: LanguagePair) -> str:
    return os.path.join(out_dir, f"candidates-{pair.code}.txt")


def store_path(out_dir: str, pair: LanguagePair) -> str:
    return os.path.join(out_dir, f"ensemble-{pair.code}.sqlite")


def assessments_path(out_dir: str, pair: LanguagePair) -> str:
    return os.path.join(out_dir, f"assessments-{pair.code}.ndjson")


def ranking_path(out_dir: str, pair: LanguagePair) -> str:
    return os.path.join(out_dir, f"ranked-{pair.code}.tsv")


def results_path(out_dir: str, pair: LanguagePair) -> str:
    return os.path.join(out_dir, f"results-{pair.code}.tsv")


def metrics_path(out_dir: str, pair: LanguagePair) -> str:
    return os.path.join(out_dir, f"metrics-{pair.code}.tsv")


def report_dir(out_dir: str) -> str:
    return os.path.join(out_dir, "report")


@dataclass
class RunManifest:
    """Reproducibility record for one output directory."""

    run_id: str
    config_hash: str = ""
    seeds: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)

    @classmethod
    def load_or_create(cls, out_dir: str, config_hash: str) -> "RunManifest":
        path = os.path.join(out_dir, "manifest.json")
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as handle:
                doc = json.load(handle)
            manifest = cls(
                run_id=doc["run_id"],
                config_hash=doc.get("config_hash", ""),
                seeds=doc.get("seeds", {}),
                stages=doc.get("stages", {}),
                models=doc.get("models", {}),
            )
            if config_hash and manifest.config_hash and manifest.config_hash != config_hash:
                raise CliError(
                    f"config hash {config_hash[:12]} does not match the manifest in "
                    f"{out_dir} ({manifest.config_hash[:12]}); use a fresh --out-dir"
                )
            manifest.config_hash = manifest.config_hash or config_hash
            return manifest
        return cls(run_id=uuid.uuid4().hex, config_hash=config_hash)

    def record_stage(self, name: str, **details) -> None:
        self.stages[name] = {"completed_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                             **details}

    def save(self, out_dir: str) -> None:
        doc = {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "stages": self.stages,
            "models": self.models,
        }
        write_atomic(os.path.join(out_dir, "manifest.json"),
                     json.dumps(doc, indent=2, ensure_ascii=False) + "\n")


@dataclass
class RunConfig:
    """Parsed --config file with paths resolved against the config location."""

    judges: list = field(default_factory=list)
    providers_file: str = ""
    provider_entries: list = field(default_factory=list)
    replay_fixture: str = ""
    policy_file: str = ""
    morph_rules: str = ""
    embedding: dict = field(default_factory=dict)
    converter_command: tuple[str, ...] = ()
    raw_bytes: bytes = b""

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.raw_bytes).hexdigest() if self.raw_bytes else ""


def load_config(path: str | None) -> RunConfig:
    if not path:
        return RunConfig()
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    with open(path, "rb") as handle:
        raw = handle.read()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except ValueError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))

    def resolve(value: str) -> str:
        return value if os.path.isabs(value) else os.path.join(base, value)

    providers_value = doc.get("providers", "")
    providers_file = ""
    provider_entries = []
    if isinstance(providers_value, str) and providers_value:
        providers_file = resolve(providers_value)
    elif isinstance(providers_value, list):
        provider_entries = providers_value
    return RunConfig(
        judges=doc.get("judges", []),
        providers_file=providers_file,
        provider_entries=provider_entries,
        replay_fixture=resolve(doc["replay_fixture"]) if doc.get("replay_fixture") else "",
        policy_file=resolve(doc["policy"]) if doc.get("policy") else "",
        morph_rules=resolve(doc["morph_rules"]) if doc.get("morph_rules") else "",
        embedding=doc.get("embedding", {}),
        converter_command=tuple(doc.get("converter_command", ())),
        raw_bytes=raw,
    )


def build_judges(config: RunConfig):
    """Instantiate the two judge clients from config (stubs when unconfigured)."""
    entries = config.judges or [
        {"judge_id": "judge-a", "kind": "stub"},
        {"judge_id": "judge-b", "kind": "stub"},
    ]
    if len(entries) != 2:
        raise CliError(f"judges config must list exactly 2 judges, got {len(entries)}")
    judges = []
    for index, entry in enumerate(entries):
        kind = entry.get("kind", "")
        judge_id = entry.get("judge_id", "")
        if not judge_id:
            raise CliError(f"judges[{index}]: missing judge_id")
        if kind == "stub":
            judges.append(StubJudge(judge_id))
        elif kind == "http":
            for key in ("endpoint", "model", "key_env"):
                if key not in entry:
                    raise CliError(f"judges[{index}]: missing {key}")
            judges.append(
                HttpJudgeClient(
                    judge_id=judge_id,
                    endpoint=entry["endpoint"],
                    model=entry["model"],
                    key_env=entry["key_env"],
                    temperature=entry.get("temperature", 0.1),
                )
            )
        else:
            raise CliError(f"judges[{index}]: unknown kind {entry.get('kind')!r}")
    if judges[0].judge_id == judges[1].judge_id:
        raise CliError("judges must have distinct judge_id values")
    return tuple(judges)


def build_provider_specs(config: RunConfig) -> list[providers.ProviderSpec]:
    if config.providers_file:
        return providers.load_provider_specs(config.providers_file)
    if config.provider_entries:
        import tempfile

        # Inline entries reuse the file loader for identical validation.
        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as handle:
            json.dump({"providers": config.provider_entries}, handle)
            temp = handle.name
        try:
            return providers.load_provider_specs(temp)
        finally:
            os.unlink(temp)
    return providers.default_specs()


def build_embedding_backend(config: RunConfig, fixture_flag: bool):
    if fixture_flag:
        return HashEmbeddingBackend()
    embedding = config.embedding
    kind = embedding.get("kind", "")
    if kind == "fixture":
        return HashEmbeddingBackend(dim=embedding.get("dim", 32))
    if kind == "service":
        if embedding.get("command"):
            return ServiceEmbeddingBackend(command=list(embedding["command"]))
        if embedding.get("host") and embedding.get("port"):
            return ServiceEmbeddingBackend(host=embedding["host"], port=int(embedding["port"]))
        raise CliError("embedding service config needs host+port or a command")
    raise CliError(
        "evaluate needs an embedding backend: pass --fixture-embeddings or configure "
        '"embedding" ({"kind": "service", ...}) in the run config'
    )


def _require_file(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _pair(args) -> LanguagePair:
    return LanguagePair.from_code(args.pair)


def _policies(config: RunConfig, override: str | None = None):
    path = override or config.policy_file
    if not path:
        return {}
    return selection.load_policies(_require_file(path, "policy file"))


def _morph_rules(config: RunConfig, override: str | None = None):
    path = override or config.morph_rules
    if path:
        return heuristics.MorphRules.from_file(_require_file(path, "morph rules file"))
    return heuristics.DEFAULT_RULES


def cmd_score_heuristic(args, config: RunConfig, manifest: RunManifest) -> None:
    pair = _pair(args)
    dataset = load_dataset(_require_file(args.dataset, "dataset file"), pair)
    rules = _morph_rules(config, args.rules)
    policy = _policies(config, args.policy).get(pair)
    seed_used = None
    if policy is not None and policy.pre_sample is not None and len(dataset) > policy.pre_sample:
        seed_used = args.seed if args.seed is not None else policy.rng_seed
        keep = set(selection.pre_sample([s.id for s in dataset], policy.pre_sample, seed_used))
        dataset = Dataset(pair=pair, samples=[s for s in dataset if s.id in keep])
    scored = heuristics.score_dataset(dataset, rules)
    out = hscores_path(args.out_dir, pair)
    heuristics.write_scores(out, scored)
    if seed_used is not None:
        manifest.seeds[pair.code] = seed_used
    manifest.record_stage(
        f"score-heuristic:{pair.code}",
        samples=len(scored),
        pre_sample_seed=seed_used,
        degenerate_latin_pair=pair.latin_only,
        output=out,
    )
    print(f"scored {len(scored)} samples -> {out}")


def cmd_select(args, config: RunConfig, manifest: RunManifest) -> None:
    pair = _pair(args)
    policies = _policies(config, args.policy)
    if pair not in policies:
        raise CliError(f"no selection policy for pair {pair.code}")
    policy = policies[pair]
    if args.stage == "candidates":
        rows = heuristics.load_scores(_require_file(hscores_path(args.out_dir, pair),
                                                    "heuristic score file"))
        chosen = selection.stage1_select([(r.sample_id, r.composite) for r in rows], policy)
        out = candidates_path(args.out_dir, pair)
        selection.write_candidates(out, chosen)
        manifest.record_stage(f"select-candidates:{pair.code}",
                              candidates=len(chosen), output=out)
        print(f"selected {len(chosen)} candidates -> {out}")
    else:
        assessments = load_assessments(
            _require_file(assessments_path(args.out_dir, pair), "assessments file")
        )
        rows = heuristics.load_scores(_require_file(hscores_path(args.out_dir, pair),
                                                    "heuristic score file"))
        h_map = {r.sample_id: r.composite for r in rows}
        ranked = selection.final_select(assessments, h_map, policy.final_count)
        out = ranking_path(args.out_dir, pair)
        selection.write_ranking(out, ranked)
        manifest.record_stage(f"select-final:{pair.code}", selected=len(ranked), output=out)
        print(f"ranked {len(ranked)} samples -> {out}")


def cmd_score_ensemble(args, config: RunConfig, manifest: RunManifest) -> None:
    pair = _pair(args)
    dataset = load_dataset(_require_file(args.dataset, "dataset file"), pair)
    ids = selection.load_candidates(
        _require_file(candidates_path(args.out_dir, pair), "candidate file")
    )
    by_id = dataset.by_id()
    missing = [cid for cid in ids if cid not in by_id]
    if missing:
        raise CliError(f"candidate ids not in dataset: {missing[:5]}")
    candidates = [by_id[cid] for cid in ids]
    judges = build_judges(config)
    with CheckpointStore(store_path(args.out_dir, pair)) as store:
        run = score_candidates(candidates, judges, store, max_in_flight=args.jobs or 4)
    out = assessments_path(args.out_dir, pair)
    write_assessments(out, run.assessments)
    manifest.models["judges"] = [
        {"judge_id": j.judge_id, "model": getattr(j, "model", "stub")} for j in judges
    ]
    manifest.record_stage(
        f"score-ensemble:{pair.code}",
        assessed=len(run.assessments),
        resumed=run.resumed,
        failed=run.failed,
        flagged=sum(1 for a in run.assessments if a.flagged),
        output=out,
    )
    if run.failed:
        print(f"warning: {len(run.failed)} candidates failed judging", file=sys.stderr)
    print(f"assessed {len(run.assessments)} candidates ({run.resumed} resumed) -> {out}")


def cmd_transcribe(args, config: RunConfig, manifest: RunManifest) -> None:
    pair = _pair(args)
    dataset = load_dataset(_require_file(args.dataset, "dataset file"), pair)
    ranked_file = ranking_path(args.out_dir, pair)
    if os.path.exists(ranked_file):
        chosen = {r.sample_id for r in selection.load_ranking(ranked_file)}
        samples = [s for s in dataset if s.id in chosen]
    else:
        samples = list(dataset)
    specs = build_provider_specs(config)
    replay_table = None
    if config.replay_fixture:
        replay_table = providers.load_replay_fixture(config.replay_fixture)
    converter_kwargs = {}
    if config.converter_command:
        converter_kwargs["command"] = config.converter_command
    converter = providers.AudioConverter(
        cache_dir=os.path.join(args.out_dir, "audio-cache"), **converter_kwargs
    )
    jobs = [
        providers.TranscriptionJob(
            sample_id=s.id,
            audio_path=os.path.join(args.audio_dir or "", s.audio_ref),
            pair=pair,
        )
        for s in samples
    ]
    out = results_path(args.out_dir, pair)
    results = providers.run_benchmark(
        jobs,
        specs,
        checkpoint_path=out,
        max_workers=args.jobs,
        transport=providers.HttpTransport(),
        converter=converter,
        replay_table=replay_table,
    )
    manifest.models["providers"] = [
        {"provider_id": s.provider_id, "params": s.params} for s in specs
    ]
    manifest.record_stage(
        f"transcribe:{pair.code}",
        jobs=len(jobs),
        results=len(results),
        errors=sum(1 for r in results if r.status is ResultStatus.PROVIDER_ERROR),
        unsupported=sum(1 for r in results if r.status is ResultStatus.UNSUPPORTED_PAIR),
        output=out,
    )
    print(f"{len(results)} results -> {out}")


def cmd_evaluate(args, config: RunConfig, manifest: RunManifest) -> None:
    pair = _pair(args)
    dataset = load_dataset(_require_file(args.dataset, "dataset file"), pair)
    results = load_results(_require_file(results_path(args.out_dir, pair), "results file"))
    backend = build_embedding_backend(config, args.fixture_embeddings)
    by_id = dataset.by_id()
    records = []
    skipped = 0
    for result in results:
        if result.status is not ResultStatus.OK:
            skipped += 1
            continue
        sample = by_id.get(result.sample_id)
        if sample is None:
            raise CliError(f"result references unknown sample {result.sample_id!r}")
        reference = metrics.normalize(sample.transcript, args.script_normalised)
        hypothesis = metrics.normalize(result.hypothesis_raw, args.script_normalised)
        if not reference.tokens:
            skipped += 1
            continue
        wer_outcome = metrics.wer(reference, hypothesis)
        if hypothesis.tokens:
            bert = metrics.bertscore(
                backend.embed_tokens(reference), backend.embed_tokens(hypothesis)
            )
        else:
            # Empty hypothesis: no tokens to align, zero semantic credit.
            bert = metrics.BertScoreOutcome(0.0, 0.0, 0.0)
        records.append(
            metrics.MetricRecord.compute(result.sample_id, result.provider_id,
                                         wer_outcome, bert)
        )
    out = metrics_path(args.out_dir, pair)
    metrics.write_metrics(out, records)
    manifest.models["embedding"] = backend.metadata()
    manifest.record_stage(
        f"evaluate:{pair.code}",
        records=len(records),
        skipped=skipped,
        script_normalised=args.script_normalised,
        output=out,
    )
    if hasattr(backend, "close"):
        backend.close()
    print(f"{len(records)} metric records -> {out}")


def cmd_analyze(args, config: RunConfig, manifest: RunManifest) -> None:
    datasets: dict[LanguagePair, Dataset] = {}
    for item in args.dataset or []:
        code, _, path = item.partition("=")
        pair = LanguagePair.from_code(code)
        datasets[pair] = load_dataset(_require_file(path, "dataset file"), pair)
    all_records = []
    sample_pairs: dict[str, LanguagePair] = {}
    h_scores: list[tuple[str, float]] = []
    references: dict[str, str] = {}
    hypotheses: dict[tuple[str, str], str] = {}
    pairs_found = []
    for pair in LanguagePair:
        path = metrics_path(args.out_dir, pair)
        if not os.path.exists(path):
            continue
        pairs_found.append(pair)
        for record in metrics.load_metrics(path):
            all_records.append(record)
            sample_pairs[record.sample_id] = pair
        score_file = hscores_path(args.out_dir, pair)
        if os.path.exists(score_file):
            for row in heuristics.load_scores(score_file):
                if row.sample_id in sample_pairs:
                    h_scores.append((row.sample_id, row.composite))
        result_file = results_path(args.out_dir, pair)
        if os.path.exists(result_file):
            for result in load_results(result_file):
                hypotheses[(result.sample_id, result.provider_id)] = result.hypothesis_raw
        if pair in datasets:
            for sample in datasets[pair]:
                references[sample.id] = sample.transcript
    if not all_records:
        raise CliError(f"no metrics files found under {args.out_dir}")
    specs = build_provider_specs(config)
    support = {s.provider_id: set(s.supported_pairs) for s in specs}
    aggregates = analysis.aggregate(all_records, support, sample_pairs)
    quartile_rows = []
    if len(h_scores) >= 4:
        assignments = analysis.assign_quartiles(h_scores)
        quartile_rows = analysis.quartile_table(all_records, assignments, support,
                                                sample_pairs)
    per_pair_scores: dict[LanguagePair, list[tuple[str, float, float]]] = {}
    for row in aggregates:
        if row.key == analysis.OVERALL_KEY or row.suppressed:
            continue
        pair = LanguagePair.from_code(row.key)
        per_pair_scores.setdefault(pair, []).append(
            (row.provider_id, row.mean_wer, row.mean_f1)
        )
    concordance = analysis.concordance_table(
        {pair: scores for pair, scores in per_pair_scores.items() if len(scores) >= 2}
    )
    divergence_rows = analysis.top_divergence(
        all_records, sample_pairs, references=references, hypotheses=hypotheses,
        per_pair_k=args.top_divergence,
    )
    rdir = report_dir(args.out_dir)
    os.makedirs(rdir, exist_ok=True)
    analysis.write_aggregates(os.path.join(rdir, "aggregates.tsv"), aggregates)
    analysis.write_quartiles(os.path.join(rdir, "quartiles.tsv"), quartile_rows)
    analysis.write_concordance(os.path.join(rdir, "concordance.tsv"), concordance)
    analysis.write_divergence(os.path.join(rdir, "divergence.tsv"), divergence_rows)
    analysis.emit_plot_data(aggregates, quartile_rows, os.path.join(rdir, "plot-data.json"))
    summary = analysis.render_summary(aggregates, quartile_rows, concordance,
                                      divergence_rows)
    write_atomic(os.path.join(rdir, "summary.txt"), summary)
    manifest.record_stage(
        "analyze",
        pairs=[p.code for p in pairs_found],
        records=len(all_records),
        output=rdir,
    )
    print(summary)
    print(f"report -> {rdir}")


def cmd_audit(args, config: RunConfig, manifest: RunManifest) -> None:
    policies = _policies(config, args.policy)
    if not policies:
        raise CliError("audit needs a policy file (--policy or config)")
    report = selection.audit_reduction(list(policies.values()))
    text = report.render() + "\n"
    out = os.path.join(args.out_dir, "audit.txt")
    write_atomic(out, text)
    manifest.record_stage("audit", reduction_percent=report.reduction_percent, output=out)
    print(text, end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csbench",
        description="Build and evaluate a difficulty-ranked code-switching ASR benchmark.",
    )
    parser.add_argument("--config", help="run config file (JSON)")
    parser.add_argument("--jobs", type=int, help="parallelism bound forwarded to stages")
    parser.add_argument("--seed", type=int, help="override the policy pre-sample seed")
    parser.add_argument("--out-dir", default="out", help="output directory (default: out)")
    sub = parser.add_subparsers(dest="command", required=True)

    score = sub.add_parser("score-heuristic", help="stage-1 difficulty scores for a dataset")
    score.add_argument("--dataset", required=True, help="sample file (TSV)")
    score.add_argument("--pair", required=True, help="language pair code")
    score.add_argument("--rules", help="morphological rule file override")
    score.add_argument("--policy", help="selection policy file override")
    score.set_defaults(func=cmd_score_heuristic)

    select = sub.add_parser("select", help="route candidates or rank the final split")
    select.add_argument("--stage", choices=["candidates", "final"], required=True)
    select.add_argument("--pair", required=True)
    select.add_argument("--policy", help="selection policy file override")
    select.set_defaults(func=cmd_select)

    ensemble = sub.add_parser("score-ensemble", help="two-judge LLM scoring of candidates")
    ensemble.add_argument("--dataset", required=True)
    ensemble.add_argument("--pair", required=True)
    ensemble.set_defaults(func=cmd_score_ensemble)

    transcribe = sub.add_parser("transcribe", help="run ASR providers over the benchmark")
    transcribe.add_argument("--dataset", required=True)
    transcribe.add_argument("--pair", required=True)
    transcribe.add_argument("--audio-dir", help="directory holding the audio files")
    transcribe.set_defaults(func=cmd_transcribe)

    evaluate = sub.add_parser("evaluate", help="WER/BERTScore metrics for provider results")
    evaluate.add_argument("--dataset", required=True)
    evaluate.add_argument("--pair", required=True)
    evaluate.add_argument(
        "--fixture-embeddings",
        action="store_true",
        help="use the deterministic synthetic embedding backend",
    )
    evaluate.add_argument(
        "--script-normalised",
        action="store_true",
        help="apply Arabic/Persian script canonicalisation before metrics",
    )
    evaluate.set_defaults(func=cmd_evaluate)

    analyze = sub.add_parser("analyze", help="aggregate tables, concordance, plot data")
    analyze.add_argument(
        "--dataset",
        action="append",
        metavar="PAIR=PATH",
        help="dataset file per pair, for transcript excerpts (repeatable)",
    )
    analyze.add_argument("--top-divergence", type=int, default=5,
                         help="divergence rows per pair (default: 5)")
    analyze.set_defaults(func=cmd_analyze)

    audit = sub.add_parser("audit", help="LLM-call reduction report for a policy file")
    audit.add_argument("--policy", help="selection policy file override")
    audit.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        os.makedirs(args.out_dir, exist_ok=True)
        manifest = RunManifest.load_or_create(args.out_dir, config.config_hash)
        args.func(args, config, manifest)
        manifest.save(args.out_dir)
    except (CliError, CorpusFormatError, heuristics.HeuristicError, metrics.MetricError,
            selection.SelectionError, providers.ProviderError, analysis.AnalysisError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
