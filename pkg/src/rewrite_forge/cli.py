"""Command-line entry point: one subcommand per pipeline stage.

Stages share one JSON run configuration; paths inside it are resolved
relative to the config file. Exit codes: 0 success, 1 validation or
configuration error, 2 runtime failure, 64 unknown subcommand. A lock
file serializes subcommands that write into the same output directory.
"""

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from filelock import FileLock, Timeout

from . import fixtures
from .corpus import QualityTier, RecordIssue, RewriteStyle, load_documents, read_corpus
from .curves import (
    TrainingCurve,
    build_curves,
    emit_plot_data,
    load_category_curves,
    load_curves,
    peak,
    save_curves,
    slugify,
    summary_table,
)
from .errors import ConfigError, ForgeError, ValidationError
from .llm_client import ChatClient, RateLimit, RetryPolicy
from .mixture import ConditionSpec, build_condition, materialize_condition
from .npm import load_results, load_task_specs
from .partition import (
    SubsetManifest,
    TierPolicy,
    classify_tier,
    digest_file,
    select_subset,
)
from .rewrite import (
    MANIFEST_NAME as REWRITE_MANIFEST_NAME,
    SamplingParams,
    load_rewrite_corpus,
    load_templates,
    run_rewrite_job,
)
from .tokens import CountingScheme, parse_scheme

SUBCOMMANDS = ("validate", "partition", "rewrite", "mix", "eval", "analyze", "report")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_USAGE = 64

LOCK_NAME = ".rewrite-forge.lock"
LOCK_TIMEOUT_SECONDS = 30.0

SUBSET_FILES = {QualityTier.HIGH: "subset_high.json", QualityTier.LOW: "subset_low.json"}
REWRITE_DIRS = {QualityTier.HIGH: "rewrites_high", QualityTier.LOW: "rewrites_low"}

CONDITIONS = (
    (QualityTier.HIGH, True),
    (QualityTier.HIGH, False),
    (QualityTier.LOW, True),
    (QualityTier.LOW, False),
)


@dataclass
class RewriteSettings:
    endpoint: str
    model: str
    styles: list
    sampling: SamplingParams
    rate: RateLimit
    retry: RetryPolicy
    failure_ceiling: float
    timeout: float
    templates_path: "Path | None"


@dataclass
class RunConfig:
    """Parsed run configuration with all paths resolved."""

    base_dir: Path
    corpus_path: "Path | None"
    scheme: CountingScheme
    scheme_spec: str
    policy: TierPolicy
    subset_budget: "int | None"
    target_budget: "int | None"
    tolerance: float
    shard_token_size: int
    seeds: dict
    output_dir: Path
    rewrite: "RewriteSettings | None"
    results_path: "Path | None"
    task_specs_path: "Path | None"
    curve_paths: "dict | None"
    category_curve_paths: "dict | None"
    epsilon: float
    min_tail: int

    @classmethod
    def load(
        cls,
        path: "str | Path",
        seed_override: "int | None" = None,
        output_override: "str | None" = None,
    ) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        base = path.parent

        def resolve(p: "str | None") -> "Path | None":
            return None if p is None else (base / p).resolve()

        scheme_spec = raw.get("counting_scheme", "whitespace")
        if scheme_spec.startswith("vocab:"):
            vocab = resolve(scheme_spec[len("vocab:"):])
            scheme_spec = f"vocab:{vocab}"
        scheme = parse_scheme(scheme_spec)

        policy = TierPolicy()
        if "tier_policy" in raw:
            policy = TierPolicy.from_json(raw["tier_policy"])

        budgets = raw.get("budgets", {})
        seeds = {"partition": 0, "mixture": 1, "attempt": 0}
        seeds.update(raw.get("seeds", {}))
        if seed_override is not None:
            seeds["partition"] = seed_override
            seeds["mixture"] = seed_override + 1

        rewrite_settings = None
        if "rewrite" in raw:
            section = raw["rewrite"]
            styles = []
            for name in section.get("styles", [s.value for s in RewriteStyle]):
                try:
                    styles.append(RewriteStyle(name))
                except ValueError:
                    raise ConfigError(f"unknown rewrite style {name!r}") from None
            try:
                sampling = SamplingParams(**section.get("sampling", {}))
                rate = RateLimit(**section.get("rate", {}))
                retry = RetryPolicy(**section.get("retry", {}))
            except TypeError as exc:
                raise ConfigError(f"bad rewrite settings: {exc}") from None
            rewrite_settings = RewriteSettings(
                endpoint=section.get("endpoint", ""),
                model=section.get("model", ""),
                styles=styles,
                sampling=sampling,
                rate=rate,
                retry=retry,
                failure_ceiling=section.get("failure_ceiling", 0.05),
                timeout=section.get("timeout", 120.0),
                templates_path=resolve(section.get("templates")),
            )

        eval_section = raw.get("eval", {})
        analyze_section = raw.get("analyze", {})

        def resolve_map(entry: "dict | None") -> "dict | None":
            if entry is None:
                return None
            return {scale: resolve(p) for scale, p in entry.items()}

        output_dir = output_override or raw.get("output_dir", "out")
        return cls(
            base_dir=base,
            corpus_path=resolve(raw.get("corpus")),
            scheme=scheme,
            scheme_spec=scheme_spec,
            policy=policy,
            subset_budget=budgets.get("subset"),
            target_budget=budgets.get("target"),
            tolerance=budgets.get("tolerance", 0.005),
            shard_token_size=raw.get("shard_token_size", 100_000),
            seeds=seeds,
            output_dir=(base / output_dir).resolve()
            if output_override is None
            else Path(output_override).resolve(),
            rewrite=rewrite_settings,
            results_path=resolve(eval_section.get("results")),
            task_specs_path=resolve(eval_section.get("task_specs")),
            curve_paths=resolve_map(analyze_section.get("curves")),
            category_curve_paths=resolve_map(analyze_section.get("category_curves")),
            epsilon=analyze_section.get("epsilon", 0.5),
            min_tail=analyze_section.get("min_tail", 2),
        )

    def require_corpus(self) -> Path:
        if self.corpus_path is None:
            raise ConfigError("config lacks a 'corpus' path")
        if not self.corpus_path.exists():
            raise ConfigError(f"corpus file not found: {self.corpus_path}")
        return self.corpus_path

    def require_budget(self, name: str) -> int:
        value = self.subset_budget if name == "subset" else self.target_budget
        if value is None:
            raise ConfigError(f"config lacks budgets.{name}")
        return value

    def require_rewrite(self) -> RewriteSettings:
        if self.rewrite is None:
            raise ConfigError("config lacks a 'rewrite' section")
        if not self.rewrite.endpoint:
            raise ConfigError("rewrite.endpoint is required")
        if not self.rewrite.model:
            raise ConfigError("rewrite.model is required")
        return self.rewrite


def _emit(args: argparse.Namespace, summary: str, payload: dict) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True, ensure_ascii=False))
    else:
        print(summary)


def cmd_validate(config: RunConfig, args: argparse.Namespace) -> int:
    corpus = config.require_corpus()
    documents = 0
    tokens = 0
    issues: list[RecordIssue] = []
    for item in load_documents(corpus, config.scheme):
        if isinstance(item, RecordIssue):
            issues.append(item)
        else:
            documents += 1
            tokens += item.token_count
    for issue in issues:
        print(f"{corpus}: {issue}", file=sys.stderr)
    _emit(
        args,
        f"validate: {documents} documents, {tokens} tokens, {len(issues)} issue(s)",
        {
            "command": "validate",
            "documents": documents,
            "tokens": tokens,
            "issues": [{"line": i.line_no, "cause": i.cause} for i in issues],
        },
    )
    return EXIT_VALIDATION if issues else EXIT_OK


def cmd_partition(config: RunConfig, args: argparse.Namespace) -> int:
    corpus = config.require_corpus()
    budget = config.require_budget("subset")
    docs = read_corpus(corpus, config.scheme)
    source = digest_file(corpus)
    plan = {}
    for tier in (QualityTier.HIGH, QualityTier.LOW):
        candidates = [d for d in docs if classify_tier(d.scores, config.policy) is tier]
        plan[tier.value] = {
            "candidates": len(candidates),
            "candidate_tokens": sum(d.token_count for d in candidates),
            "budget": budget,
        }
    if args.dry_run:
        _emit(
            args,
            "partition (dry run): "
            + ", ".join(
                f"{tier} {p['candidates']} candidates / {p['candidate_tokens']} tokens"
                for tier, p in plan.items()
            )
            + f", budget {budget}",
            {"command": "partition", "dry_run": True, "plan": plan},
        )
        return EXIT_OK

    summaries = {}
    for tier in (QualityTier.HIGH, QualityTier.LOW):
        manifest = select_subset(
            docs,
            tier,
            budget,
            config.seeds["partition"],
            config.policy,
            scheme=config.scheme,
            sources=[source],
        )
        manifest.save(config.output_dir / SUBSET_FILES[tier])
        summaries[tier.value] = {
            "documents": len(manifest.document_ids),
            "total_tokens": manifest.total_tokens,
            "budget": manifest.budget,
            "supply_shortfall": manifest.supply_shortfall,
            "manifest": SUBSET_FILES[tier],
        }
    _emit(
        args,
        "partition: "
        + ", ".join(
            f"{tier} {s['documents']} docs / {s['total_tokens']} of {s['budget']} tokens"
            for tier, s in summaries.items()
        ),
        {"command": "partition", "subsets": summaries, "seed": config.seeds["partition"]},
    )
    return EXIT_OK


def _load_subset(config: RunConfig, tier: QualityTier, docs: list) -> tuple:
    manifest_path = config.output_dir / SUBSET_FILES[tier]
    if not manifest_path.exists():
        raise ConfigError(f"{manifest_path} not found: run the partition stage first")
    manifest = SubsetManifest.load(manifest_path)
    by_id = {d.id: d for d in docs}
    try:
        selected = [by_id[doc_id] for doc_id in manifest.document_ids]
    except KeyError as exc:
        raise ValidationError(
            f"{manifest_path} references document {exc.args[0]!r} missing from the corpus"
        ) from None
    return manifest, selected


def cmd_rewrite(config: RunConfig, args: argparse.Namespace) -> int:
    corpus = config.require_corpus()
    settings = config.require_rewrite()
    docs = read_corpus(corpus, config.scheme)
    subsets = {
        tier: _load_subset(config, tier, docs)[1]
        for tier in (QualityTier.HIGH, QualityTier.LOW)
    }
    planned = {
        tier.value: len(selected) * len(settings.styles)
        for tier, selected in subsets.items()
    }
    if args.dry_run:
        _emit(
            args,
            "rewrite (dry run): "
            + ", ".join(f"{t} {n} pairs" for t, n in planned.items())
            + f" against {settings.endpoint}",
            {"command": "rewrite", "dry_run": True, "planned_pairs": planned},
        )
        return EXIT_OK

    templates = None
    if settings.templates_path is not None:
        templates = load_templates(settings.templates_path)
    summaries = {}
    with ChatClient(
        base_url=settings.endpoint,
        rate_limit=settings.rate,
        retry=settings.retry,
        timeout=settings.timeout,
    ) as client:
        for tier, selected in subsets.items():
            result = run_rewrite_job(
                selected,
                settings.styles,
                client,
                settings.sampling,
                config.output_dir / REWRITE_DIRS[tier],
                model=settings.model,
                scheme=config.scheme,
                templates=templates,
                failure_ceiling=settings.failure_ceiling,
                attempt_seed=config.seeds["attempt"],
            )
            summaries[tier.value] = {
                "succeeded": result.succeeded,
                "failed": result.failed,
                "synthetic_tokens": result.synthetic_tokens,
                "expansion_ratio": result.expansion_ratio,
                "job_dir": REWRITE_DIRS[tier],
            }
    def _ratio(value: "float | None") -> str:
        return "n/a" if value is None else f"{value:.2f}"

    _emit(
        args,
        "rewrite: "
        + ", ".join(
            f"{t} {s['succeeded']} ok / {s['failed']} failed, "
            f"ratio {_ratio(s['expansion_ratio'])}"
            for t, s in summaries.items()
        ),
        {"command": "rewrite", "jobs": summaries},
    )
    return EXIT_OK


def cmd_mix(config: RunConfig, args: argparse.Namespace) -> int:
    corpus = config.require_corpus()
    target = config.require_budget("target")
    docs = read_corpus(corpus, config.scheme)
    builds = []
    for index, (tier, rewrites) in enumerate(CONDITIONS):
        _, selected = _load_subset(config, tier, docs)
        spec = ConditionSpec(
            tier=tier,
            rewrites=rewrites,
            target_budget=target,
            seed=config.seeds["mixture"] + index,
        )
        rewrite_corpus = None
        digests = None
        if rewrites:
            job_dir = config.output_dir / REWRITE_DIRS[tier]
            if not (job_dir / REWRITE_MANIFEST_NAME).exists():
                raise ConfigError(
                    f"{job_dir} has no rewrite manifest: run the rewrite stage first"
                )
            rewrite_corpus = load_rewrite_corpus(job_dir)
            manifest = json.loads(
                (job_dir / REWRITE_MANIFEST_NAME).read_text(encoding="utf-8")
            )
            digests = {
                "sampling_digest": manifest["sampling_digest"],
                "template_digest": manifest["template_digest"],
            }
        builds.append((spec, selected, rewrite_corpus, digests))

    if args.dry_run:
        plan = {
            spec.name: {"target": spec.target_budget, "seed": spec.seed}
            for spec, _, _, _ in builds
        }
        _emit(
            args,
            "mix (dry run): " + ", ".join(plan) + f", target {target}",
            {"command": "mix", "dry_run": True, "plan": plan},
        )
        return EXIT_OK

    summaries = {}
    for spec, selected, rewrite_corpus, digests in builds:
        build = build_condition(spec, selected, rewrite_corpus, config.tolerance)
        dataset = materialize_condition(
            build,
            config.output_dir / "conditions" / slugify(spec.name),
            shard_token_size=config.shard_token_size,
            counting_scheme=config.scheme_spec,
            rewrite_digests=digests,
            tolerance=config.tolerance,
        )
        summaries[spec.name] = {
            "epochs": dataset.epochs,
            "total_tokens": dataset.total_tokens,
            "unique_tokens": dataset.unique_tokens,
            "shards": len(dataset.shards),
        }
    _emit(
        args,
        "mix: "
        + ", ".join(
            f"{name} total {s['total_tokens']} unique {s['unique_tokens']} "
            f"epochs {s['epochs']}"
            for name, s in summaries.items()
        ),
        {"command": "mix", "conditions": summaries, "seed": config.seeds["mixture"]},
    )
    return EXIT_OK


def _eval_curves(config: RunConfig) -> dict:
    if config.results_path is None:
        raise ConfigError("config lacks eval.results (a task-results JSONL file)")
    if not config.results_path.exists():
        raise ConfigError(f"results file not found: {config.results_path}")
    specs_path = config.task_specs_path or fixtures.fixture_path(fixtures.TASK_SPECS)
    specs = load_task_specs(specs_path)
    results = load_results(config.results_path)
    curves = build_curves(results, specs)
    by_scale: dict[str, list[TrainingCurve]] = {}
    for curve in curves:
        by_scale.setdefault(curve.model_scale, []).append(curve)
    return by_scale


def _write_eval_curves(config: RunConfig, by_scale: dict) -> dict:
    out_dir = config.output_dir / "eval"
    written = {}
    for scale in sorted(by_scale):
        path = out_dir / f"curves_{slugify(scale)}.json"
        save_curves(by_scale[scale], path)
        written[scale] = str(path)
    return written


def cmd_eval(config: RunConfig, args: argparse.Namespace) -> int:
    by_scale = _eval_curves(config)
    if args.dry_run:
        _emit(
            args,
            "eval (dry run): scales " + ", ".join(sorted(by_scale)),
            {"command": "eval", "dry_run": True, "scales": sorted(by_scale)},
        )
        return EXIT_OK
    written = _write_eval_curves(config, by_scale)
    _emit(
        args,
        "eval: wrote curves for " + ", ".join(sorted(written)),
        {"command": "eval", "curves": written},
    )
    return EXIT_OK


def _analysis_inputs(config: RunConfig, eval_curves: "dict | None") -> tuple:
    curve_paths = config.curve_paths
    if curve_paths is None and eval_curves:
        curve_paths = {scale: Path(p) for scale, p in eval_curves.items()}
    if curve_paths is None:
        curve_paths = {
            scale: fixtures.fixture_path(name)
            for scale, name in fixtures.SCALE_CURVES.items()
        }
    category_paths = config.category_curve_paths
    if category_paths is None:
        category_paths = {
            scale: fixtures.fixture_path(name)
            for scale, name in fixtures.SCALE_CATEGORY_CURVES.items()
        }
    return curve_paths, category_paths


def cmd_analyze(
    config: RunConfig, args: argparse.Namespace, eval_curves: "dict | None" = None
) -> int:
    curve_paths, category_paths = _analysis_inputs(config, eval_curves)
    curves = []
    for scale in sorted(curve_paths):
        curves.extend(load_curves(curve_paths[scale], scale))
    rows, rendered = summary_table(curves)
    if args.dry_run:
        _emit(
            args,
            "analyze (dry run): scales " + ", ".join(sorted(curve_paths)),
            {"command": "analyze", "dry_run": True, "scales": sorted(curve_paths)},
        )
        return EXIT_OK

    out_dir = config.output_dir / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_payload = [
        {
            "condition": row.condition,
            "model_scale": row.model_scale,
            "peak_npm": row.peak_npm,
            "peak_tokens": row.peak_tokens,
            "saturation_tokens": row.saturation_tokens,
            "is_scale_max": row.is_scale_max,
        }
        for row in rows
    ]
    (out_dir / "summary.json").write_text(
        json.dumps(summary_payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    (out_dir / "summary.txt").write_text(rendered, encoding="utf-8")
    emit_plot_data(curves, out_dir / "plots")

    for scale in sorted(category_paths):
        category_curves = load_category_curves(category_paths[scale], scale)
        emit_plot_data(
            category_curves,
            out_dir / f"plots_categories_{slugify(scale)}",
            grouping=lambda curve: curve.category,
        )
        peaks = {}
        for curve in category_curves:
            value, tokens = peak(curve)
            peaks.setdefault(curve.category, {})[curve.condition] = [value, tokens]
        (out_dir / f"category_peaks_{slugify(scale)}.json").write_text(
            json.dumps(peaks, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )

    if args.json:
        print(json.dumps({"command": "analyze", "summary": summary_payload},
                         sort_keys=True, ensure_ascii=False))
    else:
        print(rendered, end="")
    return EXIT_OK


def cmd_report(config: RunConfig, args: argparse.Namespace) -> int:
    eval_outputs = None
    if config.results_path is not None:
        by_scale = _eval_curves(config)
        if not args.dry_run:
            eval_outputs = _write_eval_curves(config, by_scale)
    return cmd_analyze(config, args, eval_curves=eval_outputs)


HANDLERS = {
    "validate": cmd_validate,
    "partition": cmd_partition,
    "rewrite": cmd_rewrite,
    "mix": cmd_mix,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "report": cmd_report,
}

WRITING_COMMANDS = {"partition", "rewrite", "mix", "eval", "analyze", "report"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rewrite-forge",
        description="Quality-tiered corpus partitioning, synthetic rewriting, "
        "budget-matched mixtures, and NPM curve analysis.",
    )
    sub = parser.add_subparsers(dest="command")
    for name in SUBCOMMANDS:
        cmd = sub.add_parser(name, help=f"run the {name} stage")
        cmd.add_argument("--config", required=True, help="path to the run config JSON")
        cmd.add_argument("--seed", type=int, default=None, help="override master seed")
        cmd.add_argument(
            "--dry-run", action="store_true", help="validate and plan, write nothing"
        )
        cmd.add_argument("--output", default=None, help="override the output directory")
        cmd.add_argument(
            "--json", action="store_true", help="machine-readable summary on stdout"
        )
    return parser


def main(argv: "list[str] | None" = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in SUBCOMMANDS:
        if argv and argv[0] in ("-h", "--help"):
            build_parser().print_help()
            return EXIT_OK
        print(
            f"usage: rewrite-forge {{{','.join(SUBCOMMANDS)}}} --config PATH "
            f"[--seed N] [--dry-run] [--output DIR] [--json]",
            file=sys.stderr,
        )
        return EXIT_USAGE
    args = build_parser().parse_args(argv)

    try:
        config = RunConfig.load(
            args.config, seed_override=args.seed, output_override=args.output
        )
        handler = HANDLERS[args.command]
        if args.command in WRITING_COMMANDS and not args.dry_run:
            config.output_dir.mkdir(parents=True, exist_ok=True)
            lock = FileLock(str(config.output_dir / LOCK_NAME))
            try:
                with lock.acquire(timeout=LOCK_TIMEOUT_SECONDS):
                    return handler(config, args)
            except Timeout:
                print(
                    f"error: another run holds {config.output_dir / LOCK_NAME}",
                    file=sys.stderr,
                )
                return EXIT_RUNTIME
        return handler(config, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
