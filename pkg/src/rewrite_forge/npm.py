"""Normalized Performance Metric (NPM) and its aggregation.

NPM rescales a task's raw score so a random baseline maps to 0 and a
perfect score to 100. It is deliberately unclamped: sub-random scores go
negative and stay visible. Aggregation is an unweighted mean over tasks,
with category slices and coverage counts for partial evaluations.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

from .errors import ValidationError


def npm(raw_score: float, random_baseline: float, perfect_score: float) -> float:
    """100 * (raw - baseline) / (perfect - baseline), unclamped."""
    if perfect_score <= random_baseline:
        raise ValueError(
            f"perfect_score {perfect_score} must exceed random_baseline {random_baseline}"
        )
    return 100.0 * (raw_score - random_baseline) / (perfect_score - random_baseline)


@dataclass(frozen=True)
class TaskSpec:
    """A benchmark task's normalization anchors and native score range."""

    task_id: str
    category: str
    random_baseline: float
    perfect_score: float
    score_min: float = 0.0
    score_max: "float | None" = None

    def __post_init__(self) -> None:
        if self.perfect_score <= self.random_baseline:
            raise ValidationError(
                f"task {self.task_id}: perfect_score must exceed random_baseline"
            )
        if self.score_max is not None and self.score_max < self.score_min:
            raise ValidationError(f"task {self.task_id}: score_max < score_min")

    @property
    def native_max(self) -> float:
        return self.perfect_score if self.score_max is None else self.score_max


@dataclass(frozen=True)
class TaskResult:
    """One model checkpoint's raw score on one task."""

    task_id: str
    raw_score: float
    checkpoint_tokens: float
    condition: str
    model_scale: str


def validate_result(result: TaskResult, spec: TaskSpec) -> None:
    """Reject a result whose raw score leaves the task's native range."""
    if result.task_id != spec.task_id:
        raise ValidationError(
            f"result for {result.task_id!r} validated against spec {spec.task_id!r}"
        )
    if not (spec.score_min <= result.raw_score <= spec.native_max):
        raise ValidationError(
            f"task {result.task_id}: raw_score {result.raw_score} outside "
            f"[{spec.score_min}, {spec.native_max}]"
        )


def task_npm(result: TaskResult, spec: TaskSpec) -> float:
    validate_result(result, spec)
    return npm(result.raw_score, spec.random_baseline, spec.perfect_score)


def _specs_by_id(specs: Iterable[TaskSpec]) -> dict[str, TaskSpec]:
    table: dict[str, TaskSpec] = {}
    for spec in specs:
        if spec.task_id in table:
            raise ValidationError(f"duplicate task spec {spec.task_id!r}")
        table[spec.task_id] = spec
    return table


def _task_npms(
    results: Iterable[TaskResult], specs: Sequence[TaskSpec]
) -> dict[str, float]:
    """Per-task NPMs for one checkpoint slice; duplicate tasks rejected."""
    table = _specs_by_id(specs)
    values: dict[str, float] = {}
    for result in results:
        if result.task_id in values:
            raise ValidationError(
                f"duplicate result for task {result.task_id!r} in one checkpoint slice"
            )
        if result.task_id not in table:
            raise ValidationError(f"result for unknown task {result.task_id!r}")
        values[result.task_id] = task_npm(result, table[result.task_id])
    return values


def macro_average(
    results: Sequence[TaskResult], specs: Sequence[TaskSpec]
) -> float:
    """Unweighted mean NPM over all tasks present (one checkpoint slice)."""
    values = _task_npms(results, specs)
    if not values:
        raise ValidationError("macro average over zero results")
    return sum(values.values()) / len(values)


def category_average(
    results: Sequence[TaskResult], specs: Sequence[TaskSpec], category: str
) -> "float | None":
    """Unweighted mean NPM over one category; None when it has no results."""
    table = _specs_by_id(specs)
    values = _task_npms(results, specs)
    in_category = [
        value for task_id, value in values.items() if table[task_id].category == category
    ]
    if not in_category:
        return None
    return sum(in_category) / len(in_category)


def checkpoint_report(
    results: Sequence[TaskResult], specs: Sequence[TaskSpec]
) -> dict:
    """Overall NPM, per-category NPMs, and coverage for one checkpoint."""
    table = _specs_by_id(specs)
    values = _task_npms(results, specs)
    categories = sorted({spec.category for spec in specs})
    by_category: dict[str, "float | None"] = {}
    counts: dict[str, list[int]] = {}
    for name in categories:
        members = [v for t, v in values.items() if table[t].category == name]
        total = sum(1 for spec in specs if spec.category == name)
        by_category[name] = sum(members) / len(members) if members else None
        counts[name] = [len(members), total]
    overall = sum(values.values()) / len(values) if values else None
    return {
        "overall_npm": overall,
        "category_npm": by_category,
        "coverage": {
            "tasks_evaluated": len(values),
            "tasks_total": len(specs),
            "by_category": counts,
        },
    }


def load_task_specs(path: Union[str, Path]) -> list[TaskSpec]:
    """Read a JSON array of task specs."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ValidationError(f"{path}: task spec file must be a JSON array")
    specs = []
    for entry in raw:
        specs.append(
            TaskSpec(
                task_id=entry["task_id"],
                category=entry["category"],
                random_baseline=entry["random_baseline"],
                perfect_score=entry["perfect_score"],
                score_min=entry.get("score_min", 0.0),
                score_max=entry.get("score_max"),
            )
        )
    _specs_by_id(specs)
    return specs


def load_results(path: Union[str, Path]) -> list[TaskResult]:
    """Read a JSONL file of task results."""
    results = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {line_no}: invalid JSON: {exc}") from None
            try:
                results.append(
                    TaskResult(
                        task_id=raw["task_id"],
                        raw_score=raw["raw_score"],
                        checkpoint_tokens=raw["checkpoint_tokens"],
                        condition=raw["condition"],
                        model_scale=raw["model_scale"],
                    )
                )
            except KeyError as exc:
                raise ValidationError(
                    f"{path}: line {line_no}: missing field {exc.args[0]!r}"
                ) from None
    return results
