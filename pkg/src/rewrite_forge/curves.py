"""Training-curve analysis: peaks, gaps, saturation, tables, plot data.

A curve is a condition's checkpoint series of (training tokens in
billions, NPM). Analysis never interpolates: gaps compare values at
checkpoints both curves actually contain, and saturation is defined over
recorded checkpoints only.
"""

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

from .errors import ValidationError
from .npm import TaskResult, TaskSpec, macro_average

CONDITION_ORDER = ("edu+rewrites", "edu", "non-edu+rewrites", "non-edu")

DEFAULT_EPSILON = 0.5
DEFAULT_MIN_TAIL = 2


class MissingCheckpointError(ValidationError):
    """A requested checkpoint is absent from a curve."""


@dataclass(frozen=True)
class TrainingCurve:
    """One condition's NPM-vs-tokens series; token coordinates strictly rise."""

    condition: str
    model_scale: str
    points: tuple
    category: "str | None" = None

    def __post_init__(self) -> None:
        if not self.points:
            raise ValidationError(f"curve {self.condition}: no points")
        object.__setattr__(
            self, "points", tuple((float(t), float(v)) for t, v in self.points)
        )
        tokens = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(tokens, tokens[1:])):
            raise ValidationError(
                f"curve {self.condition}: token coordinates must strictly increase"
            )

    def npm_at(self, tokens: float) -> float:
        for t, value in self.points:
            if t == tokens:
                return value
        raise MissingCheckpointError(
            f"curve {self.condition} ({self.model_scale}) has no checkpoint at {tokens}"
        )

    def has_checkpoint(self, tokens: float) -> bool:
        return any(t == tokens for t, _ in self.points)


def peak(curve: TrainingCurve) -> tuple[float, float]:
    """(max NPM, its token coordinate); ties go to the earliest checkpoint."""
    best_tokens, best_value = curve.points[0]
    for tokens, value in curve.points[1:]:
        if value > best_value:
            best_value, best_tokens = value, tokens
    return best_value, best_tokens


def gap(curve_a: TrainingCurve, curve_b: TrainingCurve, at_tokens: float) -> float:
    """npm_a - npm_b at one shared checkpoint; no interpolation."""
    return curve_a.npm_at(at_tokens) - curve_b.npm_at(at_tokens)


def saturation_point(
    curve: TrainingCurve,
    epsilon: float = DEFAULT_EPSILON,
    min_tail: int = DEFAULT_MIN_TAIL,
) -> "float | None":
    """Earliest checkpoint after which the curve never gains more than epsilon.

    Requires at least ``min_tail`` later checkpoints as evidence; returns
    None when no checkpoint qualifies (the curve is still climbing).
    """
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    if min_tail < 1:
        raise ValidationError(f"min_tail must be >= 1, got {min_tail}")
    points = curve.points
    for i, (tokens, value) in enumerate(points):
        tail = points[i + 1:]
        if len(tail) < min_tail:
            break
        if max(v for _, v in tail) <= value + epsilon:
            return tokens
    return None


@dataclass(frozen=True)
class CurveSummary:
    condition: str
    model_scale: str
    peak_npm: float
    peak_tokens: float
    saturation_tokens: "float | None"
    is_scale_max: bool = False


def _condition_rank(name: str) -> tuple:
    try:
        return (0, CONDITION_ORDER.index(name))
    except ValueError:
        return (1, name)


def _scale_rank(label: str) -> tuple:
    match = re.match(r"(\d+(?:\.\d+)?)", label)
    if match:
        return (0, float(match.group(1)), label)
    return (1, 0.0, label)


def summary_table(curves: Sequence[TrainingCurve]) -> tuple[list[CurveSummary], str]:
    """Per-(condition, scale) peak rows plus a rendered text table.

    Every row achieving its scale's maximum peak NPM is marked, so exact
    ties mark multiple rows.
    """
    seen: set[tuple[str, str]] = set()
    for curve in curves:
        key = (curve.condition, curve.model_scale)
        if key in seen:
            raise ValidationError(f"duplicate curve for {key}")
        seen.add(key)

    ordered = sorted(
        curves, key=lambda c: (_scale_rank(c.model_scale), _condition_rank(c.condition))
    )
    scale_max: dict[str, float] = {}
    peaks: dict[tuple[str, str], tuple[float, float]] = {}
    for curve in ordered:
        value, tokens = peak(curve)
        peaks[(curve.condition, curve.model_scale)] = (value, tokens)
        current = scale_max.get(curve.model_scale)
        if current is None or value > current:
            scale_max[curve.model_scale] = value

    rows = []
    for curve in ordered:
        value, tokens = peaks[(curve.condition, curve.model_scale)]
        rows.append(
            CurveSummary(
                condition=curve.condition,
                model_scale=curve.model_scale,
                peak_npm=value,
                peak_tokens=tokens,
                saturation_tokens=saturation_point(curve),
                is_scale_max=value == scale_max[curve.model_scale],
            )
        )

    header = ("scale", "condition", "peak_npm", "peak_tokens_b", "saturation_b", "max")
    cells = [header]
    for row in rows:
        cells.append(
            (
                row.model_scale,
                row.condition,
                f"{row.peak_npm:.1f}",
                f"{row.peak_tokens:g}",
                "-" if row.saturation_tokens is None else f"{row.saturation_tokens:g}",
                "*" if row.is_scale_max else "",
            )
        )
    widths = [max(len(line[i]) for line in cells) for i in range(len(header))]
    lines = []
    for line in cells:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip())
    return rows, "\n".join(lines) + "\n"


def slugify(name: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")
    return slug or "unnamed"


def emit_plot_data(
    curves: Sequence[TrainingCurve],
    output_dir: Union[str, Path],
    grouping: "Callable[[TrainingCurve], str] | None" = None,
) -> dict[str, str]:
    """Write one CSV per curve group; returns {group: filename}.

    Each file has a ``tokens_billions`` column plus one column per
    condition; checkpoints a condition lacks are left empty. An
    ``index.json`` mapping groups to filenames is written alongside.
    """
    if grouping is None:
        grouping = lambda curve: curve.model_scale
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[str, list[TrainingCurve]] = {}
    for curve in curves:
        groups.setdefault(grouping(curve), []).append(curve)

    index: dict[str, str] = {}
    for group in sorted(groups):
        members = sorted(groups[group], key=lambda c: _condition_rank(c.condition))
        conditions = [c.condition for c in members]
        if len(set(conditions)) != len(conditions):
            raise ValidationError(f"plot group {group!r}: duplicate condition")
        tokens_axis = sorted({t for c in members for t, _ in c.points})
        filename = f"curves_{slugify(group)}.csv"
        with (output_dir / filename).open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["tokens_billions"] + conditions)
            for tokens in tokens_axis:
                row: list = [f"{tokens:g}"]
                for curve in members:
                    row.append(
                        f"{curve.npm_at(tokens):g}" if curve.has_checkpoint(tokens) else ""
                    )
                writer.writerow(row)
        index[group] = filename
    (output_dir / "index.json").write_text(
        json.dumps(index, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return index


def load_curves(path: Union[str, Path], model_scale: str) -> list[TrainingCurve]:
    """Read one scale's curve file: {condition: [[tokens_b, npm], ...]}."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: curve file must be a JSON object")
    curves = []
    for condition in sorted(raw, key=_condition_rank):
        curves.append(
            TrainingCurve(condition=condition, model_scale=model_scale, points=tuple(
                (p[0], p[1]) for p in raw[condition]
            ))
        )
    return curves


def save_curves(curves: Sequence[TrainingCurve], path: Union[str, Path]) -> None:
    """Write one scale's curves in the load_curves format."""
    scales = {c.model_scale for c in curves}
    if len(scales) > 1:
        raise ValidationError(f"one curve file holds one scale, got {sorted(scales)}")
    payload = {
        curve.condition: [[t, v] for t, v in curve.points] for curve in curves
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def load_category_curves(
    path: Union[str, Path], model_scale: str
) -> list[TrainingCurve]:
    """Read a category curve file: {category: {condition: [[tokens_b, npm], ...]}}."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: category curve file must be a JSON object")
    curves = []
    for category in sorted(raw):
        for condition in sorted(raw[category], key=_condition_rank):
            curves.append(
                TrainingCurve(
                    condition=condition,
                    model_scale=model_scale,
                    points=tuple((p[0], p[1]) for p in raw[category][condition]),
                    category=category,
                )
            )
    return curves


def build_curves(
    results: Iterable[TaskResult], specs: Sequence[TaskSpec]
) -> list[TrainingCurve]:
    """Aggregate raw task results into one macro-NPM curve per condition."""
    slices: dict[tuple[str, str], dict[float, list[TaskResult]]] = {}
    for result in results:
        key = (result.model_scale, result.condition)
        slices.setdefault(key, {}).setdefault(result.checkpoint_tokens, []).append(result)

    curves = []
    for scale, condition in sorted(slices):
        by_checkpoint = slices[(scale, condition)]
        points = tuple(
            (tokens, macro_average(by_checkpoint[tokens], specs))
            for tokens in sorted(by_checkpoint)
        )
        curves.append(
            TrainingCurve(condition=condition, model_scale=scale, points=points)
        )
    return curves
