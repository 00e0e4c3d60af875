"""Budget-matched training conditions: build, shard, and describe.

A condition crosses a quality tier with the presence or absence of
rewrites. Rewrite conditions take one pass over originals plus all
synthetic styles; no-rewrite conditions repeat the originals for
ceil(target / original_tokens) epochs, reshuffling each epoch, with the
final epoch truncated document-wise to land inside the tolerance. All
shuffles are seeded, so identical inputs give byte-identical shards.
"""

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

from .corpus import Document, OriginKind, QualityTier, read_corpus, write_documents
from .errors import ConfigError, ForgeError
from .partition import digest_file
from .tokens import BudgetLedger
from .version import ARTIFACT_VERSION

DEFAULT_TOLERANCE = 0.005
MANIFEST_NAME = "condition_manifest.json"
TRAINING_CONFIG_NAME = "training_config.json"


class MixtureBuildError(ForgeError):
    """A condition cannot be built as specified."""


class ShardingError(ForgeError):
    """A document or directory prevents shard writing."""


def condition_name(tier: QualityTier, rewrites: bool) -> str:
    if tier is QualityTier.HIGH:
        base = "edu"
    elif tier is QualityTier.LOW:
        base = "non-edu"
    else:
        raise ConfigError("a condition uses the High or Low tier, not Unassigned")
    return base + "+rewrites" if rewrites else base


@dataclass(frozen=True)
class ConditionSpec:
    """One of the four experimental conditions (tier x rewrites)."""

    tier: QualityTier
    rewrites: bool
    target_budget: int
    seed: int

    def __post_init__(self) -> None:
        if self.tier not in (QualityTier.HIGH, QualityTier.LOW):
            raise ConfigError("condition tier must be High or Low")
        if self.target_budget < 0:
            raise ConfigError(f"target_budget must be nonnegative, got {self.target_budget}")

    @property
    def name(self) -> str:
        return condition_name(self.tier, self.rewrites)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "tier": self.tier.value,
            "rewrites": self.rewrites,
            "target_budget": self.target_budget,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "ConditionSpec":
        return cls(
            tier=QualityTier(raw["tier"]),
            rewrites=raw["rewrites"],
            target_budget=raw["target_budget"],
            seed=raw["seed"],
        )


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters held fixed across all four conditions."""

    condition: ConditionSpec
    optimizer_name: str = "AdamW"
    learning_rate: float = 3e-4
    schedule: str = "cosine"
    warmup_fraction: float = 0.05
    sequence_length: int = 4096

    def to_json(self) -> dict:
        return {
            "optimizer_name": self.optimizer_name,
            "learning_rate": self.learning_rate,
            "schedule": self.schedule,
            "warmup_fraction": self.warmup_fraction,
            "sequence_length": self.sequence_length,
            "condition": self.condition.to_json(),
        }


def emit_training_config(spec: ConditionSpec, path: Union[str, Path]) -> TrainingConfig:
    """Write the fixed training configuration for one condition."""
    config = TrainingConfig(condition=spec)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(config.to_json(), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return config


@dataclass
class ConditionBuild:
    """The in-memory document sequence for a condition, before sharding."""

    spec: ConditionSpec
    documents: list
    total_tokens: int
    unique_tokens: int
    epochs: int


def _budget_walk(documents: Sequence[Document], target: int) -> tuple[list, int]:
    """Admit documents in order while they fit; skip and keep scanning."""
    ledger = BudgetLedger(target=target)
    admitted = []
    for doc in documents:
        if ledger.admit(doc.token_count):
            admitted.append(doc)
    return admitted, ledger.accumulated


def _shuffled(documents: Sequence[Document], seed: int) -> list:
    order = list(documents)
    random.Random(seed).shuffle(order)
    return order


def _check_provenance(
    originals: Sequence[Document], rewrite_corpus: dict
) -> list:
    parent_ids = {doc.id for doc in originals}
    synthetic: list = []
    for style in sorted(rewrite_corpus, key=lambda s: s.value):
        for doc in rewrite_corpus[style]:
            if doc.origin.kind is not OriginKind.SYNTHETIC:
                raise MixtureBuildError(
                    f"rewrite corpus contains non-synthetic document {doc.id}"
                )
            if doc.origin.parent_id not in parent_ids:
                raise MixtureBuildError(
                    f"synthetic document {doc.id} has parent {doc.origin.parent_id!r} "
                    f"outside the original manifest"
                )
            if doc.origin.style is not style:
                raise MixtureBuildError(
                    f"document {doc.id} filed under style {style.value} but tagged "
                    f"{doc.origin.style.value}"
                )
            synthetic.append(doc)
    return synthetic


def build_condition(
    spec: ConditionSpec,
    originals: Sequence[Document],
    rewrite_corpus: "dict | None" = None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> ConditionBuild:
    """Assemble a condition's ordered document sequence under its budget.

    A shortfall beyond tolerance is an error naming the deficit; a
    manifest-provenance mismatch in the rewrite corpus likewise.
    """
    if tolerance < 0:
        raise ConfigError(f"tolerance must be nonnegative, got {tolerance}")
    if not originals:
        raise MixtureBuildError(f"condition {spec.name}: no original documents")
    original_tokens = sum(doc.token_count for doc in originals)
    if original_tokens == 0:
        raise MixtureBuildError(f"condition {spec.name}: original subset has 0 tokens")

    if spec.rewrites:
        if rewrite_corpus is None:
            raise MixtureBuildError(
                f"condition {spec.name} requires a rewrite corpus"
            )
        synthetic = _check_provenance(originals, rewrite_corpus)
        pool = list(originals) + synthetic
        sequence, total = _budget_walk(_shuffled(pool, spec.seed), spec.target_budget)
        epochs = 1
        unique = total
    else:
        epochs = max(1, math.ceil(spec.target_budget / original_tokens))
        sequence = []
        for epoch_index in range(epochs - 1):
            sequence.extend(_shuffled(originals, spec.seed + epoch_index))
        remainder = spec.target_budget - (epochs - 1) * original_tokens
        fill, fill_tokens = _budget_walk(
            _shuffled(originals, spec.seed + epochs - 1), remainder
        )
        sequence.extend(fill)
        total = (epochs - 1) * original_tokens + fill_tokens
        unique = original_tokens if epochs > 1 else fill_tokens

    deficit = spec.target_budget - total
    if deficit > tolerance * spec.target_budget:
        raise MixtureBuildError(
            f"condition {spec.name}: supply shortfall of {deficit} tokens against "
            f"target {spec.target_budget} (tolerance {tolerance:.3%})"
        )
    return ConditionBuild(
        spec=spec,
        documents=sequence,
        total_tokens=total,
        unique_tokens=unique,
        epochs=epochs,
    )


@dataclass(frozen=True)
class ShardDescriptor:
    """One shard file's identity: relative path, checksum, and sizes."""

    path: str
    sha256: str
    token_count: int
    doc_count: int

    def to_json(self) -> dict:
        return {
            "path": self.path,
            "sha256": self.sha256,
            "token_count": self.token_count,
            "doc_count": self.doc_count,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "ShardDescriptor":
        return cls(
            path=raw["path"],
            sha256=raw["sha256"],
            token_count=raw["token_count"],
            doc_count=raw["doc_count"],
        )


def shard_dataset(
    documents: Sequence[Document],
    shard_token_size: int,
    output_dir: Union[str, Path],
    prefix: str = "shard",
) -> list[ShardDescriptor]:
    """Pack documents into shard files in stream order.

    A shard closes when the next document would push it past
    shard_token_size; concatenating the shards reproduces the stream.
    """
    if shard_token_size < 1:
        raise ConfigError(f"shard_token_size must be positive, got {shard_token_size}")
    output_dir = Path(output_dir)
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ShardingError(f"cannot create shard directory {output_dir}: {exc}") from exc

    shards: list[list[Document]] = []
    current: list[Document] = []
    current_tokens = 0
    for doc in documents:
        if doc.token_count > shard_token_size:
            raise ShardingError(
                f"document {doc.id} ({doc.token_count} tokens) exceeds the "
                f"{shard_token_size}-token shard size"
            )
        if current and current_tokens + doc.token_count > shard_token_size:
            shards.append(current)
            current = []
            current_tokens = 0
        current.append(doc)
        current_tokens += doc.token_count
    if current:
        shards.append(current)

    descriptors = []
    for index, shard_docs in enumerate(shards):
        name = f"{prefix}_{index:05d}.jsonl"
        path = output_dir / name
        write_documents(shard_docs, path)
        descriptors.append(
            ShardDescriptor(
                path=name,
                sha256=digest_file(path).sha256,
                token_count=sum(d.token_count for d in shard_docs),
                doc_count=len(shard_docs),
            )
        )
    return descriptors


def read_shards(
    shard_dir: Union[str, Path], descriptors: Sequence[ShardDescriptor]
) -> list[Document]:
    """Concatenate shards in order, verifying each checksum."""
    shard_dir = Path(shard_dir)
    documents: list[Document] = []
    for descriptor in descriptors:
        path = shard_dir / descriptor.path
        actual = digest_file(path).sha256
        if actual != descriptor.sha256:
            raise ShardingError(
                f"{path}: checksum {actual} does not match descriptor {descriptor.sha256}"
            )
        docs = read_corpus(path)
        if len(docs) != descriptor.doc_count:
            raise ShardingError(f"{path}: expected {descriptor.doc_count} documents")
        documents.extend(docs)
    return documents


@dataclass
class ConditionDataset:
    """A built, sharded condition plus its bookkeeping."""

    spec: ConditionSpec
    shards: list
    total_tokens: int
    unique_tokens: int
    epochs: int
    manifest_path: Path


def materialize_condition(
    build: ConditionBuild,
    output_dir: Union[str, Path],
    *,
    shard_token_size: int,
    counting_scheme: str,
    rewrite_digests: "dict | None" = None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> ConditionDataset:
    """Shard a built condition and write its manifest and training config."""
    output_dir = Path(output_dir)
    descriptors = shard_dataset(build.documents, shard_token_size, output_dir)
    config = emit_training_config(build.spec, output_dir / TRAINING_CONFIG_NAME)
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "condition": build.spec.to_json(),
        "epochs": build.epochs,
        "total_tokens": build.total_tokens,
        "unique_tokens": build.unique_tokens,
        "tolerance": tolerance,
        "shard_token_size": shard_token_size,
        "counting_scheme": counting_scheme,
        "shards": [d.to_json() for d in descriptors],
        "training_config": config.to_json(),
        "rewrite_digests": rewrite_digests,
    }
    manifest_path = output_dir / MANIFEST_NAME
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return ConditionDataset(
        spec=build.spec,
        shards=descriptors,
        total_tokens=build.total_tokens,
        unique_tokens=build.unique_tokens,
        epochs=build.epochs,
        manifest_path=manifest_path,
    )
