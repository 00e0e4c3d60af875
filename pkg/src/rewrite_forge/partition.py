"""Quality-tier classification and budget-capped subset selection.

Documents land in the High tier when either quality score exceeds a
strict threshold, in the Low tier when scores sit inside a closed band,
and are Unassigned otherwise (the band and threshold leave a gap by
design). Subset selection walks a seeded permutation of the candidates
and admits whole documents under a stop-before-overflow budget.
"""

import enum
import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

from .corpus import Document, QualityScores, QualityTier
from .errors import ConfigError
from .tokens import BudgetLedger, CountingScheme
from .version import ARTIFACT_VERSION


class LowBandRule(enum.Enum):
    """How the low band [low_min, low_max] is applied to the two scores.

    MAX_SCORE_IN_BAND: the larger score must lie in the band (so both
    are <= low_max). EITHER_SCORE_IN_BAND: one score in the band
    suffices.
    """

    MAX_SCORE_IN_BAND = "max-score-in-band"
    EITHER_SCORE_IN_BAND = "either-score-in-band"


@dataclass(frozen=True)
class TierPolicy:
    high_threshold: float = 2.5
    low_min: float = 0.5
    low_max: float = 2.0
    low_predicate: LowBandRule = LowBandRule.MAX_SCORE_IN_BAND

    def __post_init__(self) -> None:
        if not (self.low_min <= self.low_max < self.high_threshold):
            raise ConfigError(
                "tier policy requires low_min <= low_max < high_threshold, got "
                f"{self.low_min}, {self.low_max}, {self.high_threshold}"
            )

    def to_json(self) -> dict:
        return {
            "high_threshold": self.high_threshold,
            "low_min": self.low_min,
            "low_max": self.low_max,
            "low_predicate": self.low_predicate.value,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "TierPolicy":
        return cls(
            high_threshold=raw["high_threshold"],
            low_min=raw["low_min"],
            low_max=raw["low_max"],
            low_predicate=LowBandRule(raw["low_predicate"]),
        )


DEFAULT_POLICY = TierPolicy()


def classify_tier(scores: QualityScores, policy: TierPolicy = DEFAULT_POLICY) -> QualityTier:
    """Assign exactly one tier: High beats Low, strict > for High."""
    if scores.max_score > policy.high_threshold:
        return QualityTier.HIGH
    if policy.low_predicate is LowBandRule.MAX_SCORE_IN_BAND:
        in_band = policy.low_min <= scores.max_score <= policy.low_max
    else:
        in_band = any(
            policy.low_min <= value <= policy.low_max
            for value in (scores.stem, scores.edu)
        )
    return QualityTier.LOW if in_band else QualityTier.UNASSIGNED


@dataclass
class SourceDigest:
    """Identity of an input file: just its name and content hash."""

    name: str
    sha256: str

    def to_json(self) -> dict:
        return {"name": self.name, "sha256": self.sha256}

    @classmethod
    def from_json(cls, raw: dict) -> "SourceDigest":
        return cls(name=raw["name"], sha256=raw["sha256"])


def digest_file(path: Union[str, Path]) -> SourceDigest:
    path = Path(path)
    return SourceDigest(name=path.name, sha256=hashlib.sha256(path.read_bytes()).hexdigest())


@dataclass
class SubsetManifest:
    """Deterministic record of one tier selection under a token budget.

    ``document_ids`` are in admission order. ``supply_shortfall`` is set
    when the matching candidates' total tokens fall below the budget
    (the stream simply ran dry, which is not an error).
    """

    tier: QualityTier
    policy: TierPolicy
    seed: int
    document_ids: list[str]
    total_tokens: int
    budget: int
    counting_scheme: str
    supply_shortfall: bool = False
    sources: list[SourceDigest] = field(default_factory=list)
    artifact_version: str = ARTIFACT_VERSION

    def to_json(self) -> dict:
        return {
            "tier": self.tier.value,
            "policy": self.policy.to_json(),
            "seed": self.seed,
            "document_ids": list(self.document_ids),
            "total_tokens": self.total_tokens,
            "budget": self.budget,
            "counting_scheme": self.counting_scheme,
            "supply_shortfall": self.supply_shortfall,
            "sources": [s.to_json() for s in self.sources],
            "artifact_version": self.artifact_version,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "SubsetManifest":
        return cls(
            tier=QualityTier(raw["tier"]),
            policy=TierPolicy.from_json(raw["policy"]),
            seed=raw["seed"],
            document_ids=list(raw["document_ids"]),
            total_tokens=raw["total_tokens"],
            budget=raw["budget"],
            counting_scheme=raw["counting_scheme"],
            supply_shortfall=raw["supply_shortfall"],
            sources=[SourceDigest.from_json(s) for s in raw.get("sources", [])],
            artifact_version=raw.get("artifact_version", ARTIFACT_VERSION),
        )

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False, indent=2)
            + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SubsetManifest":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def select_subset(
    documents: Iterable[Document],
    tier: QualityTier,
    budget_tokens: int,
    seed: int,
    policy: TierPolicy = DEFAULT_POLICY,
    *,
    scheme: CountingScheme,
    sources: "list[SourceDigest] | None" = None,
) -> SubsetManifest:
    """Select tier-matching documents under a token budget, deterministically.

    Candidates are visited in a seeded permutation of arrival order. A
    candidate is admitted only if it fits the remaining budget whole;
    oversized candidates are skipped and the walk continues, so smaller
    later documents can still fill the gap. Identical inputs and seed
    give an identical manifest.
    """
    if budget_tokens < 0:
        raise ConfigError(f"budget must be nonnegative, got {budget_tokens}")
    candidates = [doc for doc in documents if classify_tier(doc.scores, policy) is tier]
    order = list(range(len(candidates)))
    random.Random(seed).shuffle(order)

    ledger = BudgetLedger(target=budget_tokens)
    admitted: list[str] = []
    for index in order:
        doc = candidates[index]
        if ledger.admit(doc.token_count):
            admitted.append(doc.id)
    supply = sum(doc.token_count for doc in candidates)
    return SubsetManifest(
        tier=tier,
        policy=policy,
        seed=seed,
        document_ids=admitted,
        total_tokens=ledger.accumulated,
        budget=budget_tokens,
        counting_scheme=scheme.spec_string(),
        supply_shortfall=supply < budget_tokens,
        sources=list(sources or []),
    )
