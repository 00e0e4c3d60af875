"""Document model and JSONL corpus I/O.

A corpus is a JSONL file, one document per line. Each record carries an
id, text, two quality scores (STEM and educational, both on a 0..5
scale), and optionally a source url, provenance of synthetic rewrites,
and a cached token count. Unknown fields are preserved verbatim on a
load/write round trip so corpora can flow through external tooling
without loss.
"""

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Union

from .errors import ForgeError, ValidationError
from .tokens import CountingScheme


class RewriteStyle(enum.Enum):
    """The four rewrite registers a synthetic document can target."""

    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"
    QA = "qa"


class OriginKind(enum.Enum):
    ORIGINAL = "original"
    SYNTHETIC = "synthetic"


class QualityTier(enum.Enum):
    HIGH = "high"
    LOW = "low"
    UNASSIGNED = "unassigned"


class RecordError(ValidationError):
    """A corpus record violates the document schema."""


class CorpusWriteError(ForgeError):
    """A corpus file could not be written."""


SCORE_MIN = 0.0
SCORE_MAX = 5.0


@dataclass(frozen=True)
class QualityScores:
    """Classifier scores on the 0..5 scale; both must be in range."""

    stem: float
    edu: float

    def __post_init__(self) -> None:
        for name, value in (("stem", self.stem), ("edu", self.edu)):
            if not (SCORE_MIN <= value <= SCORE_MAX):
                raise ValidationError(
                    f"{name} score {value} outside [{SCORE_MIN}, {SCORE_MAX}]"
                )

    @property
    def max_score(self) -> float:
        return max(self.stem, self.edu)


@dataclass(frozen=True)
class Origin:
    """Provenance of a document: scraped original or styled rewrite."""

    kind: OriginKind
    style: "RewriteStyle | None" = None
    parent_id: "str | None" = None

    def __post_init__(self) -> None:
        if self.kind is OriginKind.SYNTHETIC:
            if self.style is None or self.parent_id is None:
                raise ValidationError("synthetic origin requires style and parent_id")
        else:
            if self.style is not None or self.parent_id is not None:
                raise ValidationError("original origin must not carry style/parent_id")


ORIGINAL = Origin(OriginKind.ORIGINAL)


@dataclass
class Document:
    """One corpus record.

    ``token_count`` is populated under the active counting scheme at load
    time. ``extra`` holds unknown JSONL fields so they survive a round
    trip untouched.
    """

    id: str
    text: str
    scores: QualityScores
    url: "str | None" = None
    origin: Origin = ORIGINAL
    token_count: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("document id must be non-empty")
        if not self.text:
            raise ValidationError(f"document {self.id}: text must be non-empty")
        if self.token_count < 0:
            raise ValidationError(f"document {self.id}: negative token_count")

    @property
    def is_synthetic(self) -> bool:
        return self.origin.kind is OriginKind.SYNTHETIC


@dataclass(frozen=True)
class RecordIssue:
    """One invalid corpus line: where it is and why it was rejected."""

    line_no: int
    cause: str

    def __str__(self) -> str:
        return f"line {self.line_no}: {self.cause}"


_KNOWN_FIELDS = frozenset(
    {"id", "text", "stem_score", "edu_score", "url", "origin", "token_count"}
)


def _origin_from_json(raw: object) -> Origin:
    if not isinstance(raw, dict):
        raise RecordError("origin must be an object")
    kind_raw = raw.get("kind")
    try:
        kind = OriginKind(kind_raw)
    except ValueError:
        raise RecordError(f"unknown origin kind {kind_raw!r}") from None
    style = None
    if raw.get("style") is not None:
        try:
            style = RewriteStyle(raw["style"])
        except ValueError:
            raise RecordError(f"unknown rewrite style {raw['style']!r}") from None
    parent_id = raw.get("parent_id")
    if parent_id is not None and not isinstance(parent_id, str):
        raise RecordError("origin parent_id must be a string")
    return Origin(kind=kind, style=style, parent_id=parent_id)


def _origin_to_json(origin: Origin) -> dict:
    payload: dict = {"kind": origin.kind.value}
    if origin.style is not None:
        payload["style"] = origin.style.value
    if origin.parent_id is not None:
        payload["parent_id"] = origin.parent_id
    return payload


def document_from_json(raw: dict) -> Document:
    """Parse one decoded JSONL object; raises RecordError on schema faults."""
    for name in ("id", "text", "stem_score", "edu_score"):
        if name not in raw:
            raise RecordError(f"missing required field {name!r}")
    if not isinstance(raw["id"], str):
        raise RecordError("id must be a string")
    if not isinstance(raw["text"], str):
        raise RecordError("text must be a string")
    for name in ("stem_score", "edu_score"):
        if not isinstance(raw[name], (int, float)) or isinstance(raw[name], bool):
            raise RecordError(f"{name} must be a number")
    url = raw.get("url")
    if url is not None and not isinstance(url, str):
        raise RecordError("url must be a string")
    origin = ORIGINAL
    if raw.get("origin") is not None:
        origin = _origin_from_json(raw["origin"])
    token_count = raw.get("token_count")
    if token_count is None:
        token_count = 0
    if not isinstance(token_count, int) or isinstance(token_count, bool):
        raise RecordError("token_count must be an integer")
    extra = {k: v for k, v in raw.items() if k not in _KNOWN_FIELDS}
    scores = QualityScores(stem=float(raw["stem_score"]), edu=float(raw["edu_score"]))
    return Document(
        id=raw["id"],
        text=raw["text"],
        scores=scores,
        url=url,
        origin=origin,
        token_count=token_count,
        extra=extra,
    )


def document_to_json(doc: Document) -> dict:
    payload: dict = {
        "id": doc.id,
        "text": doc.text,
        "stem_score": doc.scores.stem,
        "edu_score": doc.scores.edu,
    }
    if doc.url is not None:
        payload["url"] = doc.url
    if doc.origin != ORIGINAL:
        payload["origin"] = _origin_to_json(doc.origin)
    payload["token_count"] = doc.token_count
    payload.update(doc.extra)
    return payload


def load_documents(
    path: Union[str, Path], scheme: "CountingScheme | None" = None
) -> "Iterator[Document | RecordIssue]":
    """Stream a JSONL corpus, yielding a Document or a RecordIssue per line.

    A bad line never aborts iteration; only an unreadable file does.
    When ``scheme`` is given, each document's ``token_count`` is
    recomputed from its text (a stored value is advisory only). Duplicate
    ids are reported as issues on the later occurrence.
    """
    path = Path(path)
    seen: set[str] = set()
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                yield RecordIssue(line_no, f"invalid JSON: {exc}")
                continue
            if not isinstance(raw, dict):
                yield RecordIssue(line_no, "record must be a JSON object")
                continue
            try:
                doc = document_from_json(raw)
            except (RecordError, ValidationError) as exc:
                yield RecordIssue(line_no, str(exc))
                continue
            if doc.id in seen:
                yield RecordIssue(line_no, f"duplicate document id {doc.id!r}")
                continue
            seen.add(doc.id)
            if scheme is not None:
                doc.token_count = scheme.count(doc.text)
            yield doc


def read_corpus(
    path: Union[str, Path], scheme: "CountingScheme | None" = None
) -> list[Document]:
    """Load a whole corpus strictly: the first bad record raises."""
    docs: list[Document] = []
    for item in load_documents(path, scheme):
        if isinstance(item, RecordIssue):
            raise RecordError(f"{path}: {item}")
        docs.append(item)
    return docs


def write_documents(documents: Iterable[Document], path: Union[str, Path]) -> int:
    """Write documents as JSONL; returns the number written.

    Output is deterministic for a given document sequence: stable key
    order, compact separators, non-ASCII text kept literal.
    """
    path = Path(path)
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            for doc in documents:
                handle.write(
                    json.dumps(
                        document_to_json(doc), ensure_ascii=False, separators=(",", ":")
                    )
                )
                handle.write("\n")
                count += 1
    except OSError as exc:
        raise CorpusWriteError(
            f"cannot write corpus {path} after {count} records: {exc}"
        ) from exc
    return count
