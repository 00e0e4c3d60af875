"""Style-conditioned rewriting of a document subset, with resumability.

Every (document, style) pair is one unit of work. Workers only perform
HTTP calls; the main thread owns all file I/O, appending each synthetic
document to a per-style spool and then recording the outcome in an
append-only ledger (spool line flushed before its ledger line, so a
Succeeded record always has its document on disk). Resuming skips pairs
already Succeeded and retries Failed ones. Final corpora are assembled
from the spools by a deterministic sort, so output bytes do not depend
on completion timing.
"""

import enum
import hashlib
import json
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

from .corpus import (
    Document,
    Origin,
    OriginKind,
    RewriteStyle,
    document_from_json,
    document_to_json,
    read_corpus,
    write_documents,
)
from .errors import ConfigError, ForgeError, ValidationError
from .llm_client import ChatClient, ChatRequest, ClientError, build_messages
from .partition import digest_file
from .tokens import CountingScheme
from .version import ARTIFACT_VERSION

PLACEHOLDER = "{document}"


class EmptyRewriteError(ForgeError):
    """The service returned a blank completion for a rewrite."""


class OversizeDocumentError(ForgeError):
    """A document cannot be chunked under the input budget."""


class LedgerCorruptionError(ForgeError):
    """The job ledger or spool is inconsistent; carries recovery steps."""


class JobAbortedError(ForgeError):
    """The failure-rate ceiling was breached; the partial ledger is intact."""


@dataclass(frozen=True)
class StyleTemplate:
    """Prompt pair for one style; the user template wraps the document."""

    style: RewriteStyle
    system_instruction: str
    user_template: str

    def __post_init__(self) -> None:
        occurrences = self.user_template.count(PLACEHOLDER)
        if occurrences != 1:
            raise ConfigError(
                f"{self.style.value} template must contain {PLACEHOLDER} exactly "
                f"once, found {occurrences}"
            )
        if not self.system_instruction:
            raise ConfigError(f"{self.style.value} template: empty system instruction")


_SHARED_RULES = (
    "Keep the document's original language, preserve all factual content, "
    "and output only the rewritten document with no commentary."
)

DEFAULT_TEMPLATES: dict[RewriteStyle, StyleTemplate] = {
    RewriteStyle.EASY: StyleTemplate(
        style=RewriteStyle.EASY,
        system_instruction=(
            "You rewrite documents into plain, simple prose that a young reader "
            "could follow: short sentences, everyday vocabulary, ideas spelled "
            "out step by step. " + _SHARED_RULES
        ),
        user_template="Rewrite the following document at a lower reading level:\n\n"
        + PLACEHOLDER,
    ),
    RewriteStyle.MEDIUM: StyleTemplate(
        style=RewriteStyle.MEDIUM,
        system_instruction=(
            "You rewrite documents into clean, neutral, well-organized "
            "encyclopedia-style prose, as if drafting a reference article. "
            + _SHARED_RULES
        ),
        user_template="Rewrite the following document in an encyclopedic style:\n\n"
        + PLACEHOLDER,
    ),
    RewriteStyle.HARD: StyleTemplate(
        style=RewriteStyle.HARD,
        system_instruction=(
            "You rewrite documents into dense, technical, formal prose aimed at "
            "an expert reader, using precise terminology. " + _SHARED_RULES
        ),
        user_template="Rewrite the following document in a more technical and "
        "formal register:\n\n" + PLACEHOLDER,
    ),
    RewriteStyle.QA: StyleTemplate(
        style=RewriteStyle.QA,
        system_instruction=(
            "You convert documents into a question-and-answer format: a sequence "
            "of questions a curious reader would ask, each followed by an answer "
            "drawn from the document. " + _SHARED_RULES
        ),
        user_template="Convert the following document into question-and-answer "
        "form:\n\n" + PLACEHOLDER,
    ),
}


def templates_to_json(templates: dict[RewriteStyle, StyleTemplate]) -> dict:
    return {
        style.value: {
            "system_instruction": tpl.system_instruction,
            "user_template": tpl.user_template,
        }
        for style, tpl in sorted(templates.items(), key=lambda kv: kv[0].value)
    }


def load_templates(path: Union[str, Path]) -> dict[RewriteStyle, StyleTemplate]:
    """Read a template override file: {style: {system_instruction, user_template}}."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: template file must be a JSON object")
    templates = {}
    for name, entry in raw.items():
        try:
            style = RewriteStyle(name)
        except ValueError:
            raise ConfigError(f"{path}: unknown style {name!r}") from None
        templates[style] = StyleTemplate(
            style=style,
            system_instruction=entry["system_instruction"],
            user_template=entry["user_template"],
        )
    return templates


def template_digest(templates: dict[RewriteStyle, StyleTemplate]) -> str:
    canonical = json.dumps(templates_to_json(templates), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SamplingParams:
    """Rewrite sampling controls; temperature must stay above zero.

    The output budget scales with input size (output_factor) but never
    drops below output_floor tokens nor exceeds max_output_cap.
    Documents longer than max_input_tokens are chunked.
    """

    temperature: float = 0.8
    top_p: float = 0.95
    output_factor: float = 2.0
    output_floor: int = 64
    max_output_cap: int = 6000
    max_input_tokens: int = 3000

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ConfigError("rewriting is stochastic: temperature must be > 0")
        if not (0 < self.top_p <= 1):
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.output_floor < 1 or self.max_output_cap < self.output_floor:
            raise ConfigError("need 1 <= output_floor <= max_output_cap")
        if self.max_input_tokens < 1:
            raise ConfigError("max_input_tokens must be positive")

    def output_budget(self, input_tokens: int) -> int:
        scaled = math.ceil(self.output_factor * input_tokens)
        return min(self.max_output_cap, max(self.output_floor, scaled))

    def to_json(self) -> dict:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "output_factor": self.output_factor,
            "output_floor": self.output_floor,
            "max_output_cap": self.max_output_cap,
            "max_input_tokens": self.max_input_tokens,
        }

    def digest(self) -> str:
        canonical = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_prompt(template: StyleTemplate, document: Document) -> tuple:
    """System + user messages with the full document text substituted in."""
    if not document.text:
        raise ValidationError(f"document {document.id}: empty text")
    user = template.user_template.replace(PLACEHOLDER, document.text)
    return build_messages(template.system_instruction, user)


def synthetic_id(parent_id: str, style: RewriteStyle, attempt_seed: int) -> str:
    """Deterministic id: same (parent, style, seed) always maps to the same id."""
    material = f"{parent_id}\x1f{style.value}\x1f{attempt_seed}".encode("utf-8")
    return "syn-" + hashlib.sha256(material).hexdigest()[:16]


def split_paragraph_chunks(
    text: str, max_tokens: int, scheme: CountingScheme
) -> list[str]:
    """Greedy paragraph packing into chunks of at most max_tokens each.

    The budget is measured per paragraph; a single paragraph over the
    budget cannot be split and raises.
    """
    paragraphs = [p for p in re.split(r"\n{2,}", text) if p.strip()]
    chunks: list[str] = []
    current: list[str] = []
    current_tokens = 0
    for paragraph in paragraphs:
        size = scheme.count(paragraph)
        if size > max_tokens:
            raise OversizeDocumentError(
                f"paragraph of {size} tokens exceeds the {max_tokens}-token input budget"
            )
        if current and current_tokens + size > max_tokens:
            chunks.append("\n\n".join(current))
            current = [paragraph]
            current_tokens = size
        else:
            current.append(paragraph)
            current_tokens += size
    if current:
        chunks.append("\n\n".join(current))
    return chunks


def rewrite_document(
    client: ChatClient,
    document: Document,
    style: RewriteStyle,
    sampling: SamplingParams,
    *,
    template: StyleTemplate,
    model: str,
    scheme: CountingScheme,
    attempt_seed: int = 0,
) -> Document:
    """Rewrite one Original document into one synthetic document.

    Oversize documents are chunked at paragraph boundaries; chunks are
    rewritten independently and re-joined in order. A blank completion
    for any chunk fails the whole pair.
    """
    if document.origin.kind is not OriginKind.ORIGINAL:
        raise ValidationError(f"document {document.id} is already synthetic")
    if template.style is not style:
        raise ConfigError(f"template for {template.style.value} used with {style.value}")

    if document.token_count > sampling.max_input_tokens:
        pieces = split_paragraph_chunks(document.text, sampling.max_input_tokens, scheme)
    else:
        pieces = [document.text]

    completions: list[str] = []
    for piece in pieces:
        chunk_doc = document if len(pieces) == 1 else _chunk_view(document, piece, scheme)
        request = ChatRequest(
            model=model,
            messages=build_prompt(template, chunk_doc),
            temperature=sampling.temperature,
            top_p=sampling.top_p,
            max_output_tokens=sampling.output_budget(chunk_doc.token_count),
        )
        completion = client.send_chat(request)
        if not completion.strip():
            raise EmptyRewriteError(
                f"empty rewrite for document {document.id}, style {style.value}"
            )
        completions.append(completion)

    text = "\n\n".join(completions)
    return Document(
        id=synthetic_id(document.id, style, attempt_seed),
        text=text,
        scores=document.scores,
        origin=Origin(kind=OriginKind.SYNTHETIC, style=style, parent_id=document.id),
        token_count=scheme.count(text),
    )


def _chunk_view(document: Document, piece: str, scheme: CountingScheme) -> Document:
    return Document(
        id=document.id,
        text=piece,
        scores=document.scores,
        token_count=scheme.count(piece),
    )


class RewriteStatus(enum.Enum):
    SUCCEEDED = "succeeded"
    FAILED = "failed"


@dataclass(frozen=True)
class RewriteRecord:
    """Ledger line for one (document, style) pair's latest outcome."""

    parent_id: str
    style: RewriteStyle
    status: RewriteStatus
    attempts: int
    output_doc_id: "str | None" = None
    reason: "str | None" = None

    def __post_init__(self) -> None:
        if self.status is RewriteStatus.SUCCEEDED and self.output_doc_id is None:
            raise ValidationError("succeeded record needs output_doc_id")
        if self.status is RewriteStatus.FAILED and self.output_doc_id is not None:
            raise ValidationError("failed record must not carry output_doc_id")

    def to_json(self) -> dict:
        payload: dict = {
            "parent_id": self.parent_id,
            "style": self.style.value,
            "status": self.status.value,
            "attempts": self.attempts,
        }
        if self.output_doc_id is not None:
            payload["output_doc_id"] = self.output_doc_id
        if self.reason is not None:
            payload["reason"] = self.reason
        return payload

    @classmethod
    def from_json(cls, raw: dict) -> "RewriteRecord":
        return cls(
            parent_id=raw["parent_id"],
            style=RewriteStyle(raw["style"]),
            status=RewriteStatus(raw["status"]),
            attempts=raw["attempts"],
            output_doc_id=raw.get("output_doc_id"),
            reason=raw.get("reason"),
        )


LEDGER_NAME = "ledger.jsonl"
MANIFEST_NAME = "rewrite_manifest.json"
REPORT_NAME = "job_report.json"


def _spool_name(style: RewriteStyle) -> str:
    return f"spool_{style.value}.jsonl"


def corpus_name(style: RewriteStyle) -> str:
    return f"rewrites_{style.value}.jsonl"


def load_ledger(path: Union[str, Path]) -> dict[tuple[str, RewriteStyle], RewriteRecord]:
    """Latest record per (parent, style); a bad line is corruption, not data."""
    path = Path(path)
    state: dict[tuple[str, RewriteStyle], RewriteRecord] = {}
    if not path.exists():
        return state
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = RewriteRecord.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError, ValidationError) as exc:
                raise LedgerCorruptionError(
                    f"{path}: line {line_no} is unreadable ({exc}). Recovery: delete "
                    f"that line if it is a truncated tail write, or remove the ledger "
                    f"and spool_*.jsonl files to restart the job from scratch."
                ) from None
            state[(record.parent_id, record.style)] = record
    return state


def _append_jsonl(handle, payload: dict) -> None:
    handle.write(json.dumps(payload, ensure_ascii=False, separators=(",", ":")))
    handle.write("\n")
    handle.flush()


@dataclass
class RewriteJobResult:
    """Counts, yields, and artifact paths for one completed job."""

    succeeded: int
    failed: int
    per_style: dict
    original_tokens: int
    synthetic_tokens: int
    expansion_ratio: "float | None"
    corpus_paths: dict
    manifest_path: Path
    report_path: Path


def run_rewrite_job(
    documents: Sequence[Document],
    styles: Sequence[RewriteStyle],
    client: ChatClient,
    sampling: SamplingParams,
    job_dir: Union[str, Path],
    *,
    model: str,
    scheme: CountingScheme,
    templates: "dict[RewriteStyle, StyleTemplate] | None" = None,
    failure_ceiling: float = 0.05,
    attempt_seed: int = 0,
    max_workers: "int | None" = None,
) -> RewriteJobResult:
    """Rewrite every (document, style) pair not already recorded as Succeeded.

    Aborts (ledger intact, resumable) once failed pairs exceed
    failure_ceiling * planned pairs. On success, assembles one corpus
    file per style plus a combined manifest and a job report.
    """
    templates = templates if templates is not None else DEFAULT_TEMPLATES
    for style in styles:
        if style not in templates:
            raise ConfigError(f"no template for style {style.value}")
    if not (0 <= failure_ceiling <= 1):
        raise ConfigError(f"failure_ceiling must be in [0, 1], got {failure_ceiling}")
    job_dir = Path(job_dir)
    job_dir.mkdir(parents=True, exist_ok=True)

    by_id = {doc.id: doc for doc in documents}
    if len(by_id) != len(documents):
        raise ValidationError("input documents carry duplicate ids")
    planned = [(doc, style) for doc in documents for style in styles]
    ledger_path = job_dir / LEDGER_NAME
    state = load_ledger(ledger_path)
    for parent_id, style in state:
        if parent_id not in by_id or style not in styles:
            raise LedgerCorruptionError(
                f"{ledger_path}: pair ({parent_id!r}, {style.value}) is not in this "
                f"job's plan. Recovery: run against the original manifest and style "
                f"list, or remove the ledger and spool_*.jsonl files to restart."
            )

    pending: list[tuple[Document, RewriteStyle, int]] = []
    failures = 0
    for doc, style in planned:
        record = state.get((doc.id, style))
        if record is None:
            pending.append((doc, style, 0))
        elif record.status is RewriteStatus.FAILED:
            pending.append((doc, style, record.attempts))
            failures += 1
    allowed_failures = failure_ceiling * len(planned)

    started = time.monotonic()
    workers = max_workers if max_workers is not None else client.rate_limit.max_in_flight
    spools = {
        style: (job_dir / _spool_name(style)).open("a", encoding="utf-8")
        for style in styles
    }
    ledger_handle = ledger_path.open("a", encoding="utf-8")
    crash: "BaseException | None" = None
    pool = ThreadPoolExecutor(max_workers=max(1, workers))
    try:
        futures = {
            pool.submit(
                rewrite_document,
                client,
                doc,
                style,
                sampling,
                template=templates[style],
                model=model,
                scheme=scheme,
                attempt_seed=attempt_seed,
            ): (doc, style, prior_attempts)
            for doc, style, prior_attempts in pending
        }
        for future in as_completed(futures):
            doc, style, prior_attempts = futures[future]
            try:
                synthetic = future.result()
            except (ClientError, EmptyRewriteError, OversizeDocumentError) as exc:
                record = RewriteRecord(
                    parent_id=doc.id,
                    style=style,
                    status=RewriteStatus.FAILED,
                    attempts=prior_attempts + 1,
                    reason=str(exc),
                )
                if state.get((doc.id, style)) is None or (
                    state[(doc.id, style)].status is not RewriteStatus.FAILED
                ):
                    failures += 1
                _append_jsonl(ledger_handle, record.to_json())
                state[(doc.id, style)] = record
                if failures > allowed_failures:
                    raise JobAbortedError(
                        f"aborting: {failures} failed pairs exceed the ceiling of "
                        f"{failure_ceiling:.0%} of {len(planned)} planned; ledger "
                        f"kept for resume"
                    )
            except ForgeError:
                raise
            except BaseException as exc:
                if crash is None:
                    crash = exc
            else:
                if state.get((doc.id, style)) is not None and (
                    state[(doc.id, style)].status is RewriteStatus.FAILED
                ):
                    failures -= 1
                _append_jsonl(spools[style], document_to_json(synthetic))
                record = RewriteRecord(
                    parent_id=doc.id,
                    style=style,
                    status=RewriteStatus.SUCCEEDED,
                    attempts=prior_attempts + 1,
                    output_doc_id=synthetic.id,
                )
                _append_jsonl(ledger_handle, record.to_json())
                state[(doc.id, style)] = record
        if crash is not None:
            raise crash
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
        ledger_handle.close()
        for handle in spools.values():
            handle.close()

    wall_seconds = time.monotonic() - started
    return _assemble_outputs(
        documents=documents,
        styles=styles,
        state=state,
        job_dir=job_dir,
        sampling=sampling,
        templates=templates,
        model=model,
        scheme=scheme,
        attempt_seed=attempt_seed,
        wall_seconds=wall_seconds,
    )


def _assemble_outputs(
    *,
    documents: Sequence[Document],
    styles: Sequence[RewriteStyle],
    state: dict,
    job_dir: Path,
    sampling: SamplingParams,
    templates: dict,
    model: str,
    scheme: CountingScheme,
    attempt_seed: int,
    wall_seconds: float,
) -> RewriteJobResult:
    succeeded_ids: dict[RewriteStyle, dict[str, RewriteRecord]] = {s: {} for s in styles}
    failed_total = 0
    for record in state.values():
        if record.status is RewriteStatus.SUCCEEDED:
            succeeded_ids[record.style][record.output_doc_id] = record
        else:
            failed_total += 1

    corpus_paths: dict[RewriteStyle, Path] = {}
    per_style: dict[str, dict] = {}
    synthetic_tokens = 0
    for style in sorted(styles, key=lambda s: s.value):
        spool_path = job_dir / _spool_name(style)
        latest: dict[str, Document] = {}
        if spool_path.exists():
            for doc in read_spool(spool_path):
                latest[doc.id] = doc
        wanted = succeeded_ids[style]
        missing = set(wanted) - set(latest)
        if missing:
            raise LedgerCorruptionError(
                f"{spool_path}: ledger marks {len(missing)} document(s) Succeeded "
                f"but the spool lacks them (e.g. {sorted(missing)[0]}). Recovery: "
                f"remove the ledger and spool files and rerun the job."
            )
        final = sorted(
            (latest[doc_id] for doc_id in wanted), key=lambda d: d.origin.parent_id
        )
        out_path = job_dir / corpus_name(style)
        write_documents(final, out_path)
        corpus_paths[style] = out_path
        style_tokens = sum(doc.token_count for doc in final)
        synthetic_tokens += style_tokens
        per_style[style.value] = {
            "succeeded": len(final),
            "failed": sum(
                1
                for record in state.values()
                if record.style is style and record.status is RewriteStatus.FAILED
            ),
            "token_count": style_tokens,
        }

    original_tokens = sum(doc.token_count for doc in documents)
    expansion_ratio = (
        synthetic_tokens / original_tokens if original_tokens > 0 else None
    )
    succeeded_total = sum(entry["succeeded"] for entry in per_style.values())

    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "model": model,
        "styles": [style.value for style in sorted(styles, key=lambda s: s.value)],
        "counting_scheme": scheme.spec_string(),
        "attempt_seed": attempt_seed,
        "sampling": sampling.to_json(),
        "sampling_digest": sampling.digest(),
        "template_digest": template_digest(templates),
        "per_style": {
            style.value: {
                "path": corpus_name(style),
                "sha256": digest_file(corpus_paths[style]).sha256,
                **per_style[style.value],
            }
            for style in sorted(styles, key=lambda s: s.value)
        },
        "original_tokens": original_tokens,
        "synthetic_tokens": synthetic_tokens,
        "expansion_ratio": expansion_ratio,
        "succeeded": succeeded_total,
        "failed": failed_total,
    }
    manifest_path = job_dir / MANIFEST_NAME
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    report = {
        "wall_time_seconds": wall_seconds,
        "succeeded": succeeded_total,
        "failed": failed_total,
        "per_style": per_style,
        "expansion_ratio": expansion_ratio,
        "sampling_digest": sampling.digest(),
        "template_digest": template_digest(templates),
    }
    report_path = job_dir / REPORT_NAME
    report_path.write_text(
        json.dumps(report, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return RewriteJobResult(
        succeeded=succeeded_total,
        failed=failed_total,
        per_style=per_style,
        original_tokens=original_tokens,
        synthetic_tokens=synthetic_tokens,
        expansion_ratio=expansion_ratio,
        corpus_paths=corpus_paths,
        manifest_path=manifest_path,
        report_path=report_path,
    )


def read_spool(path: Union[str, Path]) -> list[Document]:
    """Read every parseable spool line, in order, duplicates included.

    Retried pairs legitimately appear twice (the caller keeps the last),
    and a line truncated by a crash is skipped: the matching ledger
    record was never written (spool flushes first), so nothing needs it.
    """
    docs: list[Document] = []
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            try:
                docs.append(document_from_json(json.loads(line)))
            except (json.JSONDecodeError, ValidationError, KeyError):
                continue
    return docs


def load_rewrite_corpus(job_dir: Union[str, Path]) -> dict[RewriteStyle, list[Document]]:
    """Load the per-style corpora named by a job's manifest, verifying checksums."""
    job_dir = Path(job_dir)
    manifest_path = job_dir / MANIFEST_NAME
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    corpora: dict[RewriteStyle, list[Document]] = {}
    for name, entry in manifest["per_style"].items():
        style = RewriteStyle(name)
        path = job_dir / entry["path"]
        actual = digest_file(path).sha256
        if actual != entry["sha256"]:
            raise ValidationError(
                f"{path}: checksum {actual} does not match manifest {entry['sha256']}"
            )
        corpora[style] = read_corpus(path)
    return corpora
