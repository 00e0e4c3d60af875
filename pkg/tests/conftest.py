"""Shared test helpers."""

import pytest

from rewrite_forge.corpus import Document, Origin, OriginKind, QualityScores, RewriteStyle


def make_doc(
    doc_id: str,
    tokens: int = 1,
    stem: float = 3.0,
    edu: float = 1.0,
    text: "str | None" = None,
    style: "RewriteStyle | None" = None,
    parent_id: "str | None" = None,
    url: "str | None" = None,
) -> Document:
    """A document whose whitespace token count equals ``tokens``."""
    if text is None:
        text = " ".join(f"w{i}" for i in range(tokens))
    origin = Origin(OriginKind.ORIGINAL)
    if parent_id is not None:
        origin = Origin(OriginKind.SYNTHETIC, style=style, parent_id=parent_id)
    return Document(
        id=doc_id,
        text=text,
        scores=QualityScores(stem=stem, edu=edu),
        url=url,
        origin=origin,
        token_count=tokens,
    )


@pytest.fixture
def doc_factory():
    return make_doc
