"""Pluggable token counting and budget tallying.

Every budget in the pipeline (subset selection, rewrite yield, mixture
matching) is expressed in tokens under one configurable counting scheme,
so the numbers stay mutually consistent across stages. Counting is
deterministic: the same text under the same scheme always yields the
same count.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

from .errors import ConfigError


class CountingScheme:
    """Base class for deterministic text -> token-count functions."""

    def count(self, text: str) -> int:
        raise NotImplementedError

    def spec_string(self) -> str:
        """Config-file form of this scheme (see :func:`parse_scheme`)."""
        raise NotImplementedError


@dataclass(frozen=True)
class WhitespaceWords(CountingScheme):
    """Counts maximal non-whitespace runs. Default for desk-scale runs."""

    def count(self, text: str) -> int:
        return len(text.split())

    def spec_string(self) -> str:
        return "whitespace"


@dataclass(frozen=True)
class BytesDiv4(CountingScheme):
    """ceil(utf8_bytes / 4): a cheap large-scale estimate (~4 bytes/token)."""

    def count(self, text: str) -> int:
        return (len(text.encode("utf-8")) + 3) // 4

    def spec_string(self) -> str:
        return "bytes-div4"


class VocabularyFile(CountingScheme):
    """Longest-match segmentation over a fixed vocabulary, byte fallback.

    The vocabulary file is UTF-8, one token string per line. At each
    position the longest matching entry is consumed as one token; input
    that matches no entry counts one token per byte.
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        try:
            raw = self.path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"vocabulary file unreadable: {self.path}: {exc}") from exc
        entries = [line for line in raw.splitlines() if line]
        if not entries:
            raise ConfigError(f"vocabulary file is empty: {self.path}")
        self._by_length: dict[int, set[bytes]] = {}
        for entry in entries:
            encoded = entry.encode("utf-8")
            self._by_length.setdefault(len(encoded), set()).add(encoded)
        self._lengths = sorted(self._by_length, reverse=True)

    def count(self, text: str) -> int:
        data = text.encode("utf-8")
        end = len(data)
        pos = 0
        tokens = 0
        while pos < end:
            matched = 0
            for length in self._lengths:
                if length <= end - pos and data[pos:pos + length] in self._by_length[length]:
                    matched = length
                    break
            pos += matched if matched else 1
            tokens += 1
        return tokens

    def spec_string(self) -> str:
        return f"vocab:{self.path}"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, VocabularyFile) and other.path == self.path

    def __hash__(self) -> int:
        return hash(("vocab", self.path))


def parse_scheme(spec: str) -> CountingScheme:
    """Build a scheme from its config string: whitespace | bytes-div4 | vocab:<path>."""
    if spec == "whitespace":
        return WhitespaceWords()
    if spec == "bytes-div4":
        return BytesDiv4()
    if spec.startswith("vocab:"):
        path = spec[len("vocab:"):]
        if not path:
            raise ConfigError("vocab scheme requires a path: vocab:<path>")
        return VocabularyFile(path)
    raise ConfigError(f"unknown counting scheme: {spec!r}")


def count_tokens(text: str, scheme: CountingScheme) -> int:
    """Deterministic token count of ``text`` under ``scheme``."""
    return scheme.count(text)


def tally_corpus(documents: Iterable) -> int:
    """Exact sum of ``token_count`` over the given documents."""
    return sum(doc.token_count for doc in documents)


@dataclass
class BudgetLedger:
    """Stop-before-overflow token budget tracker.

    ``admit`` accepts a document size only when it fits entirely within
    the remaining budget, so ``accumulated <= target`` always holds and
    documents are never split.
    """

    target: int
    accumulated: int = 0

    def __post_init__(self) -> None:
        if self.target < 0:
            raise ConfigError(f"budget target must be nonnegative, got {self.target}")
        if self.accumulated < 0:
            raise ConfigError("accumulated tokens must be nonnegative")

    def fits(self, token_count: int) -> bool:
        return self.accumulated + token_count <= self.target

    def admit(self, token_count: int) -> bool:
        """Admit ``token_count`` tokens if they fit; returns whether admitted."""
        if token_count < 0:
            raise ValueError(f"token_count must be nonnegative, got {token_count}")
        if not self.fits(token_count):
            return False
        self.accumulated += token_count
        return True

    @property
    def remaining(self) -> int:
        return self.target - self.accumulated
