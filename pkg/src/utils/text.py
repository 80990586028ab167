"""Text utilities: newline normalisation, whitespace cleanup and tokenisation."""

import hashlib
import re
from typing import List

# Words or single punctuation marks.
_TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def normalize_newlines(text: str) -> str:
    """Convert CRLF and bare CR line endings to LF."""
    if not text:
        return ""
    return text.replace("\r\n", "\n").replace("\r", "\n")


def clean_text(text: str) -> str:
    """Collapse runs of whitespace to single spaces and strip the ends."""
    if not text:
        return ""
    return re.sub(r"\s+", " ", text.strip())


def split_tokens(text: str) -> List[str]:
    """Split text into word and punctuation pieces."""
    if not text:
        return []
    return _TOKEN_PATTERN.findall(text)


def token_id(piece: str) -> int:
    """Stable 31-bit id for a token piece, independent of the interpreter's hash seed."""
    digest = hashlib.blake2b(piece.encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little") & 0x7FFFFFFF


def tokenize(text: str) -> List[int]:
    """Map text to token ids."""
    return [token_id(piece) for piece in split_tokens(text)]


def count_tokens(text: str) -> int:
    """Number of pieces ``split_tokens`` yields for ``text``."""
    return len(split_tokens(text))


def stable_digest(*parts: str) -> str:
    """Hex sha256 over the parts, separated so that ('ab', 'c') != ('a', 'bc')."""
    hasher = hashlib.sha256()
    for part in parts:
        data = part.encode("utf-8")
        hasher.update(len(data).to_bytes(8, "little"))
        hasher.update(data)
    return hasher.hexdigest()
