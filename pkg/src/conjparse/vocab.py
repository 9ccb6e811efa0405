"""Closed token vocabularies with stable integer ids.

A vocabulary is frozen once built: lookups of unknown tokens raise unless the
vocabulary was created with an UNK fallback (used for noisy corpora where the
train split cannot be guaranteed to cover every surface form).
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Sequence

from .errors import VocabError

UNK_TOKEN = "[UNK]"


class Vocabulary:
    def __init__(self, tokens: Sequence[str], unk: bool = False):
        self.tokens = tuple(tokens)
        self._index = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.unk = unk
        if unk and UNK_TOKEN not in self._index:
            raise ValueError(f"unk=True requires {UNK_TOKEN} in the token list")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            if self.unk:
                return self._index[UNK_TOKEN]
            raise VocabError(f"token {token!r} not in vocabulary") from None

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def hash_hex(self) -> str:
        h = hashlib.sha256()
        for t in self.tokens:
            h.update(t.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    @classmethod
    def from_corpus(cls, tokens: Iterable[str], reserved: Sequence[str] = (),
                    unk: bool = False) -> "Vocabulary":
        """Build a vocabulary with fixed reserved tokens first, then the sorted
        unique corpus tokens. Sorting makes the id assignment independent of
        corpus order, so the config hash is stable across shuffles."""
        seen = set(reserved)
        body = sorted({t for t in tokens if t not in seen})
        return cls(tuple(reserved) + tuple(body), unk=unk)
