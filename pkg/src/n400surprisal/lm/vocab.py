"""Word-level vocabulary with reserved unknown/boundary tokens."""

from __future__ import annotations

import hashlib
from typing import Iterable, Sequence

UNK, BOS, EOS = "<unk>", "<s>", "</s>"
RESERVED_TOKENS = (UNK, BOS, EOS)
UNK_ID, BOS_ID, EOS_ID = 0, 1, 2


class Vocabulary:
    """Bijection between words and ids over the non-reserved range.

    Ids 0..2 are reserved for the unknown-word, begin-of-sentence, and
    end-of-sentence tokens; regular words start at id 3 in frequency order.
    """

    def __init__(self, words: Sequence[str]):
        words = tuple(words)
        seen = set()
        for word in words:
            if not word or any(ch.isspace() for ch in word):
                raise ValueError(f"invalid vocabulary word {word!r}")
            if word in RESERVED_TOKENS:
                raise ValueError(f"word {word!r} collides with a reserved token")
            if word in seen:
                raise ValueError(f"duplicate vocabulary word {word!r}")
            seen.add(word)
        self._words = words
        self._ids = {w: i + len(RESERVED_TOKENS) for i, w in enumerate(words)}

    @property
    def words(self) -> tuple[str, ...]:
        return self._words

    @property
    def size(self) -> int:
        return len(self._words) + len(RESERVED_TOKENS)

    def __len__(self) -> int:
        return self.size

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and other._words == self._words

    def id_of(self, word: str) -> int:
        """Id of a word, or the unknown id when out of vocabulary."""
        return self._ids.get(word, UNK_ID)

    def word_of(self, token_id: int) -> str:
        if 0 <= token_id < len(RESERVED_TOKENS):
            return RESERVED_TOKENS[token_id]
        index = token_id - len(RESERVED_TOKENS)
        if 0 <= index < len(self._words):
            return self._words[index]
        raise IndexError(f"token id {token_id} outside vocabulary of size {self.size}")

    def content_hash(self) -> str:
        """SHA-256 of the word list; ties saved weights to their vocabulary."""
        payload = "\n".join(self._words).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word in self._words:
                fh.write(word + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            words = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(words)


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Keep the most frequent ``max_size - 3`` words of a token stream.

    Frequency ties are broken by first occurrence order.  Raises on an empty
    corpus or on corpus tokens that collide with the reserved tokens.
    """
    if max_size < len(RESERVED_TOKENS):
        raise ValueError(f"max_size must be at least {len(RESERVED_TOKENS)}, got {max_size}")
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    n_tokens = 0
    for position, word in enumerate(corpus):
        if word in RESERVED_TOKENS:
            raise ValueError(f"corpus token {word!r} collides with a reserved token")
        n_tokens += 1
        counts[word] = counts.get(word, 0) + 1
        if word not in first_seen:
            first_seen[word] = position
    if n_tokens == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda w: (-counts[w], first_seen[w]))
    return Vocabulary(ranked[: max_size - len(RESERVED_TOKENS)])


def tokenize(tokens: Sequence[str], vocab: Vocabulary) -> tuple[list[int], tuple[int, ...]]:
    """Map words to ids with a begin-of-sentence id prepended.

    Returns (ids, oov_positions) where oov_positions index into ``tokens``
    (not into the id list, which is offset by the begin-of-sentence id).
    """
    ids = [BOS_ID]
    oov = []
    for position, word in enumerate(tokens):
        token_id = vocab.id_of(word)
        if token_id == UNK_ID:
            oov.append(position)
        ids.append(token_id)
    return ids, tuple(oov)
