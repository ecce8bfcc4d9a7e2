"""Shared whitespace vocabulary over all channels."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InvalidArgument

PAD, UNK, SEP, EOS_SLOT = 0, 1, 2, 3
SPECIALS = ("PAD", "UNK", "[SEP]", "[EOS_SLOT]")
N_SPECIAL = len(SPECIALS)


@dataclass(frozen=True)
class ChannelSpec:
    names: tuple[str, ...]

    def __post_init__(self):
        if not 2 <= len(self.names) <= 8:
            raise InvalidArgument(f"channel count must be in [2, 8], got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise InvalidArgument(f"channel names must be distinct: {self.names}")

    @property
    def k(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Vocabulary:
    itos: tuple[str, ...]
    stoi: dict[str, int] = field(compare=False, repr=False)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        itos = tuple(SPECIALS) + tuple(tokens)
        stoi = {t: i for i, t in enumerate(itos)}
        if len(stoi) != len(itos):
            raise InvalidArgument("duplicate token in vocabulary")
        return cls(itos, stoi)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(t, UNK) for t in text.split()]

    def decode_ids(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            if not 0 <= i < len(self.itos):
                raise InvalidArgument(f"token id {i} outside vocabulary of size {len(self.itos)}")
            out.append(self.itos[i])
        return " ".join(out)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:N_SPECIAL]) != SPECIALS:
            raise InvalidArgument(f"{path}: first four lines must be {', '.join(SPECIALS)}")
        return cls.from_tokens(lines[N_SPECIAL:])


def build_vocab(lines: Iterable[str]) -> Vocabulary:
    """Ids ordered by descending frequency, ties broken lexicographically.

    Tab-separated multichannel lines are accepted; tabs count as whitespace.
    """
    counts: Counter[str] = Counter()
    n_lines = 0
    for line in lines:
        n_lines += 1
        counts.update(line.split())
    if n_lines == 0:
        raise InvalidArgument("cannot build a vocabulary from an empty corpus")
    clash = sorted(set(SPECIALS) & counts.keys())
    if clash:
        raise InvalidArgument(f"corpus contains reserved token(s): {', '.join(clash)}")
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocabulary.from_tokens(ordered)


def encode(text: str, vocab: Vocabulary) -> list[int]:
    return vocab.encode(text)


def decode_ids(ids: Iterable[int], vocab: Vocabulary) -> str:
    return vocab.decode_ids(ids)
