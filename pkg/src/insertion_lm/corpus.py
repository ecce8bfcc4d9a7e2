"""Synthetic parallel corpora with exact, invertible channel transforms.

Channel 0 sentences are drawn i.i.d. from the lexicon ``w0 .. w{L-1}``; every
other channel is a bijective word map (to surface forms with a channel-specific
prefix) optionally followed by a reordering. Because each transform is a
bijection on sequences, translation between any two channels is exact.

Generation draws from the PCG64 stream ``(seed, rng.CORPUS)``: per example one
``integers(min_len, max_len + 1)`` draw for the length, then one
``integers(0, lexicon_size, size=length)`` draw for the words. Word maps use
the independent stream ``(seed, rng.LEXICON, channel)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import rng as rng_mod
from .errors import CorpusParseError, InvalidArgument

TRANSFORM_KINDS = ("identity", "dict", "reverse_dict", "rot_dict")
CHANNEL_PREFIXES = "wvutsrqp"


@dataclass(frozen=True)
class ParallelExample:
    channels: tuple[str, ...]

    @property
    def k(self) -> int:
        return len(self.channels)


@dataclass(frozen=True)
class ChannelTransform:
    """``kind`` plus the word map (channel-0 word -> channel word)."""

    kind: str
    mapping: dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise InvalidArgument(f"unknown transform {self.kind!r}; expected one of {TRANSFORM_KINDS}")
        if len(set(self.mapping.values())) != len(self.mapping):
            raise InvalidArgument("word map is not injective")
        object.__setattr__(self, "_inverse", {v: k for k, v in self.mapping.items()})

    def lexicon(self) -> set[str]:
        return set(self.mapping.values()) if self.kind != "identity" else set(self.mapping)

    def apply(self, tokens: Sequence[str]) -> list[str]:
        if self.kind == "identity":
            return list(tokens)
        out = [self.mapping[t] for t in tokens]
        if self.kind == "reverse_dict":
            out.reverse()
        elif self.kind == "rot_dict" and out:
            out = out[1:] + out[:1]
        return out

    def invert(self, tokens: Sequence[str]) -> list[str]:
        if self.kind == "identity":
            return list(tokens)
        out = list(tokens)
        if self.kind == "reverse_dict":
            out.reverse()
        elif self.kind == "rot_dict" and out:
            out = out[-1:] + out[:-1]
        inv = self._inverse  # type: ignore[attr-defined]
        return [inv[t] for t in out]


@dataclass(frozen=True)
class CorpusSpec:
    k: int = 3
    lexicon_size: int = 50
    min_len: int = 3
    max_len: int = 12
    transforms: tuple[str, ...] = ("identity", "reverse_dict", "rot_dict")
    seed: int = 42
    n_examples: int = 1000

    def __post_init__(self):
        if len(self.transforms) != self.k:
            raise InvalidArgument(f"need {self.k} transforms, got {len(self.transforms)}")
        if self.transforms[0] != "identity":
            raise InvalidArgument("channel 0 transform must be identity")
        if any(t == "identity" for t in self.transforms[1:]):
            raise InvalidArgument("only channel 0 may use the identity transform")
        if self.k > len(CHANNEL_PREFIXES):
            raise InvalidArgument(f"at most {len(CHANNEL_PREFIXES)} channels supported")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise InvalidArgument(f"bad length range [{self.min_len}, {self.max_len}]")

    def base_lexicon(self) -> list[str]:
        return [f"w{i}" for i in range(self.lexicon_size)]

    def channel_transforms(self) -> list[ChannelTransform]:
        base = self.base_lexicon()
        out = [ChannelTransform("identity", {w: w for w in base})]
        for c in range(1, self.k):
            perm = rng_mod.stream(self.seed, rng_mod.LEXICON, c).permutation(self.lexicon_size)
            prefix = CHANNEL_PREFIXES[c]
            out.append(ChannelTransform(self.transforms[c], {w: f"{prefix}{int(j)}" for w, j in zip(base, perm)}))
        return out


def gen_corpus(spec: CorpusSpec, n: int | None = None) -> list[ParallelExample]:
    if spec.lexicon_size < 2:
        raise InvalidArgument(f"lexicon_size must be >= 2, got {spec.lexicon_size}")
    n = spec.n_examples if n is None else n
    gen = rng_mod.stream(spec.seed, rng_mod.CORPUS)
    transforms = spec.channel_transforms()
    base = spec.base_lexicon()
    out = []
    for _ in range(n):
        length = int(gen.integers(spec.min_len, spec.max_len + 1))
        pivot = [base[int(i)] for i in gen.integers(0, spec.lexicon_size, size=length)]
        out.append(ParallelExample(tuple(" ".join(t.apply(pivot)) for t in transforms)))
    return out


def oracle_translate(
    tokens: Sequence[str] | str,
    from_channel: int,
    to_channel: int,
    spec: CorpusSpec,
    transforms: Sequence[ChannelTransform] | None = None,
) -> list[str]:
    """Exact translation: undo ``from_channel``'s transform, apply ``to_channel``'s."""
    if isinstance(tokens, str):
        tokens = tokens.split()
    transforms = spec.channel_transforms() if transforms is None else transforms
    for c in (from_channel, to_channel):
        if not 0 <= c < len(transforms):
            raise InvalidArgument(f"channel {c} out of range")
    src = transforms[from_channel]
    lex = src.lexicon()
    bad = [t for t in tokens if t not in lex]
    if bad:
        raise InvalidArgument(f"token(s) {bad[:5]} not in channel {from_channel} lexicon")
    if from_channel == to_channel:
        return list(tokens)
    return transforms[to_channel].apply(src.invert(tokens))


def save_corpus(path: str | Path, examples: Iterable[ParallelExample]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write("\t".join(ex.channels) + "\n")


def load_corpus(path: str | Path, k: int) -> list[ParallelExample]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            fields = line.split("\t")
            if len(fields) != k:
                raise CorpusParseError(line_no, f"expected {k} tab-separated fields, found {len(fields)}")
            out.append(ParallelExample(tuple(fields)))
    return out
