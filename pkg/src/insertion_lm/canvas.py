"""Concatenated multichannel canvases, partial observations and slot targets.

A canvas is the list of ``(token_id, channel_id)`` items currently observed,
each channel's segment closed by a SEP item. Slot ``i`` means "insert
immediately to the left of item ``i``", so a canvas of length T has T slots.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgument
from .vocab import EOS_SLOT, SEP

Item = tuple[int, int]


class Obs(enum.Enum):
    FULL = "full"
    EMPTY = "empty"
    PARTIAL = "partial"
    ABSENT = "absent"  # channel left out of the canvas entirely


@dataclass(frozen=True)
class Prior:
    kind: str = "uniform"  # "uniform" | "tree"
    tau: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "tree"):
            raise InvalidArgument(f"unknown prior {self.kind!r}")
        if not self.tau > 0:
            raise InvalidArgument(f"tree temperature must be positive, got {self.tau}")


UNIFORM = Prior()


@dataclass
class Canvas:
    tokens: list[int]
    channels: list[int]

    @classmethod
    def from_items(cls, items: Sequence[Item]) -> "Canvas":
        return cls([t for t, _ in items], [c for _, c in items])

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def items(self) -> list[Item]:
        return list(zip(self.tokens, self.channels))

    def copy(self) -> "Canvas":
        return Canvas(list(self.tokens), list(self.channels))

    def insert(self, slot: int, token: int) -> None:
        """Insert ``token`` left of item ``slot``, inheriting its channel."""
        self.tokens.insert(slot, token)
        self.channels.insert(slot, self.channels[slot])

    def channel_ids(self) -> list[int]:
        return [c for t, c in zip(self.tokens, self.channels) if t == SEP]

    def split(self) -> dict[int, list[int]]:
        """Tokens of each channel segment, keyed by channel id (SEPs dropped)."""
        out: dict[int, list[int]] = {}
        cur: list[int] = []
        for t, c in zip(self.tokens, self.channels):
            if t == SEP:
                out[c] = cur
                cur = []
            else:
                cur.append(t)
        return out

    def check(self) -> None:
        """Raise if the canvas is not well formed."""
        if not self.tokens or self.tokens[-1] != SEP:
            raise InvalidArgument("canvas must end with a SEP item")
        seen = []
        for i, (t, c) in enumerate(zip(self.tokens, self.channels)):
            if i and c < self.channels[i - 1]:
                raise InvalidArgument(f"channel ids decrease at item {i}")
            if t == SEP:
                if c in seen:
                    raise InvalidArgument(f"channel {c} has two SEP items")
                seen.append(c)
            elif i + 1 < len(self.tokens) and self.channels[i + 1] != c:
                raise InvalidArgument(f"item {i} is not followed by its channel's SEP")


@dataclass
class Instance:
    canvas: Canvas
    targets: list[list[tuple[int, float]]]
    example_index: int | None = field(default=None)


def concatenate_channels(channel_ids: Sequence[Sequence[int]], channels: Sequence[int] | None = None) -> list[Item]:
    """``[ch0 tokens, SEP, ch1 tokens, SEP, ...]`` with channel ids attached."""
    channels = range(len(channel_ids)) if channels is None else channels
    out: list[Item] = []
    for c, ids in zip(channels, channel_ids):
        out.extend((int(t), c) for t in ids)
        out.append((SEP, c))
    return out


def _kept_flags(n: int, rng: np.random.Generator) -> np.ndarray:
    m = int(rng.integers(0, n + 1))
    keep = np.zeros(n, dtype=bool)
    if m:
        keep[rng.choice(n, size=m, replace=False)] = True
    return keep


def sample_canvas(
    full: Sequence[Item],
    mask: Mapping[int, Obs],
    rng: np.random.Generator,
    global_uniform: bool = False,
) -> tuple[Canvas, dict[int, list[int]]]:
    """Draw a partial observation of ``full``.

    Each PARTIAL channel of length n keeps a uniform-size (0..n), uniform
    random subset of its tokens; FULL keeps everything, EMPTY nothing; SEPs
    always stay. With ``global_uniform`` a single uniform-size subset is drawn
    over the pooled tokens of all PARTIAL channels instead.

    Returns the canvas and the missing spans, keyed by the canvas index of the
    kept item to the right of each maximal run of dropped tokens.
    """
    keep = np.ones(len(full), dtype=bool)
    by_channel: dict[int, list[int]] = {}
    for i, (t, c) in enumerate(full):
        if t != SEP:
            by_channel.setdefault(c, []).append(i)
    partial_pos: list[int] = []
    for c in sorted(by_channel):
        state = mask.get(c, Obs.PARTIAL)
        pos = by_channel[c]
        if state is Obs.EMPTY:
            keep[pos] = False
        elif state is Obs.PARTIAL:
            if global_uniform:
                partial_pos.extend(pos)
            else:
                keep[pos] = _kept_flags(len(pos), rng)
        elif state is Obs.ABSENT:
            raise InvalidArgument(f"channel {c} is ABSENT but present in the full sequence")
    if global_uniform and partial_pos:
        keep[partial_pos] = _kept_flags(len(partial_pos), rng)

    tokens, chans = [], []
    spans: dict[int, list[int]] = {}
    pending: list[int] = []
    for (t, c), k in zip(full, keep):
        if k:
            if pending:
                spans[len(tokens)] = pending
                pending = []
            tokens.append(t)
            chans.append(c)
        else:
            pending.append(t)
    return Canvas(tokens, chans), spans


def slot_weights(s: int, prior: Prior = UNIFORM) -> list[float]:
    if s < 1:
        raise InvalidArgument("slot_weights needs a non-empty span")
    if prior.kind == "uniform":
        return [1.0 / s] * s
    centre = (s - 1) / 2
    logits = [-abs(i - centre) / prior.tau for i in range(s)]
    top = max(logits)
    e = [math.exp(v - top) for v in logits]
    z = sum(e)
    return [v / z for v in e]


def build_training_instance(
    canvas: Canvas,
    spans: Mapping[int, Sequence[int]],
    prior: Prior = UNIFORM,
    span_mass: bool = False,
) -> list[list[tuple[int, float]]]:
    """Per-slot ``(token, weight)`` targets; untouched slots target EOS_SLOT.

    With ``span_mass`` each slot's weights sum to the span length instead of 1.
    """
    targets: list[list[tuple[int, float]]] = []
    for i in range(len(canvas)):
        span = spans.get(i)
        if span:
            w = slot_weights(len(span), prior)
            scale = len(span) if span_mass else 1.0
            targets.append([(int(t), wi * scale) for t, wi in zip(span, w)])
        else:
            targets.append([(EOS_SLOT, 1.0)])
    return targets


def reconstruct(canvas: Canvas, targets: Sequence[Sequence[tuple[int, float]]]) -> list[Item]:
    out: list[Item] = []
    for (t, c), slot in zip(canvas.items, targets):
        out.extend((tok, c) for tok, _ in slot if tok != EOS_SLOT)
        out.append((t, c))
    return out
