"""Inference: parallel greedy, serial greedy/sampled insertion, joint sampling.

Parallel greedy inserts the per-slot argmax into every slot at once and stops
when every slot picks EOS_SLOT. The serial modes pick one (slot, token) pair
from the joint restricted to open slots; drawing EOS_SLOT closes that slot,
and an insertion reopens the new token's slot and the slot of the item it was
inserted in front of.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from . import rng as rng_mod
from .canvas import Canvas
from .errors import ContractViolation, InvalidArgument
from .model import ModelConfig, logits_for
from .numeric import Params
from .vocab import EOS_SLOT, SEP

MODES = ("parallel", "serial_greedy", "serial_sample")


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "parallel"
    temperature: float = 1.0
    max_iters: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown decode mode {self.mode!r}; expected one of {MODES}")
        if not self.temperature > 0:
            raise InvalidArgument("temperature must be positive")
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be >= 1")


@dataclass
class DecodeTrace:
    iterations: list[list[tuple[int, int, int]]] = field(default_factory=list)
    wall_time: float = 0.0
    canvas: Canvas | None = None
    truncated: bool = False

    @property
    def iteration_count(self) -> int:
        return len(self.iterations)

    @property
    def n_inserted(self) -> int:
        return sum(len(it) for it in self.iterations)


def init_canvas(
    k: int,
    observed: Sequence[Sequence[int]] | None = None,
    partial: Sequence[Sequence[int]] | None = None,
    channels: Sequence[int] | None = None,
) -> Canvas:
    """Canvas with each channel's given tokens followed by its SEP.

    ``observed`` carries complete sentences, ``partial`` scattered fragments
    (kept in the given order); a channel may appear in at most one of them.
    ``channels`` restricts the canvas to a subset of channel ids.
    """
    observed = observed or [[] for _ in range(k)]
    partial = partial or [[] for _ in range(k)]
    if len(observed) != k or len(partial) != k:
        raise InvalidArgument(f"expected {k} per-channel token lists")
    tokens: list[int] = []
    chans: list[int] = []
    for c in range(k) if channels is None else channels:
        if observed[c] and partial[c]:
            raise InvalidArgument(f"channel {c} is both observed and partial")
        for t in list(observed[c]) + list(partial[c]):
            if t == SEP:
                raise InvalidArgument("SEP cannot be seeded inside a channel")
            tokens.append(int(t))
            chans.append(c)
        tokens.append(SEP)
        chans.append(c)
    return Canvas(tokens, chans)


def _slot_allowed(canvas: Canvas, allowed: Iterable[int] | None) -> torch.Tensor:
    if allowed is None:
        return torch.ones(len(canvas), dtype=torch.bool)
    allowed = set(allowed)
    return torch.tensor([c in allowed for c in canvas.channels], dtype=torch.bool)


def step_parallel_greedy(
    canvas: Canvas, params: Params, model_cfg: ModelConfig, allowed: Iterable[int] | None = None
) -> tuple[list[tuple[int, int, int]], bool]:
    """Insert ``argmax_c p(c | slot)`` into every allowed slot at once.

    Returns the insertions (pre-step slot index, token, channel) and whether
    every allowed slot chose EOS_SLOT. ``canvas`` is modified in place.
    """
    logits = logits_for(canvas, params, model_cfg)
    best = logits.argmax(dim=-1).tolist()
    ok = _slot_allowed(canvas, allowed).tolist()
    ins = [(i, tok, canvas.channels[i]) for i, tok in enumerate(best) if ok[i] and tok != EOS_SLOT]
    for slot, tok, _ in reversed(ins):
        canvas.insert(slot, tok)
    return ins, not ins


def step_serial(
    canvas: Canvas,
    open_slots: list[bool],
    params: Params,
    model_cfg: ModelConfig,
    mode: str,
    temperature: float = 1.0,
    gen: np.random.Generator | None = None,
    allowed: Iterable[int] | None = None,
) -> tuple[str, int, int]:
    """One serial action: ``("insert", slot, token)`` or ``("close", slot, EOS_SLOT)``.

    The joint over (slot, token) is restricted to open, allowed slots and
    renormalized. ``serial_greedy`` takes its argmax, ``serial_sample`` draws
    from it at ``temperature``. ``canvas`` and ``open_slots`` are updated in
    place.
    """
    live = torch.tensor(open_slots, dtype=torch.bool) & _slot_allowed(canvas, allowed)
    if not live.any():
        raise ContractViolation("no open slot left to act on")
    logits = logits_for(canvas, params, model_cfg).masked_fill(~live[:, None], float("-inf"))
    V = logits.shape[1]
    flat = logits.reshape(-1)
    if mode == "serial_greedy":
        choice = int(flat.argmax())
    elif mode == "serial_sample":
        if gen is None:
            raise InvalidArgument("serial_sample needs a random generator")
        z = flat / temperature
        p = torch.exp(z - z.max())
        cdf = torch.cumsum(p / p.sum(), dim=0).numpy()
        choice = int(np.searchsorted(cdf, gen.random() * cdf[-1], side="right"))
        choice = min(choice, len(cdf) - 1)
        while not math.isfinite(float(flat[choice])):  # guard against a zero-probability pick at the cdf edge
            choice -= 1
    else:
        raise InvalidArgument(f"{mode!r} is not a serial mode")
    slot, tok = divmod(choice, V)
    if tok == EOS_SLOT:
        open_slots[slot] = False
        return "close", slot, tok
    canvas.insert(slot, tok)
    open_slots.insert(slot, True)
    open_slots[slot + 1] = True
    return "insert", slot, tok


def decode(
    cfg: DecodeConfig,
    canvas: Canvas,
    params: Params,
    model_cfg: ModelConfig,
    allowed: Iterable[int] | None = None,
    gen: np.random.Generator | None = None,
) -> tuple[dict[int, list[int]], DecodeTrace]:
    """Run ``cfg.mode`` from ``canvas`` until done or ``cfg.max_iters``.

    Returns the generated tokens per channel id and the trace. ``allowed``
    limits insertions to the listed channels' segments. A canvas that outgrows
    the model's position table also ends the decode as truncated.
    """
    canvas = canvas.copy()
    allowed = None if allowed is None else sorted(set(allowed))
    trace = DecodeTrace()
    t0 = time.perf_counter()
    if cfg.mode == "parallel":
        done = False
        for _ in range(cfg.max_iters):
            if len(canvas) > model_cfg.max_pos:
                break
            ins, done = step_parallel_greedy(canvas, params, model_cfg, allowed)
            trace.iterations.append(ins)
            if done:
                break
        trace.truncated = not done
    else:
        if gen is None:
            gen = rng_mod.stream(cfg.seed, rng_mod.DECODE)
        open_slots = [True] * len(canvas)
        live = _live_count(canvas, open_slots, allowed)
        while live and trace.iteration_count < cfg.max_iters and len(canvas) <= model_cfg.max_pos:
            action, slot, tok = step_serial(canvas, open_slots, params, model_cfg, cfg.mode, cfg.temperature, gen, allowed)
            trace.iterations.append([(slot, tok, canvas.channels[slot])] if action == "insert" else [])
            live = _live_count(canvas, open_slots, allowed)
        trace.truncated = bool(live)
    trace.wall_time = time.perf_counter() - t0
    trace.canvas = canvas
    return canvas.split(), trace


def _live_count(canvas: Canvas, open_slots: list[bool], allowed: Sequence[int] | None) -> int:
    if allowed is None:
        return sum(open_slots)
    return sum(o and c in allowed for o, c in zip(open_slots, canvas.channels))


# ---------------------------------------------------------------------------
# joint sampling schemes


@dataclass(frozen=True)
class Scheme:
    """``unrestricted``, ``chain`` (``order``) or ``common_cause`` (``order[0]`` is the root)."""

    kind: str = "unrestricted"
    order: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("unrestricted", "chain", "common_cause"):
            raise InvalidArgument(f"unknown sampling scheme {self.kind!r}")


def _phase(
    k: int, target: int, given: int | None, given_tokens: list[int], params, model_cfg, temperature, seed, max_iters
) -> tuple[list[int], DecodeTrace]:
    observed = [[] for _ in range(k)]
    if given is not None:
        observed[given] = given_tokens
    canvas = init_canvas(k, observed)
    # phase stream is keyed by (target, conditioning channel) so schemes that
    # share a phase also share its sample
    gen = rng_mod.stream(seed, rng_mod.DECODE, target, 0 if given is None else given + 1)
    cfg = DecodeConfig("serial_sample", temperature, max_iters, seed)
    out, trace = decode(cfg, canvas, params, model_cfg, allowed=[target], gen=gen)
    return out[target], trace


def sample_joint(
    scheme: Scheme,
    params: Params,
    model_cfg: ModelConfig,
    temperature: float = 1.0,
    seed: int = 0,
    max_iters: int = 256,
) -> tuple[list[list[int]], list[DecodeTrace]]:
    """Unconditional sample of all ``k`` channels; returns tokens and traces.

    Conditioned phases keep the full k-segment canvas layout (the only layout
    a joint model sees in training) with every segment except the
    conditioning channel and the one being generated left empty.
    """
    k = model_cfg.k
    if scheme.kind == "unrestricted":
        cfg = DecodeConfig("serial_sample", temperature, max_iters, seed)
        gen = rng_mod.stream(seed, rng_mod.DECODE, k, 0)
        out, trace = decode(cfg, init_canvas(k), params, model_cfg, gen=gen)
        return [out[c] for c in range(k)], [trace]

    order = list(scheme.order) or list(range(k))
    if sorted(set(order)) != sorted(order) or any(not 0 <= c < k for c in order):
        raise InvalidArgument(f"bad channel order {order}")
    if scheme.kind == "common_cause":
        order += [c for c in range(k) if c not in order]
    results: dict[int, list[int]] = {}
    traces = []
    root = order[0]
    results[root], tr = _phase(k, root, None, [], params, model_cfg, temperature, seed, max_iters)
    traces.append(tr)
    for j, c in enumerate(order[1:], start=1):
        given = order[j - 1] if scheme.kind == "chain" else root
        results[c], tr = _phase(k, c, given, results[given], params, model_cfg, temperature, seed, max_iters)
        traces.append(tr)
    return [results.get(c, []) for c in range(k)], traces


# ---------------------------------------------------------------------------
# iteration bounds


def iteration_bounds(N: int, k: int) -> dict[str, int]:
    """Iteration counts for emitting ``N`` tokens over ``k`` channels."""
    if k < 1 or N < k:
        raise InvalidArgument(f"need N >= k >= 1, got N={N}, k={k}")
    per = _floor_log2(N // k) + 2
    return {
        "serial": N,
        "per_channel_parallel": k * per,
        "multi_channel_parallel": per,
        "single_sequence": _floor_log2(N) + 2,
    }


def _floor_log2(x: int) -> int:
    # floor(log2(N / k)) == floor(log2(N // k)) for positive integers
    return x.bit_length() - 1


def write_trace_csv(path: str | Path, rows: Iterable[tuple[int, str, int, int, int, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["example_id", "mode", "k", "total_output_len", "iterations", "wall_ms"])
        for row in rows:
            w.writerow(row)
