"""BLEU, Self-BLEU and the experiment drivers built on them."""

from __future__ import annotations

import csv
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

from . import rng as rng_mod
from .corpus import ChannelTransform, CorpusSpec
from .decode import DecodeConfig, Scheme, decode, init_canvas, iteration_bounds, sample_joint
from .errors import InvalidArgument
from .model import ModelConfig
from .numeric import Params

Tokens = Sequence[Hashable]


@dataclass
class BleuResult:
    precisions: list[float]
    brevity_penalty: float
    score: float


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    candidates: Sequence[Tokens],
    references: Sequence[Sequence[Tokens]],
    max_n: int = 4,
    smooth: bool = False,
) -> BleuResult:
    """Corpus BLEU with clipped n-gram counts and the closest-length brevity penalty.

    Orders for which the corpus has no candidate n-grams are left out of the
    geometric mean. Without ``smooth`` any zero precision makes the score 0;
    with it, orders above 1 use add-one counts.
    """
    if not candidates:
        raise InvalidArgument("corpus_bleu needs at least one candidate")
    if len(candidates) != len(references):
        raise InvalidArgument("candidates and references differ in length")
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise InvalidArgument("every candidate needs at least one reference")
        c_len += len(cand)
        r_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = _ngrams(cand, n)
            if not counts:
                continue
            best: Counter = Counter()
            for r in refs:
                best |= _ngrams(r, n)
            matches[n - 1] += sum(min(v, best[g]) for g, v in counts.items())
            totals[n - 1] += sum(counts.values())

    precisions: list[float] = []
    for n, (m, t) in enumerate(zip(matches, totals), start=1):
        if t == 0:
            break
        if smooth and n > 1:
            precisions.append((m + 1) / (t + 1))
        else:
            precisions.append(m / t)
    if c_len == 0:
        return BleuResult(precisions, 0.0, 0.0)
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    if not precisions or min(precisions) == 0:
        return BleuResult(precisions, bp, 0.0)
    score = bp * math.exp(sum(math.log(p) for p in precisions) / len(precisions)) * 100
    return BleuResult(precisions, bp, min(100.0, score))


def sentence_bleu(candidate: Tokens, references: Sequence[Tokens], max_n: int = 4, smooth: bool = False) -> float:
    return corpus_bleu([candidate], [references], max_n, smooth).score


def self_bleu(samples: Sequence[Tokens], max_n: int = 4, smooth: bool = False) -> float:
    """Mean sentence BLEU of each sample against all the others."""
    if len(samples) < 2:
        raise InvalidArgument("self_bleu needs at least two samples")
    scores = [
        sentence_bleu(s, [o for j, o in enumerate(samples) if j != i], max_n, smooth) for i, s in enumerate(samples)
    ]
    return sum(scores) / len(scores)


# ---------------------------------------------------------------------------
# quality / diversity


@dataclass
class QDPoint:
    src: int
    tgt: int
    temperature: float
    quality_bleu: float
    self_bleu: float
    samples: int


def qd_sweep(
    params: Params,
    model_cfg: ModelConfig,
    examples: Sequence[Sequence[Sequence[int]]],
    src: int,
    tgt: int,
    temps: Sequence[float] = (0.1, 0.5, 1.0),
    samples: int = 16,
    seed: int = 0,
    max_iters: int = 256,
    canvas_channels: Sequence[int] | None = None,
) -> list[QDPoint]:
    """Serially sample ``samples`` translations per source at each temperature.

    Quality pools every sample as a candidate against its source's reference;
    diversity is the mean per-source Self-BLEU.
    """
    k = model_cfg.k
    points = []
    for ti, tau in enumerate(temps):
        cands, refs, per_source = [], [], []
        for i, ex in enumerate(examples):
            observed = [[] for _ in range(k)]
            observed[src] = list(ex[src])
            canvas = init_canvas(k, observed, channels=canvas_channels)
            outs = []
            for s in range(samples):
                gen = rng_mod.stream(seed, rng_mod.DECODE, 1 + ti, i, s)
                cfg = DecodeConfig("serial_sample", tau, max_iters, seed)
                out, _ = decode(cfg, canvas, params, model_cfg, allowed=[tgt], gen=gen)
                outs.append(out[tgt])
            cands.extend(outs)
            refs.extend([[list(ex[tgt])]] * samples)
            per_source.append(self_bleu(outs) if samples > 1 else 100.0)
        quality = corpus_bleu(cands, refs).score
        points.append(QDPoint(src, tgt, tau, quality, sum(per_source) / len(per_source), samples))
    return points


def write_qd_csv(path: str | Path, points: Sequence[QDPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["direction", "temperature", "quality_bleu", "self_bleu", "samples"])
        for p in points:
            w.writerow([f"{p.src}->{p.tgt}", f"{p.temperature:g}", f"{p.quality_bleu:.4f}", f"{p.self_bleu:.4f}", p.samples])


# ---------------------------------------------------------------------------
# decoding iterations


@dataclass
class IterationRow:
    example_id: int
    N: int
    k: int
    iters_serial: int
    iters_parallel: int
    bounds: dict[str, int] | None
    truncated: bool = False


@dataclass
class IterationStats:
    rows: list[IterationRow]
    truncated: int
    median_serial: float
    median_parallel: float
    median_ratio: float
    ratios: list[float] = field(repr=False, default_factory=list)


def iteration_experiment(
    params: Params,
    model_cfg: ModelConfig,
    examples: Sequence[Sequence[Sequence[int]]],
    src: int,
    targets: Sequence[int] | None = None,
    max_iters: int = 256,
) -> IterationStats:
    """Per example: one channel-restricted parallel-greedy decode per target
    (summed) against one parallel-greedy decode over all targets at once.

    ``N`` is the total parallel output length and ``k`` the number of target
    channels; decodes hitting ``max_iters`` are excluded from the aggregates.
    """
    k = model_cfg.k
    targets = [c for c in range(k) if c != src] if targets is None else list(targets)
    cfg = DecodeConfig("parallel", max_iters=max_iters)
    rows, ratios, truncated = [], [], 0
    for i, ex in enumerate(examples):
        observed = [[] for _ in range(k)]
        observed[src] = list(ex[src])
        canvas = init_canvas(k, observed)
        serial, bad = 0, False
        for t in targets:
            _, tr = decode(cfg, canvas, params, model_cfg, allowed=[t])
            serial += tr.iteration_count
            bad |= tr.truncated
        out, tr = decode(cfg, canvas, params, model_cfg, allowed=targets)
        bad |= tr.truncated
        N = sum(len(out[t]) for t in targets)
        bounds = iteration_bounds(N, len(targets)) if N >= len(targets) else None
        rows.append(IterationRow(i, N, len(targets), serial, tr.iteration_count, bounds, bad))
        if bad:
            truncated += 1
        else:
            ratios.append(serial / tr.iteration_count)
    kept = [r for r in rows if not r.truncated]
    return IterationStats(
        rows,
        truncated,
        statistics.median([r.iters_serial for r in kept]) if kept else math.nan,
        statistics.median([r.iters_parallel for r in kept]) if kept else math.nan,
        statistics.median(ratios) if ratios else math.nan,
        ratios,
    )


def write_iteration_csv(path: str | Path, stats: IterationStats) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["example_id", "N", "k", "iters_serial", "iters_parallel",
                    "bound_serial", "bound_pcp", "bound_mcp", "bound_single"])
        for r in stats.rows:
            b = r.bounds or {}
            w.writerow([r.example_id, r.N, r.k, r.iters_serial, r.iters_parallel,
                        b.get("serial", ""), b.get("per_channel_parallel", ""),
                        b.get("multi_channel_parallel", ""), b.get("single_sequence", "")])


# ---------------------------------------------------------------------------
# cross-channel consistency of joint samples

OOV_REF = "<oov-ref>"
OOV_CAND = "<oov-cand>"


def translate_lenient(
    tokens: Sequence[str], a: int, b: int, transforms: Sequence[ChannelTransform]
) -> tuple[list[str], int]:
    """Oracle translation that turns out-of-lexicon tokens into unmatched placeholders."""
    src, dst = transforms[a], transforms[b]
    lex = src.lexicon()
    bad = sum(t not in lex for t in tokens)
    if a == b:
        return [t if t in lex else OOV_REF for t in tokens], bad
    # undo the reordering with placeholders in place, then map word by word
    order = list(range(len(tokens)))
    if src.kind == "reverse_dict":
        order.reverse()
    elif src.kind == "rot_dict" and order:
        order = order[-1:] + order[:-1]
    inv = {v: w for w, v in src.mapping.items()} if src.kind != "identity" else {w: w for w in src.mapping}
    pivot = [inv.get(tokens[j], OOV_REF) for j in order]
    mapped = [dst.mapping.get(w, OOV_REF) if dst.kind != "identity" else w for w in pivot]
    if dst.kind == "reverse_dict":
        mapped.reverse()
    elif dst.kind == "rot_dict" and mapped:
        mapped = mapped[1:] + mapped[:1]
    return mapped, bad


@dataclass
class ConsistencyResult:
    bleu: dict[tuple[int, int], float]
    oov: dict[int, int]

    @property
    def mean(self) -> float:
        return sum(self.bleu.values()) / len(self.bleu)


def pseudo_target_consistency(samples: Sequence[Sequence[Sequence[str]]], spec: CorpusSpec) -> ConsistencyResult:
    """BLEU of each sample's channel b against the oracle translation of its channel a."""
    if not samples:
        raise InvalidArgument("no samples to score")
    transforms = spec.channel_transforms()
    k = spec.k
    oov = {c: 0 for c in range(k)}
    for s in samples:
        for c in range(k):
            lex = transforms[c].lexicon()
            oov[c] += sum(t not in lex for t in s[c])
    out = {}
    for a in range(k):
        for b in range(k):
            if a == b:
                continue
            cands, refs = [], []
            for s in samples:
                pseudo, _ = translate_lenient(list(s[a]), a, b, transforms)
                lex = transforms[b].lexicon()
                cands.append([t if t in lex else OOV_CAND for t in s[b]])
                refs.append([pseudo])
            out[(a, b)] = corpus_bleu(cands, refs).score
    return ConsistencyResult(out, oov)


def joint_sample_batch(
    scheme: Scheme, params: Params, model_cfg: ModelConfig, n: int, temperature: float, seed: int, max_iters: int = 256
) -> tuple[list[list[list[int]]], int]:
    """``n`` joint samples (sample ``i`` uses seed ``(seed, i)``) and the truncation count."""
    out, truncated = [], 0
    for i in range(n):
        channels, traces = sample_joint(scheme, params, model_cfg, temperature, seed=hash_seed(seed, i), max_iters=max_iters)
        truncated += any(t.truncated for t in traces)
        out.append(channels)
    return out, truncated


def hash_seed(seed: int, i: int) -> int:
    return int(rng_mod.stream(seed, rng_mod.DECODE, 10_000 + i).integers(0, 2**63 - 1))


def write_consistency_csv(path: str | Path, results: dict[str, ConsistencyResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "src", "tgt", "bleu"])
        for scheme, res in results.items():
            for (a, b), v in sorted(res.bleu.items()):
                w.writerow([scheme, a, b, f"{v:.4f}"])
