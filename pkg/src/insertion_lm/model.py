"""Decoder-only, non-causal insertion transformer over concatenated canvases."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import torch

from . import rng as rng_mod
from .canvas import Canvas, Instance
from .errors import CapacityError, InvalidArgument
from .numeric import DTYPE, LAYER_KEYS, Params, attention_layer, glorot, init_layer, layer_norm
from .vocab import PAD, SEP

NEG_INF = float("-inf")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    k: int
    layers: int = 2
    dim: int = 64
    heads: int = 4
    ffn: int = 256
    max_pos: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise InvalidArgument(f"heads ({self.heads}) must divide dim ({self.dim})")
        if self.vocab_size < 5 or self.k < 1 or self.layers < 0 or self.max_pos < 1:
            raise InvalidArgument(f"invalid model config {self}")

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: ModelConfig) -> Params:
    gen = rng_mod.stream(cfg.seed, rng_mod.INIT)
    d, V = cfg.dim, cfg.vocab_size
    p: Params = {
        "tok_emb": glorot(gen, V, d, (V, d)),
        "pos_emb": glorot(gen, cfg.max_pos, d, (cfg.max_pos, d)),
        "chan_emb": glorot(gen, cfg.k, d, (cfg.k, d)),
    }
    for i in range(cfg.layers):
        for key, value in init_layer(gen, d, cfg.ffn).items():
            p[f"layer{i}.{key}"] = value
    p["final_ln.g"] = torch.ones(d, dtype=DTYPE)
    p["final_ln.b"] = torch.zeros(d, dtype=DTYPE)
    p["out.w"] = glorot(gen, d, V, (d, V))
    p["out.b"] = torch.zeros(V, dtype=DTYPE)
    return p


def layer_params(params: Params, i: int) -> dict[str, torch.Tensor]:
    return {key: params[f"layer{i}.{key}"] for key in LAYER_KEYS}


def check_params(params: Params, cfg: ModelConfig) -> None:
    expected = init_shapes(cfg)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise InvalidArgument(f"parameter names do not match config (missing={missing}, extra={extra})")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise InvalidArgument(f"{name}: shape {tuple(params[name].shape)} != {shape}")


def init_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, V, f = cfg.dim, cfg.vocab_size, cfg.ffn
    shapes = {"tok_emb": (V, d), "pos_emb": (cfg.max_pos, d), "chan_emb": (cfg.k, d),
              "final_ln.g": (d,), "final_ln.b": (d,), "out.w": (d, V), "out.b": (V,)}
    per_layer = {"attn.wq": (d, d), "attn.wk": (d, d), "attn.wv": (d, d), "attn.wo": (d, d),
                 "ffn.w1": (d, f), "ffn.b1": (f,), "ffn.w2": (f, d)}
    for i in range(cfg.layers):
        for key in LAYER_KEYS:
            shapes[f"layer{i}.{key}"] = per_layer.get(key, (d,))
    return shapes


# ---------------------------------------------------------------------------
# forward pass


def pack(canvases: Sequence[Canvas]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, list[int]]:
    lengths = [len(c) for c in canvases]
    T = max(lengths)
    tok = torch.full((len(canvases), T), PAD, dtype=torch.long)
    ch = torch.zeros((len(canvases), T), dtype=torch.long)
    for b, c in enumerate(canvases):
        tok[b, : len(c)] = torch.tensor(c.tokens, dtype=torch.long)
        ch[b, : len(c)] = torch.tensor(c.channels, dtype=torch.long)
    padding = torch.arange(T)[None, :] >= torch.tensor(lengths)[:, None]
    return tok, ch, padding, lengths


def embed_canvas(tok: torch.Tensor, ch: torch.Tensor, params: Params) -> torch.Tensor:
    """``tok_emb[token] + pos_emb[position] + chan_emb[channel]`` per row."""
    T = tok.shape[-1]
    if T > params["pos_emb"].shape[0]:
        raise CapacityError(f"canvas length {T} exceeds {params['pos_emb'].shape[0]} positions")
    return params["tok_emb"][tok] + params["pos_emb"][:T] + params["chan_emb"][ch]


def encode(
    tok: torch.Tensor, ch: torch.Tensor, params: Params, cfg: ModelConfig, padding: torch.Tensor | None = None
) -> torch.Tensor:
    x = embed_canvas(tok, ch, params)
    for i in range(cfg.layers):
        x = attention_layer(x, layer_params(params, i), cfg.heads, padding)
    return x


def slot_logits(hidden: torch.Tensor, params: Params) -> torch.Tensor:
    """Per-slot vocabulary logits; PAD and SEP are never insertable."""
    h = layer_norm(hidden, params["final_ln.g"], params["final_ln.b"])
    logits = h @ params["out.w"] + params["out.b"]
    banned = torch.zeros(logits.shape[-1], dtype=torch.bool)
    banned[[PAD, SEP]] = True
    return logits.masked_fill(banned, NEG_INF)


def canvas_logits(canvases: Sequence[Canvas], params: Params, cfg: ModelConfig) -> tuple[torch.Tensor, list[int]]:
    """``[B, T, V]`` logits; rows past each canvas's length are all ``-inf``."""
    tok, ch, padding, lengths = pack(canvases)
    logits = slot_logits(encode(tok, ch, params, cfg, padding), params)
    return logits.masked_fill(padding[:, :, None], NEG_INF), lengths


@torch.no_grad()
def logits_for(canvas: Canvas, params: Params, cfg: ModelConfig) -> torch.Tensor:
    tok, ch, _, _ = pack([canvas])
    return slot_logits(encode(tok, ch, params, cfg), params)[0]


def joint_distribution(logits: torch.Tensor, temperature: float = 1.0) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """``(p(c,l), p(l), p(c|l))`` from ``[T, V]`` logits.

    ``p(c,l)`` is one softmax over every non-masked (slot, token) entry.
    """
    if not temperature > 0:
        raise InvalidArgument(f"temperature must be positive, got {temperature}")
    T, V = logits.shape
    z = logits.reshape(-1) / temperature
    z = z - z.max()
    e = torch.exp(z)
    joint = (e / e.sum()).reshape(T, V)
    loc = joint.sum(dim=1)
    cond = joint / loc[:, None]
    return joint, loc, cond


# ---------------------------------------------------------------------------
# loss


def batch_loss(instances: Sequence[Instance], params: Params, cfg: ModelConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean over instances of the per-slot weighted NLL under the joint softmax.

    For one instance: ``sum_slots sum_(c,w) w * -log p(c, slot) / T``.
    Returns ``(mean, per_instance)``.
    """
    logits, lengths = canvas_logits([x.canvas for x in instances], params, cfg)
    B, T, V = logits.shape
    logp = torch.log_softmax(logits.reshape(B, T * V), dim=-1)
    rows, cols, weights = [], [], []
    for b, inst in enumerate(instances):
        if len(inst.targets) != lengths[b]:
            raise InvalidArgument("slot targets do not match canvas length")
        for slot, pairs in enumerate(inst.targets):
            for tok, w in pairs:
                rows.append(b)
                cols.append(slot * V + tok)
                weights.append(w)
    picked = logp[torch.tensor(rows), torch.tensor(cols)] * torch.tensor(weights, dtype=logp.dtype)
    per = torch.zeros(B, dtype=logp.dtype).index_add(0, torch.tensor(rows), -picked)
    per = per / torch.tensor(lengths, dtype=logp.dtype)
    return per.mean(), per


def instance_loss(instance: Instance, params: Params, cfg: ModelConfig) -> torch.Tensor:
    return batch_loss([instance], params, cfg)[0]


def target_entropy(instance: Instance) -> float:
    """Minimum of ``instance_loss`` over all joint distributions.

    With total target mass W the optimum is ``p = w / W``, giving
    ``(W ln W - sum w ln w) / T`` (``ln T + mean slot entropy`` for unit-mass
    slots). ``instance_loss - target_entropy`` is therefore a KL divergence:
    >= 0, and 0 exactly when the model reproduces the targets.
    """
    ws = [w for pairs in instance.targets for _, w in pairs if w > 0]
    W = sum(ws)
    return (W * math.log(W) - sum(w * math.log(w) for w in ws)) / len(instance.canvas)
