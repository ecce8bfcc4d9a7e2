"""Dense-tensor substrate: stable softmax, weighted NLL, the attention block,
Adam, a finite-difference gradient checker and the checkpoint container.

Tensors are torch float64 tensors; reverse-mode differentiation is torch
autograd. Everything else here is written out explicitly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidArgument

DTYPE = torch.float64
Params = dict[str, torch.Tensor]


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


def softmax(logits, temperature: float = 1.0) -> torch.Tensor:
    """Softmax over the last axis at ``temperature`` (max-subtracted)."""
    z = as_tensor(logits)
    if not temperature > 0:
        raise InvalidArgument(f"temperature must be positive, got {temperature}")
    if not torch.isfinite(z).all():
        raise InvalidArgument("softmax input contains non-finite values")
    z = z / temperature
    z = z - z.max(dim=-1, keepdim=True).values
    e = torch.exp(z)
    return e / e.sum(dim=-1, keepdim=True)


def log_softmax(logits, temperature: float = 1.0) -> torch.Tensor:
    """Log-softmax over the last axis. ``-inf`` entries are allowed (masked)."""
    z = as_tensor(logits)
    if not temperature > 0:
        raise InvalidArgument(f"temperature must be positive, got {temperature}")
    z = z / temperature
    m = z.max(dim=-1, keepdim=True).values.detach()
    return z - m - torch.log(torch.exp(z - m).sum(dim=-1, keepdim=True))


def weighted_nll(log_probs, targets: Iterable[tuple[int, float]]) -> torch.Tensor:
    """Sum of ``weight * -log_probs[index]`` over ``targets``."""
    lp = as_tensor(log_probs)
    n = lp.shape[-1]
    idx, w = [], []
    for i, weight in targets:
        if not 0 <= i < n:
            raise InvalidArgument(f"target index {i} out of range for {n} entries")
        if weight < 0:
            raise InvalidArgument(f"negative target weight {weight}")
        idx.append(int(i))
        w.append(float(weight))
    if not idx:
        return lp.new_zeros(())
    return -(lp[torch.tensor(idx)] * torch.tensor(w, dtype=lp.dtype)).sum()


# ---------------------------------------------------------------------------
# transformer block


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * gain + bias


LAYER_KEYS = (
    "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln2.g", "ln2.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
)


def attention_layer(
    x: torch.Tensor,
    p: Mapping[str, torch.Tensor],
    n_heads: int,
    key_padding: torch.Tensor | None = None,
) -> torch.Tensor:
    """Pre-norm block: ``x + MHA(LN(x))`` then ``+ FFN(LN(.))`` with ReLU.

    ``x`` is ``[T, d]`` or ``[B, T, d]``. Attention is full (no causal mask);
    ``key_padding`` (``[B, T]`` bool, True = padding) only hides padded keys.
    """
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
    if x.dim() != 3:
        raise InvalidArgument(f"expected [T, d] or [B, T, d], got {tuple(x.shape)}")
    B, T, d = x.shape
    if T < 1:
        raise InvalidArgument("attention over an empty sequence")
    if d % n_heads:
        raise InvalidArgument(f"{n_heads} heads do not divide model dim {d}")
    if p["attn.wq"].shape != (d, d):
        raise InvalidArgument(f"attention weights {tuple(p['attn.wq'].shape)} do not match dim {d}")
    hd = d // n_heads

    h = layer_norm(x, p["ln1.g"], p["ln1.b"])
    q = (h @ p["attn.wq"] + p["attn.bq"]).view(B, T, n_heads, hd).transpose(1, 2)
    k = (h @ p["attn.wk"] + p["attn.bk"]).view(B, T, n_heads, hd).transpose(1, 2)
    v = (h @ p["attn.wv"] + p["attn.bv"]).view(B, T, n_heads, hd).transpose(1, 2)
    scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
    if key_padding is not None:
        scores = scores.masked_fill(key_padding[:, None, None, :], float("-inf"))
    att = torch.softmax(scores, dim=-1)
    ctx = (att @ v).transpose(1, 2).reshape(B, T, d)
    x = x + ctx @ p["attn.wo"] + p["attn.bo"]

    h = layer_norm(x, p["ln2.g"], p["ln2.b"])
    x = x + F.relu(h @ p["ffn.w1"] + p["ffn.b1"]) @ p["ffn.w2"] + p["ffn.b2"]
    return x.squeeze(0) if squeeze else x


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Sequence[int]) -> torch.Tensor:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return torch.from_numpy(rng.uniform(-s, s, size=tuple(shape)).astype(np.float64))


def init_layer(rng: np.random.Generator, d: int, d_ff: int) -> Params:
    z, one = torch.zeros, torch.ones
    p = {
        "ln1.g": one(d, dtype=DTYPE), "ln1.b": z(d, dtype=DTYPE),
        "attn.wq": glorot(rng, d, d, (d, d)), "attn.bq": z(d, dtype=DTYPE),
        "attn.wk": glorot(rng, d, d, (d, d)), "attn.bk": z(d, dtype=DTYPE),
        "attn.wv": glorot(rng, d, d, (d, d)), "attn.bv": z(d, dtype=DTYPE),
        "attn.wo": glorot(rng, d, d, (d, d)), "attn.bo": z(d, dtype=DTYPE),
        "ln2.g": one(d, dtype=DTYPE), "ln2.b": z(d, dtype=DTYPE),
        "ffn.w1": glorot(rng, d, d_ff, (d, d_ff)), "ffn.b1": z(d_ff, dtype=DTYPE),
        "ffn.w2": glorot(rng, d_ff, d, (d_ff, d)), "ffn.b2": z(d, dtype=DTYPE),
    }
    return p


# ---------------------------------------------------------------------------
# autodiff entry point and optimizer


def backward(loss: torch.Tensor) -> None:
    """Accumulate d(loss)/d(param) into ``.grad`` of every reachable leaf."""
    if loss.dim() != 0:
        raise InvalidArgument(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()


def zero_grads(params: Mapping[str, torch.Tensor]) -> None:
    for t in params.values():
        t.grad = None


@dataclass
class AdamState:
    m: torch.Tensor
    v: torch.Tensor
    t: int = 0

    @classmethod
    def like(cls, value: torch.Tensor) -> "AdamState":
        return cls(torch.zeros_like(value), torch.zeros_like(value), 0)


@torch.no_grad()
def adam_step(
    value: torch.Tensor,
    grad: torch.Tensor | None,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``value`` and ``state``."""
    if state.m.shape != value.shape or state.v.shape != value.shape:
        raise InvalidArgument("Adam state shape does not match parameter")
    if grad is None:
        grad = torch.zeros_like(value)
    elif grad.shape != value.shape:
        raise InvalidArgument("gradient shape does not match parameter")
    state.t += 1
    state.m.mul_(beta1).add_(grad, alpha=1 - beta1)
    state.v.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
    m_hat = state.m / (1 - beta1**state.t)
    v_hat = state.v / (1 - beta2**state.t)
    value.sub_(lr * m_hat / (torch.sqrt(v_hat) + eps))


class Adam:
    def __init__(self, params: Params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = {name: AdamState.like(v) for name, v in params.items()}

    def step(self, lr: float) -> None:
        for name, value in self.params.items():
            adam_step(value, value.grad, self.state[name], lr, self.beta1, self.beta2, self.eps)


# ---------------------------------------------------------------------------
# finite differences


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    n_coords: int = 200,
    h: float = 1e-5,
    seed: int = 0,
    grads: Mapping[str, torch.Tensor] | None = None,
    floor: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Coordinates are sampled uniformly over all parameters (all of them when
    there are fewer than ``n_coords``). ``grads`` overrides the analytic
    gradients, which is how a corrupted gradient is fed in as a negative
    control. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    for t in params.values():
        if t.dtype != torch.float64:
            raise InvalidArgument("gradient_check runs in 64-bit only")
    if grads is None:
        for t in params.values():
            t.requires_grad_(True)
            t.grad = None
        backward(loss_fn())
        grads = {k: (t.grad.clone() if t.grad is not None else torch.zeros_like(t)) for k, t in params.items()}

    names = list(params)
    sizes = np.array([params[k].numel() for k in names])
    total = int(sizes.sum())
    rng = np.random.Generator(np.random.PCG64(seed))
    flat_ids = np.arange(total) if total <= n_coords else np.sort(rng.choice(total, n_coords, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    with torch.no_grad():
        for fid in flat_ids:
            j = int(np.searchsorted(offsets, fid, side="right") - 1)
            name, local = names[j], int(fid - offsets[j])
            flat = params[name].view(-1)
            orig = flat[local].item()
            flat[local] = orig + h
            up = loss_fn().item()
            flat[local] = orig - h
            down = loss_fn().item()
            flat[local] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[name].reshape(-1)[local].item()
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# checkpoint container
#
# layout: MAGIC | u64 LE header length | UTF-8 JSON header | float64 LE blobs
# The header lists (name, shape) in storage order; blobs follow in that order.

MAGIC = b"INSLMCK1"
FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, params: Mapping[str, torch.Tensor], meta: dict) -> None:
    names = sorted(params)
    header = {
        "version": FORMAT_VERSION,
        "meta": meta,
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for n in names:
            arr = params[n].detach().cpu().to(torch.float64).contiguous().numpy()
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path: str | Path) -> tuple[Params, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise InvalidArgument(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise InvalidArgument(f"{path}: unsupported checkpoint version {header.get('version')}")
    pos = 16 + hlen
    params: Params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape)
        params[entry["name"]] = torch.from_numpy(arr.astype(np.float64))
        pos += 8 * count
    if pos != len(raw):
        raise InvalidArgument(f"{path}: trailing bytes after parameter data")
    return params, header["meta"]
