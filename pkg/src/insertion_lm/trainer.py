"""Training on sampled partial canvases (the order-marginalizing lower bound)."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import rng as rng_mod
from .canvas import Instance, Obs, Prior, build_training_instance, concatenate_channels, sample_canvas
from .errors import InvalidArgument, NonFiniteLoss
from .model import ModelConfig, batch_loss, init_params, target_entropy
from .numeric import Adam, Params, backward, save_checkpoint, zero_grads

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Regime:
    """``bilingual`` (src -> tgt), ``multitarget`` (src or any -> rest), ``joint``."""

    kind: str = "joint"
    src: int | None = None
    tgt: int | None = None

    def validate(self, k: int) -> None:
        if self.kind == "bilingual":
            if self.src is None or self.tgt is None or self.src == self.tgt:
                raise InvalidArgument("bilingual regime needs distinct src and tgt channels")
        elif self.kind == "multitarget":
            pass
        elif self.kind != "joint":
            raise InvalidArgument(f"unknown regime {self.kind!r}")
        for c in (self.src, self.tgt):
            if c is not None and not 0 <= c < k:
                raise InvalidArgument(f"channel {c} out of range for k={k}")

    def __str__(self) -> str:
        if self.kind == "bilingual":
            return f"bilingual({self.src}->{self.tgt})"
        if self.kind == "multitarget":
            return f"multitarget({'any' if self.src is None else self.src}->rest)"
        return "joint"


def regime_mask(regime: Regime, k: int, gen: np.random.Generator) -> dict[int, Obs]:
    regime.validate(k)
    if regime.kind == "joint":
        return {c: Obs.PARTIAL for c in range(k)}
    if regime.kind == "bilingual":
        return {c: Obs.FULL if c == regime.src else Obs.PARTIAL if c == regime.tgt else Obs.ABSENT for c in range(k)}
    src = int(gen.integers(0, k)) if regime.src is None else regime.src
    return {c: Obs.FULL if c == src else Obs.PARTIAL for c in range(k)}


def make_instance(
    channels: Sequence[Sequence[int]],
    mask: dict[int, Obs],
    prior: Prior,
    gen: np.random.Generator,
    global_uniform: bool = False,
    span_mass: bool = False,
) -> Instance:
    present = [c for c in range(len(channels)) if mask[c] is not Obs.ABSENT]
    full = concatenate_channels([channels[c] for c in present], present)
    canvas, spans = sample_canvas(full, mask, gen, global_uniform=global_uniform)
    return Instance(canvas, build_training_instance(canvas, spans, prior, span_mass=span_mass))


DECAYS = ("constant", "linear", "cosine")


@dataclass
class TrainConfig:
    regime: Regime = field(default_factory=Regime)
    prior: Prior = field(default_factory=Prior)
    lr: float = 1e-4
    total_iters: int = 1000
    warmup_frac: float = 0.10
    batch_size: int = 32
    seed: int = 0
    eval_every: int = 50
    checkpoint_path: str | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    global_uniform: bool = False
    span_mass: bool = False
    decay: str = "constant"  # after warmup: "constant" | "linear" | "cosine"

    def __post_init__(self):
        if not 0 < self.warmup_frac < 1:
            raise InvalidArgument(f"warmup_frac must be in (0, 1), got {self.warmup_frac}")
        if self.total_iters < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise InvalidArgument("total_iters, batch_size and eval_every must be >= 1")
        if self.lr < 0:
            raise InvalidArgument("lr must be >= 0")
        if self.decay not in DECAYS:
            raise InvalidArgument(f"unknown decay {self.decay!r}; expected one of {DECAYS}")

    @property
    def warmup_steps(self) -> int:
        return max(1, math.ceil(self.warmup_frac * self.total_iters))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regime"] = asdict(self.regime)
        d["prior"] = asdict(self.prior)
        return d


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 over ``warmup_steps`` steps, then ``cfg.decay``.

    ``constant`` holds the peak rate; ``linear`` and ``cosine`` anneal it
    towards 0, reaching ``lr / (total - warmup)`` (linear) at the last step.
    """
    w = cfg.warmup_steps
    if step < w:
        return cfg.lr * step / w
    if cfg.decay == "constant" or cfg.total_iters <= w:
        return cfg.lr
    frac = (step - w) / (cfg.total_iters - w)
    if cfg.decay == "linear":
        return cfg.lr * (1 - frac)
    return cfg.lr * 0.5 * (1 + math.cos(math.pi * frac))


@dataclass
class LogRow:
    step: int
    lr: float
    loss: float
    excess: float  # loss minus its irreducible target entropy


@dataclass
class TrainResult:
    params: Params
    history: list[LogRow]
    step_losses: list[float]
    step_excess: list[float]


def checkpoint_meta(model_cfg: ModelConfig, train_cfg: TrainConfig, extra: dict | None = None) -> dict:
    train = train_cfg.to_dict()
    train.pop("checkpoint_path")  # where a file lives is not part of its content
    meta = {"model": model_cfg.to_dict(), "train": train, "seed": train_cfg.seed}
    meta.update(extra or {})
    return meta


def train(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    corpus: Sequence[Sequence[Sequence[int]]],
    params: Params | None = None,
    loss_csv: str | Path | None = None,
    meta: dict | None = None,
    progress: bool = False,
    callback: Callable[[LogRow, Params], None] | None = None,
) -> TrainResult:
    """Run ``cfg.total_iters`` Adam steps on freshly sampled canvases.

    ``corpus`` holds encoded examples, one id list per channel. Batches walk
    seeded epoch permutations; every example gets a fresh regime mask and
    canvas each time it is visited. ``callback`` sees every logged row along
    with the live parameters (read-only use; gradients are enabled).
    """
    if not corpus:
        raise InvalidArgument("empty training corpus")
    k = len(corpus[0])
    cfg.regime.validate(k)
    params = init_params(model_cfg) if params is None else params
    for t in params.values():
        t.requires_grad_(True)
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)

    order_gen = rng_mod.stream(cfg.seed, rng_mod.BATCH)
    canvas_gen = rng_mod.stream(cfg.seed, rng_mod.CANVAS)
    regime_gen = rng_mod.stream(cfg.seed, rng_mod.REGIME)
    order: list[int] = []

    history: list[LogRow] = []
    step_losses: list[float] = []
    step_excess: list[float] = []
    win_loss = win_excess = 0.0
    win_n = 0
    for step in range(cfg.total_iters):
        batch_ids = []
        while len(batch_ids) < cfg.batch_size:
            if not order:
                order = order_gen.permutation(len(corpus)).tolist()
            batch_ids.append(order.pop())
        batch = []
        for i in batch_ids:
            mask = regime_mask(cfg.regime, k, regime_gen)
            inst = make_instance(corpus[i], mask, cfg.prior, canvas_gen, cfg.global_uniform, cfg.span_mass)
            inst.example_index = i
            batch.append(inst)

        zero_grads(params)
        loss, per = batch_loss(batch, params, model_cfg)
        if not torch.isfinite(per).all():
            bad = int((~torch.isfinite(per)).nonzero()[0, 0])
            raise NonFiniteLoss(step, batch[bad].example_index, float(per[bad].detach()))
        backward(loss)
        lr = lr_at(step, cfg)
        opt.step(lr)

        value = loss.item()
        excess = value - float(np.mean([target_entropy(x) for x in batch]))
        step_losses.append(value)
        step_excess.append(excess)
        win_loss += value
        win_excess += excess
        win_n += 1
        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.total_iters:
            row = LogRow(step + 1, lr, win_loss / win_n, win_excess / win_n)
            history.append(row)
            win_loss = win_excess = 0.0
            win_n = 0
            if progress:
                log.info("step %d lr %.3g loss %.4f excess %.4f", row.step, row.lr, row.loss, row.excess)
            if callback is not None:
                callback(row, params)

    for t in params.values():
        t.requires_grad_(False)
        t.grad = None
    if loss_csv is not None:
        write_loss_csv(loss_csv, history)
    if cfg.checkpoint_path:
        save_checkpoint(cfg.checkpoint_path, params, checkpoint_meta(model_cfg, cfg, meta))
    return TrainResult(params, history, step_losses, step_excess)


def write_loss_csv(path: str | Path, history: Sequence[LogRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr", "loss"])
        for row in history:
            w.writerow([row.step, repr(row.lr), repr(row.loss)])
