import math

import numpy as np
import pytest
import torch

from insertion_lm import rng as rng_mod
from insertion_lm.canvas import Obs, Prior
from insertion_lm.errors import InvalidArgument, NonFiniteLoss
from insertion_lm.model import ModelConfig, init_params
from insertion_lm.numeric import load_checkpoint
from insertion_lm.trainer import Regime, TrainConfig, lr_at, make_instance, regime_mask, train

TINY = ModelConfig(vocab_size=10, k=3, layers=1, dim=8, heads=2, ffn=16, max_pos=32, seed=0)


def _corpus(n=6, seed=0):
    gen = np.random.Generator(np.random.PCG64(seed))
    out = []
    for _ in range(n):
        length = int(gen.integers(1, 4))
        out.append([gen.integers(4, 10, size=length).tolist() for _ in range(3)])
    return out


class TestLrSchedule:
    def test_examples(self):
        cfg = TrainConfig(lr=1e-4, total_iters=1000, warmup_frac=0.1)
        assert cfg.warmup_steps == 100
        assert lr_at(0, cfg) == 0.0
        assert lr_at(50, cfg) == pytest.approx(5e-5)
        assert lr_at(100, cfg) == 1e-4
        assert lr_at(999, cfg) == 1e-4

    def test_monotone_warmup(self):
        cfg = TrainConfig(lr=1.0, total_iters=37, warmup_frac=0.3)
        lrs = [lr_at(s, cfg) for s in range(37)]
        assert lrs == sorted(lrs)
        assert cfg.warmup_steps == math.ceil(0.3 * 37)

    @pytest.mark.parametrize("decay", ["linear", "cosine"])
    def test_decay_after_warmup(self, decay):
        cfg = TrainConfig(lr=1.0, total_iters=100, warmup_frac=0.1, decay=decay)
        assert lr_at(10, cfg) == 1.0
        assert lr_at(55, cfg) == pytest.approx(0.5)
        lrs = [lr_at(s, cfg) for s in range(10, 100)]
        assert lrs == sorted(lrs, reverse=True)
        assert 0.0 < lr_at(99, cfg) < 0.02

    def test_unknown_decay(self):
        with pytest.raises(InvalidArgument):
            TrainConfig(decay="step")

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_bad_warmup(self, frac):
        with pytest.raises(InvalidArgument):
            TrainConfig(warmup_frac=frac)


class TestRegimes:
    def test_joint(self):
        assert regime_mask(Regime("joint"), 4, np.random.default_rng(0)) == {c: Obs.PARTIAL for c in range(4)}

    def test_bilingual_excludes_other_channels(self):
        mask = regime_mask(Regime("bilingual", 0, 2), 4, np.random.default_rng(0))
        assert mask == {0: Obs.FULL, 1: Obs.ABSENT, 2: Obs.PARTIAL, 3: Obs.ABSENT}
        inst = make_instance([[5], [6], [7, 8], [9]], mask, Prior(), np.random.default_rng(1))
        assert set(inst.canvas.channels) == {0, 2}

    def test_multitarget_fixed(self):
        mask = regime_mask(Regime("multitarget", 1), 3, np.random.default_rng(0))
        assert mask == {0: Obs.PARTIAL, 1: Obs.FULL, 2: Obs.PARTIAL}

    def test_multitarget_any_frequency(self):
        gen = rng_mod.stream(0, rng_mod.REGIME)
        n = 3000
        counts = [0, 0, 0]
        for _ in range(n):
            mask = regime_mask(Regime("multitarget"), 3, gen)
            (src,) = [c for c, o in mask.items() if o is Obs.FULL]
            counts[src] += 1
        se = math.sqrt(n * (1 / 3) * (2 / 3))
        assert all(abs(c - n / 3) < 3 * se for c in counts)

    @pytest.mark.parametrize(
        "regime", [Regime("bilingual", 0, 0), Regime("bilingual", 0), Regime("multitarget", 5), Regime("mixed")]
    )
    def test_invalid(self, regime):
        with pytest.raises(InvalidArgument):
            regime.validate(3)


class TestTrain:
    def test_deterministic(self, tmp_path):
        runs = []
        for i in range(2):
            (tmp_path / str(i)).mkdir()
            cwd = tmp_path / str(i)
            cfg = TrainConfig(total_iters=12, batch_size=4, lr=1e-2, eval_every=3, seed=5, checkpoint_path=str(cwd / "m.ckpt"))
            runs.append(train(cfg, TINY, _corpus(), loss_csv=cwd / "l.csv"))
        assert runs[0].step_losses == runs[1].step_losses
        assert (tmp_path / "0" / "l.csv").read_bytes() == (tmp_path / "1" / "l.csv").read_bytes()
        assert (tmp_path / "0" / "m.ckpt").read_bytes() == (tmp_path / "1" / "m.ckpt").read_bytes()

    def test_loss_csv_format(self, tmp_path):
        cfg = TrainConfig(total_iters=7, batch_size=2, eval_every=3)
        train(cfg, TINY, _corpus(), loss_csv=tmp_path / "l.csv")
        lines = (tmp_path / "l.csv").read_text().splitlines()
        assert lines[0] == "step,lr,loss"
        assert [int(line.split(",")[0]) for line in lines[1:]] == [3, 6, 7]

    def test_zero_lr_keeps_params(self):
        before = init_params(TINY)
        res = train(TrainConfig(total_iters=5, batch_size=3, lr=0.0), TINY, _corpus())
        assert all(torch.equal(before[k], res.params[k]) for k in before)

    def test_loss_decreases(self):
        cfg = TrainConfig(regime=Regime("multitarget", 0), total_iters=150, batch_size=6, lr=3e-2, eval_every=50)
        res = train(cfg, TINY, _corpus())
        assert res.history[-1].loss < res.history[0].loss
        assert all(e > -1e-9 for e in res.step_excess)

    def test_checkpoint_meta(self, tmp_path):
        cfg = TrainConfig(total_iters=2, batch_size=2, checkpoint_path=str(tmp_path / "m.ckpt"), seed=9)
        res = train(cfg, TINY, _corpus(), meta={"vocab": ["PAD"]})
        params, meta = load_checkpoint(tmp_path / "m.ckpt")
        assert meta["model"] == TINY.to_dict() and meta["seed"] == 9 and meta["vocab"] == ["PAD"]
        assert all(torch.equal(params[k], res.params[k]) for k in params)

    def test_non_finite_loss_aborts(self):
        params = init_params(TINY)
        params["out.b"][5] = float("nan")
        with pytest.raises(NonFiniteLoss) as info:
            train(TrainConfig(total_iters=3, batch_size=2), TINY, _corpus(), params=params)
        assert info.value.step == 0 and info.value.example_index is not None

    def test_empty_corpus(self):
        with pytest.raises(InvalidArgument):
            train(TrainConfig(total_iters=1), TINY, [])
