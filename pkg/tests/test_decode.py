import numpy as np
import pytest
import torch

from insertion_lm import rng as rng_mod
from insertion_lm.canvas import Canvas
from insertion_lm.decode import (
    DecodeConfig,
    Scheme,
    decode,
    init_canvas,
    iteration_bounds,
    sample_joint,
    step_parallel_greedy,
    step_serial,
    write_trace_csv,
)
from insertion_lm.errors import ContractViolation, InvalidArgument
from insertion_lm.model import ModelConfig, init_params
from insertion_lm.vocab import EOS_SLOT, PAD, SEP

CFG = ModelConfig(vocab_size=12, k=3, layers=1, dim=16, heads=2, ffn=32, max_pos=64, seed=1)


def _eos_model():
    p = init_params(CFG)
    p["out.w"] = torch.zeros_like(p["out.w"])
    p["out.b"] = torch.zeros_like(p["out.b"])
    p["out.b"][EOS_SLOT] = 50.0
    return p


def _token_model(token):
    """Prefers ``token`` everywhere, so nothing ever terminates."""
    p = init_params(CFG)
    p["out.w"] = torch.zeros_like(p["out.w"])
    p["out.b"] = torch.zeros_like(p["out.b"])
    p["out.b"][token] = 50.0
    return p


class TestInitCanvas:
    def test_empty(self):
        c = init_canvas(4)
        assert c.tokens == [SEP] * 4 and c.channels == [0, 1, 2, 3]

    def test_translation_seed(self):
        c = init_canvas(3, [[5, 6], [], []])
        assert c.items == [(5, 0), (6, 0), (SEP, 0), (SEP, 1), (SEP, 2)]

    def test_infill_seed(self):
        c = init_canvas(3, partial=[[5], [6, 7], [8]])
        assert c.split() == {0: [5], 1: [6, 7], 2: [8]}
        c.check()

    def test_channel_subset(self):
        assert init_canvas(3, [[5], [], []], channels=[0, 2]).items == [(5, 0), (SEP, 0), (SEP, 2)]

    def test_conflicts(self):
        with pytest.raises(InvalidArgument):
            init_canvas(2, [[5], []], [[6], []])
        with pytest.raises(InvalidArgument):
            init_canvas(2, [[SEP], []])


class TestParallel:
    def test_eos_model_stops_after_one_iteration(self):
        out, trace = decode(DecodeConfig("parallel"), init_canvas(3, [[5, 6], [], []]), _eos_model(), CFG)
        assert trace.iteration_count == 1 and not trace.truncated
        assert trace.n_inserted == 0
        assert out == {0: [5, 6], 1: [], 2: []}

    def test_right_to_left_application(self):
        c = init_canvas(2, [[5, 6], [7]])
        ins, done = step_parallel_greedy(c, _token_model(9), CFG)
        assert not done
        assert [i for i, _, _ in ins] == [0, 1, 2, 3, 4]
        assert c.items == [(9, 0), (5, 0), (9, 0), (6, 0), (9, 0), (SEP, 0), (9, 1), (7, 1), (9, 1), (SEP, 1)]
        c.check()

    def test_truncation_on_untrained_model(self):
        cfg = DecodeConfig("parallel", max_iters=3)
        _, trace = decode(cfg, init_canvas(3), _token_model(7), CFG)
        assert trace.truncated and trace.iteration_count == 3

    def test_random_model_terminates_by_max_iters(self):
        _, trace = decode(DecodeConfig("parallel", max_iters=5), init_canvas(3), init_params(CFG), CFG)
        assert trace.iteration_count <= 5
        assert trace.canvas is not None and trace.canvas.tokens.count(SEP) == 3

    def test_allowed_channels_only(self):
        out, trace = decode(DecodeConfig("parallel", max_iters=2), init_canvas(3, [[5], [], []]), _token_model(9), CFG, allowed=[1])
        assert out[0] == [5] and out[2] == [] and out[1] == [9, 9, 9]
        assert all(ch == 1 for it in trace.iterations for _, _, ch in it)

    def test_capacity_ends_as_truncation(self):
        _, trace = decode(DecodeConfig("parallel", max_iters=256), init_canvas(3), _token_model(7), CFG)
        assert trace.truncated and len(trace.canvas) > CFG.max_pos
        assert trace.iteration_count < 256

    def test_iterations_bounded_by_insertions(self):
        _, trace = decode(DecodeConfig("parallel", max_iters=6), init_canvas(3), init_params(CFG), CFG)
        if not trace.truncated:
            assert trace.iteration_count <= trace.n_inserted + 1


class TestSerial:
    def test_eos_model_closes_every_slot(self):
        _, trace = decode(DecodeConfig("serial_greedy"), init_canvas(3), _eos_model(), CFG)
        assert trace.iteration_count == 3 and trace.n_inserted == 0 and not trace.truncated

    def test_reopen_rule(self):
        c = init_canvas(2, [[5], []])
        open_slots = [False, True, False]
        action, slot, tok = step_serial(c, open_slots, _token_model(9), CFG, "serial_greedy")
        assert (action, slot, tok) == ("insert", 1, 9)
        assert c.items == [(5, 0), (9, 0), (SEP, 0), (SEP, 1)]
        assert open_slots == [False, True, True, False]

    def test_no_open_slot(self):
        with pytest.raises(ContractViolation):
            step_serial(init_canvas(2), [False, False], _eos_model(), CFG, "serial_greedy")

    def test_sample_is_seeded(self):
        p = init_params(CFG)
        cfg = DecodeConfig("serial_sample", 1.0, max_iters=20, seed=4)
        a, ta = decode(cfg, init_canvas(3), p, CFG)
        b, tb = decode(cfg, init_canvas(3), p, CFG)
        assert a == b and ta.iterations == tb.iterations

    def test_low_temperature_matches_greedy(self):
        p = init_params(CFG)
        p["out.b"] = p["out.b"] + torch.linspace(0, 3, CFG.vocab_size, dtype=torch.float64)
        for seed in range(5):
            c = init_canvas(3, [[5, 6], [7], []])
            greedy = step_serial(c.copy(), [True] * len(c), p, CFG, "serial_greedy")
            gen = np.random.Generator(np.random.PCG64(seed))
            sampled = step_serial(c.copy(), [True] * len(c), p, CFG, "serial_sample", 1e-4, gen)
            assert sampled == greedy

    def test_sample_never_picks_masked(self):
        p = init_params(CFG)
        gen = np.random.Generator(np.random.PCG64(0))
        c = init_canvas(3)
        for _ in range(40):
            _, _, tok = step_serial(c, [True] * len(c), p, CFG, "serial_sample", 5.0, gen)
            assert tok not in (PAD, SEP)

    def test_serial_sample_truncates(self):
        cfg = DecodeConfig("serial_sample", 1.0, max_iters=4)
        _, trace = decode(cfg, init_canvas(3), _token_model(8), CFG)
        assert trace.truncated and trace.iteration_count == 4


class TestJointSampling:
    def test_unrestricted_shape(self):
        chans, traces = sample_joint(Scheme("unrestricted"), init_params(CFG), CFG, seed=1, max_iters=30)
        assert len(chans) == 3 and len(traces) == 1

    def test_common_cause_and_chain_share_root(self):
        p = init_params(CFG)
        cc, _ = sample_joint(Scheme("common_cause", (0,)), p, CFG, seed=3, max_iters=30)
        ch, _ = sample_joint(Scheme("chain", (0, 1, 2)), p, CFG, seed=3, max_iters=30)
        assert cc[0] == ch[0] and cc[1] == ch[1]

    def test_phase_restricted_to_its_channel(self):
        _, traces = sample_joint(Scheme("chain", (2, 0, 1)), init_params(CFG), CFG, seed=0, max_iters=30)
        for target, tr in zip((2, 0, 1), traces):
            assert all(ch == target for it in tr.iterations for _, _, ch in it)

    def test_single_channel_chain(self):
        chans, traces = sample_joint(Scheme("chain", (1,)), init_params(CFG), CFG, seed=0, max_iters=30)
        assert len(traces) == 1 and chans[0] == [] and chans[2] == []

    def test_bad_order(self):
        with pytest.raises(InvalidArgument):
            sample_joint(Scheme("chain", (0, 0)), init_params(CFG), CFG)


class TestBounds:
    @pytest.mark.parametrize("N,k,mcp,pcp", [(24, 3, 5, 15), (21, 3, 4, 12), (3, 3, 2, 6)])
    def test_cases(self, N, k, mcp, pcp):
        b = iteration_bounds(N, k)
        assert b["multi_channel_parallel"] == mcp and b["per_channel_parallel"] == pcp and b["serial"] == N

    def test_single_sequence(self):
        assert iteration_bounds(24, 3)["single_sequence"] == 6

    def test_exact_floor_at_powers(self):
        for e in range(1, 12):
            assert iteration_bounds(2**e, 1)["multi_channel_parallel"] == e + 2
            assert iteration_bounds(2**e - 1, 1)["multi_channel_parallel"] == e + 1

    def test_n_below_k(self):
        with pytest.raises(InvalidArgument):
            iteration_bounds(2, 3)


def test_config_validation():
    with pytest.raises(InvalidArgument):
        DecodeConfig("beam")
    with pytest.raises(InvalidArgument):
        DecodeConfig("serial_sample", 0.0)
    with pytest.raises(InvalidArgument):
        DecodeConfig(max_iters=0)


def test_trace_csv(tmp_path):
    write_trace_csv(tmp_path / "t.csv", [(0, "parallel", 3, 12, 4, 1.5)])
    assert (tmp_path / "t.csv").read_text().splitlines() == [
        "example_id,mode,k,total_output_len,iterations,wall_ms",
        "0,parallel,3,12,4,1.5",
    ]
