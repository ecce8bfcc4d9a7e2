import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insertion_lm.corpus import (
    ChannelTransform,
    CorpusSpec,
    ParallelExample,
    gen_corpus,
    load_corpus,
    oracle_translate,
    save_corpus,
)
from insertion_lm.errors import CorpusParseError, InvalidArgument


def test_deterministic():
    spec = CorpusSpec(n_examples=20, seed=7)
    assert gen_corpus(spec) == gen_corpus(spec)
    assert gen_corpus(spec) != gen_corpus(CorpusSpec(n_examples=20, seed=8))


def test_lengths_in_range_and_mean():
    ex = gen_corpus(CorpusSpec(n_examples=5000))
    lens = [len(e.channels[0].split()) for e in ex]
    assert min(lens) >= 3 and max(lens) <= 12
    assert abs(np.mean(lens) - 7.5) < 0.2


def test_channels_are_translations():
    spec = CorpusSpec(n_examples=50)
    for e in gen_corpus(spec):
        for a in range(3):
            for b in range(3):
                assert oracle_translate(e.channels[a], a, b, spec) == e.channels[b].split()


def test_transform_kinds():
    m = {"a": "x", "b": "y", "c": "z"}
    assert ChannelTransform("dict", m).apply(["a", "b", "c"]) == ["x", "y", "z"]
    assert ChannelTransform("reverse_dict", m).apply(["a", "b", "c"]) == ["z", "y", "x"]
    assert ChannelTransform("rot_dict", m).apply(["a", "b", "c"]) == ["y", "z", "x"]


@given(st.sampled_from(["dict", "reverse_dict", "rot_dict"]), st.lists(st.sampled_from("abcd"), max_size=10))
def test_transform_invertible(kind, tokens):
    t = ChannelTransform(kind, {w: w.upper() for w in "abcd"})
    assert t.invert(t.apply(tokens)) == tokens


def test_channel_lexicons_disjoint():
    ts = CorpusSpec().channel_transforms()
    assert not (ts[1].lexicon() & ts[2].lexicon())
    assert not (ts[0].lexicon() & ts[1].lexicon())


def test_oracle_rejects_foreign_tokens():
    with pytest.raises(InvalidArgument):
        oracle_translate(["zz"], 0, 1, CorpusSpec())


@pytest.mark.parametrize(
    "kw",
    [
        {"k": 3, "transforms": ("identity", "dict")},
        {"transforms": ("dict", "dict", "dict")},
        {"min_len": 5, "max_len": 4},
    ],
)
def test_spec_validation(kw):
    with pytest.raises(InvalidArgument):
        CorpusSpec(**kw)


def test_tiny_lexicon_rejected():
    with pytest.raises(InvalidArgument):
        gen_corpus(CorpusSpec(lexicon_size=1))


def test_save_load_round_trip(tmp_path):
    ex = gen_corpus(CorpusSpec(n_examples=10))
    save_corpus(tmp_path / "c.tsv", ex)
    assert load_corpus(tmp_path / "c.tsv", 3) == ex


def test_load_reports_line_number(tmp_path):
    (tmp_path / "c.tsv").write_text("a\tb\tc\na\tb\n")
    with pytest.raises(CorpusParseError) as info:
        load_corpus(tmp_path / "c.tsv", 3)
    assert info.value.line_no == 2


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 8), st.integers(0, 1000))
def test_any_channel_count(k, seed):
    kinds = ("identity",) + tuple(("dict", "reverse_dict", "rot_dict")[i % 3] for i in range(k - 1))
    spec = CorpusSpec(k=k, transforms=kinds, seed=seed, n_examples=3)
    for e in gen_corpus(spec):
        assert isinstance(e, ParallelExample) and e.k == k
        assert len({len(c.split()) for c in e.channels}) == 1
