"""Command-line interface for the multichannel insertion language model.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(non-finite loss, too many truncated decodes).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import rng as rng_mod
from .corpus import gen_corpus, load_corpus, save_corpus
from .config import RunConfig
from .decode import DecodeConfig, Scheme, decode, init_canvas
from .errors import ConfigError, ContractViolation, CorpusParseError, InvalidArgument, NonFiniteLoss
from .evaluation import (
    corpus_bleu,
    iteration_experiment,
    joint_sample_batch,
    pseudo_target_consistency,
    qd_sweep,
    write_consistency_csv,
    write_iteration_csv,
    write_qd_csv,
)
from .model import ModelConfig, check_params
from .numeric import load_checkpoint
from .trainer import train
from .vocab import N_SPECIAL, Vocabulary, build_vocab

log = logging.getLogger("insertion_lm")


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(args) -> RunConfig:
    return RunConfig.load(getattr(args, "config", None), getattr(args, "set", None) or ())


def _echo_config(cfg: RunConfig, out: str | Path) -> None:
    cfg.write(str(out) + ".config")


def _load_model(path: str):
    params, meta = load_checkpoint(path)
    model_cfg = ModelConfig(**meta["model"])
    check_params(params, model_cfg)
    vocab = Vocabulary.from_tokens(meta["vocab"][N_SPECIAL:])
    return params, model_cfg, vocab, meta


def _read_lines(path: str) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


# ---------------------------------------------------------------------------
# commands


def cmd_gen_corpus(args) -> None:
    cfg = _config(args)
    spec = cfg.corpus_spec()
    save_corpus(args.out, gen_corpus(spec))
    _echo_config(cfg, args.out)
    print(f"wrote {spec.n_examples} examples to {args.out}")


def cmd_build_vocab(args) -> None:
    vocab = build_vocab(_read_lines(args.corpus))
    vocab.save(args.out)
    print(f"wrote {len(vocab)} tokens to {args.out}")


def cmd_train(args) -> None:
    cfg = _config(args)
    vocab = Vocabulary.load(args.vocab)
    k = cfg["corpus.k"]
    examples = load_corpus(args.corpus, k)
    encoded = [[vocab.encode(c) for c in ex.channels] for ex in examples]
    model_cfg = cfg.model_config(len(vocab), k)
    train_cfg = cfg.train_config(args.out)
    loss_csv = args.loss_csv or str(args.out) + ".loss.csv"
    train(train_cfg, model_cfg, encoded, loss_csv=loss_csv, meta={"vocab": list(vocab.itos)}, progress=True)
    _echo_config(cfg, args.out)
    print(f"wrote checkpoint {args.out} and loss log {loss_csv}")


def _check_truncation(n_trunc: int, n: int, limit: float) -> None:
    if n and n_trunc / n > limit:
        raise RuntimeFailure(f"{n_trunc} of {n} decodes hit max_iters (limit {limit:.0%})")


def cmd_decode(args) -> None:
    cfg = _config(args)
    if args.mode:
        cfg.set("decode.mode", args.mode)
    dcfg = cfg.decode_config()
    params, model_cfg, vocab, _ = _load_model(args.ckpt)
    k = model_cfg.k
    rows, n_trunc = [], 0
    if args.input_file:
        if args.src_channel is None or not 0 <= args.src_channel < k:
            raise UsageError("--input-file needs --src-channel in [0, k)")
        inputs = []
        for line in _read_lines(args.input_file):
            fields = line.split("\t")
            text = fields[args.src_channel] if len(fields) == k else line
            observed = [[] for _ in range(k)]
            observed[args.src_channel] = vocab.encode(text)
            inputs.append(init_canvas(k, observed))
        allowed = [c for c in range(k) if c != args.src_channel]
    else:
        inputs = []
        for line_no, line in enumerate(_read_lines(args.infill_spec), start=1):
            fields = line.split("\t")
            if len(fields) != k:
                raise CorpusParseError(line_no, f"infill spec needs {k} tab-separated fields")
            inputs.append(init_canvas(k, partial=[vocab.encode(f) for f in fields]))
        allowed = None
    for i, canvas in enumerate(inputs):
        gen = rng_mod.stream(dcfg.seed, rng_mod.DECODE, i)
        out, trace = decode(dcfg, canvas, params, model_cfg, allowed=allowed, gen=gen)
        n_trunc += trace.truncated
        rows.append("\t".join(vocab.decode_ids(out[c]) for c in range(k)))
    Path(args.out).write_text("".join(r + "\n" for r in rows), encoding="utf-8")
    _echo_config(cfg, args.out)
    print(f"decoded {len(rows)} inputs ({n_trunc} truncated) to {args.out}")
    _check_truncation(n_trunc, len(rows), cfg["decode.truncation_limit"])


def _scheme(name: str, order: str | None) -> Scheme:
    return Scheme(name, tuple(int(x) for x in order.split(",")) if order else ())


def cmd_sample_joint(args) -> None:
    cfg = _config(args)
    params, model_cfg, vocab, _ = _load_model(args.ckpt)
    temperature = args.temperature if args.temperature is not None else cfg["decode.temperature"]
    samples, n_trunc = joint_sample_batch(
        _scheme(args.scheme, args.order), params, model_cfg, args.n, temperature, cfg["decode.seed"], cfg["decode.max_iters"]
    )
    Path(args.out).write_text(
        "".join("\t".join(vocab.decode_ids(ch) for ch in s) + "\n" for s in samples), encoding="utf-8"
    )
    _echo_config(cfg, args.out)
    print(f"wrote {len(samples)} joint samples ({n_trunc} truncated) to {args.out}")
    _check_truncation(n_trunc, len(samples), cfg["decode.truncation_limit"])


def cmd_eval_bleu(args) -> None:
    refs = load_corpus(args.ref, args.k)
    hyps = load_corpus(args.hyp, args.k)
    if len(refs) != len(hyps):
        raise InvalidArgument(f"{len(hyps)} hypotheses for {len(refs)} references")
    channels = [c for c in range(args.k) if c != args.src_channel]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "bleu", "p1", "p2", "p3", "p4", "bp"])
        for c in channels:
            res = corpus_bleu([h.channels[c].split() for h in hyps], [[r.channels[c].split()] for r in refs])
            p = res.precisions + [float("nan")] * (4 - len(res.precisions))
            w.writerow([c, f"{res.score:.4f}", *(f"{x:.4f}" for x in p), f"{res.brevity_penalty:.4f}"])
            print(f"channel {c}: BLEU {res.score:.2f}")


def _encoded_corpus(path: str, k: int, vocab: Vocabulary, limit: int | None = None):
    examples = load_corpus(path, k)[:limit]
    return [[vocab.encode(c) for c in ex.channels] for ex in examples]


def cmd_eval_qd(args) -> None:
    cfg = _config(args)
    params, model_cfg, vocab, _ = _load_model(args.ckpt)
    data = _encoded_corpus(args.corpus, model_cfg.k, vocab, cfg["eval.sources"])
    targets = args.tgt or [c for c in range(model_cfg.k) if c != args.src]
    points = []
    for t in targets:
        points += qd_sweep(params, model_cfg, data, args.src, t, cfg["eval.temps"], cfg["eval.samples"],
                           seed=cfg["decode.seed"], max_iters=cfg["decode.max_iters"])
    out = Path(cfg["eval.out_dir"]) / "qd.csv" if args.out is None else Path(args.out)
    write_qd_csv(out, points)
    _echo_config(cfg, out)
    for p in points:
        print(f"{p.src}->{p.tgt} tau={p.temperature:g}: quality {p.quality_bleu:.2f}, self-BLEU {p.self_bleu:.2f}")


def cmd_eval_iters(args) -> None:
    cfg = _config(args)
    params, model_cfg, vocab, _ = _load_model(args.ckpt)
    data = _encoded_corpus(args.corpus, model_cfg.k, vocab)
    stats = iteration_experiment(params, model_cfg, data, args.src, max_iters=cfg["decode.max_iters"])
    out = Path(cfg["eval.out_dir"]) / "iterations.csv" if args.out is None else Path(args.out)
    write_iteration_csv(out, stats)
    _echo_config(cfg, out)
    print(f"median iterations serial {stats.median_serial} parallel {stats.median_parallel} "
          f"ratio {stats.median_ratio:.3f}; {stats.truncated} truncated")


def cmd_eval_consistency(args) -> None:
    cfg = _config(args)
    params, model_cfg, vocab, _ = _load_model(args.ckpt)
    spec = cfg.corpus_spec()
    if spec.k != model_cfg.k:
        raise ConfigError(f"corpus.k={spec.k} does not match the checkpoint's k={model_cfg.k}")
    temperature = args.temperature if args.temperature is not None else cfg["decode.temperature"]
    results = {}
    for name in args.schemes.split(","):
        samples, _ = joint_sample_batch(_scheme(name, args.order), params, model_cfg, args.n, temperature,
                                        cfg["decode.seed"], cfg["decode.max_iters"])
        text = [[vocab.decode_ids(ch).split() for ch in s] for s in samples]
        results[name] = pseudo_target_consistency(text, spec)
        print(f"{name}: mean pseudo-target BLEU {results[name].mean:.2f}")
    out = Path(cfg["eval.out_dir"]) / "consistency.csv" if args.out is None else Path(args.out)
    write_consistency_csv(out, results)
    _echo_config(cfg, out)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="insertion-lm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        return sp

    sp = with_config(sub.add_parser("gen-corpus", help="generate a synthetic parallel corpus"))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_corpus)

    sp = sub.add_parser("build-vocab", help="build the shared vocabulary")
    sp.add_argument("corpus")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_build_vocab)

    sp = with_config(sub.add_parser("train", help="train an insertion model"))
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--loss-csv")
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("decode", help="conditional decoding or infilling"))
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--src-channel", type=int)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--input-file")
    g.add_argument("--infill-spec")
    sp.add_argument("--mode", choices=["parallel", "serial_greedy", "serial_sample"])
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_decode)

    sp = with_config(sub.add_parser("sample-joint", help="unconditional joint samples"))
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--scheme", default="unrestricted", choices=["unrestricted", "chain", "common_cause"])
    sp.add_argument("--order", help="comma-separated channel order (chain / common_cause root first)")
    sp.add_argument("--temperature", type=float)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample_joint)

    sp = sub.add_parser("eval-bleu", help="corpus BLEU of decode output against a reference corpus")
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--src-channel", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval_bleu)

    sp = with_config(sub.add_parser("eval-qd", help="quality-diversity temperature sweep"))
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--src", type=int, default=0)
    sp.add_argument("--tgt", type=int, action="append")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval_qd)

    sp = with_config(sub.add_parser("eval-iters", help="serial vs parallel target decoding iterations"))
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--src", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval_iters)

    sp = with_config(sub.add_parser("eval-consistency", help="pseudo-target BLEU of joint samples"))
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--schemes", default="unrestricted,chain,common_cause")
    sp.add_argument("--order")
    sp.add_argument("--temperature", type=float)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval_consistency)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout)
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except (UsageError, ConfigError, InvalidArgument, CorpusParseError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NonFiniteLoss, RuntimeFailure, ContractViolation) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
