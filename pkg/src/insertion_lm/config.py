"""Flat ``key = value`` run configuration with typed, closed key set."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Iterable

from .canvas import Prior
from .corpus import CorpusSpec
from .decode import DecodeConfig
from .errors import ConfigError
from .model import ModelConfig
from .trainer import Regime, TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _strs(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _opt_int(s: str) -> int | None:
    s = s.strip().lower()
    return None if s in ("", "none", "any", "-1") else int(s)


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], str]] = {
    "corpus.k": (int, "3"),
    "corpus.lexicon_size": (int, "50"),
    "corpus.min_len": (int, "3"),
    "corpus.max_len": (int, "12"),
    "corpus.transforms": (_strs, "identity,reverse_dict,rot_dict"),
    "corpus.seed": (int, "42"),
    "corpus.n": (int, "1000"),
    "model.layers": (int, "2"),
    "model.dim": (int, "64"),
    "model.heads": (int, "4"),
    "model.ffn": (int, "256"),
    "model.max_pos": (int, "64"),
    "model.seed": (int, "0"),
    "train.regime": (str, "joint"),
    "train.src": (_opt_int, "none"),
    "train.tgt": (_opt_int, "none"),
    "train.prior": (str, "uniform"),
    "train.tree_tau": (float, "1.0"),
    "train.lr": (float, "1e-4"),
    "train.iters": (int, "1000"),
    "train.warmup_frac": (float, "0.1"),
    "train.batch": (int, "32"),
    "train.seed": (int, "0"),
    "train.eval_every": (int, "50"),
    "train.global_uniform": (_bool, "false"),
    "train.span_mass": (_bool, "false"),
    "train.decay": (str, "constant"),
    "decode.mode": (str, "parallel"),
    "decode.temperature": (float, "1.0"),
    "decode.max_iters": (int, "256"),
    "decode.seed": (int, "0"),
    "decode.truncation_limit": (float, "0.5"),
    "eval.temps": (_floats, "0.1,0.5,1.0"),
    "eval.samples": (int, "16"),
    "eval.sources": (int, "100"),
    "eval.out_dir": (str, "."),
}


class RunConfig:
    """Resolved configuration: defaults, then file values, then overrides."""

    def __init__(self, raw: dict[str, str] | None = None):
        self.raw = {k: v for k, (_, v) in SCHEMA.items()}
        self.values: dict[str, Any] = {}
        for key, text in (raw or {}).items():
            self.set(key, text)
        for key, text in self.raw.items():
            if key not in self.values:
                self.values[key] = self._parse(key, text)

    def set(self, key: str, text: str) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = self._parse(key, text)
        self.raw[key] = text.strip()

    @staticmethod
    def _parse(key: str, text: str) -> Any:
        parser, _ = SCHEMA[key]
        try:
            return parser(text.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Iterable[str] = ()) -> "RunConfig":
        raw: dict[str, str] = {}
        if path is not None:
            text = Path(path).read_text(encoding="utf-8")
            for line_no, line in enumerate(text.splitlines(), start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
                key, value = (s.strip() for s in line.split("=", 1))
                if key not in SCHEMA:
                    raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
                raw[key] = value
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = (s.strip() for s in item.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            raw[key] = value
        return cls(raw)

    def dump(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in sorted(self.raw))

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dump(), encoding="utf-8")

    # typed views -------------------------------------------------------

    def corpus_spec(self) -> CorpusSpec:
        try:
            return CorpusSpec(
                k=self["corpus.k"], lexicon_size=self["corpus.lexicon_size"], min_len=self["corpus.min_len"],
                max_len=self["corpus.max_len"], transforms=self["corpus.transforms"], seed=self["corpus.seed"],
                n_examples=self["corpus.n"],
            )
        except ValueError as exc:
            raise ConfigError(f"corpus: {exc}") from None

    def model_config(self, vocab_size: int, k: int) -> ModelConfig:
        try:
            return ModelConfig(
                vocab_size=vocab_size, k=k, layers=self["model.layers"], dim=self["model.dim"],
                heads=self["model.heads"], ffn=self["model.ffn"], max_pos=self["model.max_pos"], seed=self["model.seed"],
            )
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from None

    def train_config(self, checkpoint_path: str | None = None) -> TrainConfig:
        try:
            return TrainConfig(
                regime=Regime(self["train.regime"], self["train.src"], self["train.tgt"]),
                prior=Prior(self["train.prior"], self["train.tree_tau"]),
                lr=self["train.lr"], total_iters=self["train.iters"], warmup_frac=self["train.warmup_frac"],
                batch_size=self["train.batch"], seed=self["train.seed"], eval_every=self["train.eval_every"],
                checkpoint_path=checkpoint_path, global_uniform=self["train.global_uniform"],
                span_mass=self["train.span_mass"], decay=self["train.decay"],
            )
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from None

    def decode_config(self) -> DecodeConfig:
        try:
            return DecodeConfig(self["decode.mode"], self["decode.temperature"], self["decode.max_iters"], self["decode.seed"])
        except ValueError as exc:
            raise ConfigError(f"decode: {exc}") from None
