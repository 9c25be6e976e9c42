"""Run configuration: ``[section]`` headers with ``key = value`` lines."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .corpus import LanguageTag
from .embed import SgnsConfig
from .errors import ConfigError, CsrError
from .noise import NoiseConfig
from .pipeline import StagePlan
from .seq2seq import REFERENCE_BEAM, REFERENCE_DROPOUT, REFERENCE_LABEL_SMOOTHING, ModelConfig


@dataclass
class DataSection:
    src_path: str | None = None
    tgt_path: str | None = None
    test_src_path: str | None = None
    test_tgt_path: str | None = None
    src_lang: str = "SRC"
    tgt_lang: str = "TGT"
    dedup: bool = False
    synth_seed: int = 0
    synth_vocab: int = 50
    synth_sentences: int = 2000
    synth_test_sentences: int = 200
    synth_min_len: int = 4
    synth_max_len: int = 12
    synth_context: float = 0.0


@dataclass
class EmbedSection:
    dim: int = 64
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_count: int = 1


@dataclass
class AlignSection:
    k: int = 4
    retrieval: str = "csls"
    neighborhood: int = 10
    max_iter: int = 20
    seed_method: str = "auto"


@dataclass
class NoiseSection:
    ratio: float = 0.35
    poisson_lambda: float = 3.5
    k: int = 4


@dataclass
class ModelSection:
    dim: int = 64
    layers: int = 2
    heads: int = 2
    ffn_dim: int = 128
    dropout: float = REFERENCE_DROPOUT
    max_len: int = 64


@dataclass
class PlanSection:
    stage1_steps: int = 500
    stage2_steps: int = 2500
    batch_size: int = 32
    eval_every: int = 0
    data_seed: int = 0
    model_seed: int = 0
    peak_lr: float = 3e-3
    warmup_fraction: float = 0.1
    label_smoothing: float = REFERENCE_LABEL_SMOOTHING
    interleave_span_mask: bool = False


@dataclass
class EvalSection:
    beam: int = REFERENCE_BEAM
    max_decode_len: int = 32
    length_penalty: float = 1.0
    low_threshold: int = 100
    high_threshold: int = 1000
    distance_subset: int = 20000
    smoothing_window: int = 10


SECTIONS = {
    "data": DataSection,
    "embed": EmbedSection,
    "align": AlignSection,
    "noise": NoiseSection,
    "model": ModelSection,
    "plan": PlanSection,
    "eval": EvalSection,
}


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    embed: EmbedSection = field(default_factory=EmbedSection)
    align: AlignSection = field(default_factory=AlignSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    model: ModelSection = field(default_factory=ModelSection)
    plan: PlanSection = field(default_factory=PlanSection)
    eval: EvalSection = field(default_factory=EvalSection)
    base_dir: Path = field(default_factory=Path.cwd)

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else (self.base_dir / p).resolve()

    def with_seed(self, seed: int) -> "RunConfig":
        plan = dataclasses.replace(self.plan, data_seed=seed, model_seed=seed)
        return dataclasses.replace(self, plan=plan)

    @property
    def src_lang(self) -> LanguageTag:
        return LanguageTag.parse(self.data.src_lang)

    @property
    def tgt_lang(self) -> LanguageTag:
        return LanguageTag.parse(self.data.tgt_lang)

    def sgns_config(self) -> SgnsConfig:
        return SgnsConfig(seed=self.plan.data_seed, **dataclasses.asdict(self.embed))

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(seed=self.plan.data_seed, **dataclasses.asdict(self.noise))

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, seed=self.plan.model_seed, **dataclasses.asdict(self.model))

    def stage_plan(self) -> StagePlan:
        return StagePlan(**dataclasses.asdict(self.plan))

    def validate(self) -> None:
        """Build every domain config once so bound violations surface early."""
        self.src_lang, self.tgt_lang
        if self.src_lang == self.tgt_lang:
            raise ConfigError("data.src_lang and data.tgt_lang must differ")
        self.sgns_config()
        self.noise_config()
        self.model_config(vocab_size=16)
        self.stage_plan()
        if self.align.retrieval not in ("dot", "csls"):
            raise ConfigError(f"align.retrieval must be dot or csls, not {self.align.retrieval!r}")
        if self.align.seed_method not in ("auto", "identical_strings", "numerals", "similarity_init"):
            raise ConfigError(f"unknown align.seed_method {self.align.seed_method!r}")
        if self.align.k < 1 or self.eval.beam < 1 or self.eval.max_decode_len < 1:
            raise ConfigError("align.k, eval.beam and eval.max_decode_len must be positive")
        if self.eval.low_threshold > self.eval.high_threshold:
            raise ConfigError("eval.low_threshold exceeds eval.high_threshold")

    def to_text(self) -> str:
        """Effective configuration in the same format ``parse_config`` reads."""
        out = []
        for name in SECTIONS:
            out.append(f"[{name}]")
            section = getattr(self, name)
            for f in fields(section):
                value = getattr(section, f.name)
                if value is None:
                    continue
                if f.name.endswith("_path"):
                    value = str(self.path(value))
                elif isinstance(value, bool):
                    value = "true" if value else "false"
                elif isinstance(value, float):
                    value = repr(value)
                out.append(f"{f.name} = {value}")
            out.append("")
        return "\n".join(out)


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(raw: str, annotation, key: str, lineno: int):
    kinds = str(annotation)
    try:
        if kinds == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if kinds == "int":
            return int(raw)
        if kinds == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} expects {kinds}, got {raw!r}") from None
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    return raw


def parse_config_text(text: str, base_dir: Path | None = None) -> RunConfig:
    cfg = RunConfig(base_dir=Path(base_dir) if base_dir else Path.cwd())
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip() if not line.lstrip().startswith(("#", ";")) else ""
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            name = stripped[1:-1].strip()
            if name not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            section = name
            continue
        key, sep, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"line {lineno}: {key} appears before any [section]")
        target = getattr(cfg, section)
        annotations = {f.name: f.type for f in fields(target)}
        if key not in annotations:
            raise ConfigError(f"line {lineno}: unknown key {section}.{key}")
        setattr(target, key, _convert(raw, annotations[key], f"{section}.{key}", lineno))
    try:
        cfg.validate()
    except ConfigError:
        raise
    except (CsrError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8") from exc
    return parse_config_text(text, path.parent.resolve())
