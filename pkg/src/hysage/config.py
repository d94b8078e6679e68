"""Run configuration: an INI file with one section per stage.

Feature fields are listed one per line under ``[context.user]``, ``[context.item]``
and ``[context.interaction]`` as ``name = kind path``. Relative paths resolve
against the directory holding the config file.
"""
from __future__ import annotations

import configparser
import copy
from dataclasses import dataclass, field
from pathlib import Path

from .context import ROLES, ContextSchema, FieldSpec
from .data import FEATURE_KINDS
from .errors import ConfigError, DataError
from .evaluation import EvalConfig
from .graph_embedding import WalkConfig
from .interest import InterestConfig
from .ranker import VARIANTS, TrainConfig

DEFAULTS_TEXT = """\
[data]
interactions = data/ml-100k/u.data
format = tsv-4col

[walk]
p = 1.0
q = 1.0
walk_length = 20
walks_per_node = 100

[embedding]
dim = 64
epochs = 30
lr = 0.05
batch_size = 65536

[interest]
K = 8
# blank means [dim, dim / 2]
hidden_dims =

[context]
cross_depth = 2

[context.user]

[context.item]

[context.interaction]

[train]
batch_size = 256
negatives = 4
lr = 0.001
l2 = 1e-7
epochs = 20

[eval]
negatives = 99
cutoffs = 5, 10, 20
variants = full, no_multimodal, no_side_info, no_interest, no_interactive

[run]
seed = 0
out = runs/default
"""


@dataclass
class EmbeddingConfig:
    dim: int = 64
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 65536

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"embedding dim must be >= 1, got {self.dim}")
        if self.epochs < 1 or self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("embedding epochs, lr and batch_size must be positive")


@dataclass
class RunConfig:
    interactions: Path
    fmt: str = "tsv-4col"
    walk: WalkConfig = field(default_factory=WalkConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    interest: InterestConfig = field(default_factory=InterestConfig)
    schema: ContextSchema = field(default_factory=ContextSchema)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))
    seed: int = 0
    out: Path = Path("runs/default")
    source: Path | None = None

    def validate(self) -> "RunConfig":
        """Check that every referenced input file exists."""
        missing = [self.interactions] if not Path(self.interactions).exists() else []
        missing += [Path(f.path) for _, f in self.schema.fields() if not Path(f.path).exists()]
        if missing:
            raise DataError(f"missing file: {missing[0]}")
        return self

    def with_overrides(self, seed: int | None = None, out=None) -> "RunConfig":
        cfg = copy.deepcopy(self)
        if seed is not None:
            cfg.seed = int(seed)
        if out is not None:
            cfg.out = Path(out)
        return cfg

    def snapshot(self) -> dict:
        """Plain-data view, stored inside checkpoints."""
        return {
            "interactions": str(self.interactions),
            "walk": {"p": self.walk.p, "q": self.walk.q, "walk_length": self.walk.walk_length,
                     "walks_per_node": self.walk.walks_per_node},
            "embedding": vars(self.embedding).copy(),
            "interest": {"K": self.interest.K, "hidden_dims": self.interest.hidden_dims},
            "context": {"cross_depth": self.schema.cross_depth,
                        "fields": [[role, f.name, f.kind, str(f.path)] for role, f in self.schema.fields()]},
            "train": {k: v for k, v in vars(self.train).items() if k != "seed"},
            "eval": {"negatives": self.eval.n_eval_negatives, "cutoffs": list(self.eval.cutoffs)},
            "seed": self.seed,
        }


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
    cp.optionxform = str  # keep field names as written
    return cp


def _field_specs(cp, role: str, base: Path) -> list[FieldSpec]:
    section = f"context.{role}"
    if not cp.has_section(section):
        return []
    specs = []
    for name, value in cp.items(section):
        parts = value.split(None, 1)
        if len(parts) != 2:
            raise ConfigError(f"[{section}] {name}: expected 'kind path', got {value!r}")
        kind, path = parts
        if kind not in FEATURE_KINDS:
            raise ConfigError(f"[{section}] {name}: unknown kind {kind!r}; expected one of {FEATURE_KINDS}")
        specs.append(FieldSpec(name, kind, str(_resolve(base, path.strip()))))
    return specs


def _resolve(base: Path, path: str) -> Path:
    p = Path(path).expanduser()
    return p if p.is_absolute() else (base / p)


def parse_config(text: str, base: Path | str = ".", source: Path | None = None) -> RunConfig:
    cp = _parser()
    cp.read_string(DEFAULTS_TEXT)
    defaults_fields = {r: dict(cp.items(f"context.{r}")) for r in ROLES}
    try:
        user = _parser()
        user.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}".replace("\n", " ")) from None
    known = set(cp.sections())
    for section in user.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in user.items(section):
            if not section.startswith("context.") and not cp.has_option(section, key):
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            cp.set(section, key, value)
    base = Path(base)
    try:
        hidden = cp.get("interest", "hidden_dims").strip()
        return RunConfig(
            interactions=_resolve(base, cp.get("data", "interactions")),
            fmt=cp.get("data", "format"),
            walk=WalkConfig(cp.getfloat("walk", "p"), cp.getfloat("walk", "q"),
                            cp.getint("walk", "walk_length"), cp.getint("walk", "walks_per_node")),
            embedding=EmbeddingConfig(cp.getint("embedding", "dim"), cp.getint("embedding", "epochs"),
                                      cp.getfloat("embedding", "lr"), cp.getint("embedding", "batch_size")),
            interest=InterestConfig(cp.getint("interest", "K"), _ints(hidden) if hidden else None),
            schema=ContextSchema(*(_field_specs(cp, r, base) for r in ROLES),
                                 cross_depth=cp.getint("context", "cross_depth")),
            train=TrainConfig(cp.getint("train", "batch_size"), cp.getint("train", "negatives"),
                              cp.getfloat("train", "lr"), cp.getfloat("train", "l2"),
                              cp.getint("train", "epochs")),
            eval=EvalConfig(cp.getint("eval", "negatives"), _ints(cp.get("eval", "cutoffs"))),
            variants=_variants(cp.get("eval", "variants")),
            seed=cp.getint("run", "seed"),
            out=_resolve(base, cp.get("run", "out")),
            source=source,
        )
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from None


def _variants(text: str) -> list[str]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in names if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variant {bad[0]!r}; expected some of {VARIANTS}")
    return names


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.resolve().parent, path)


def default_config_text() -> str:
    return DEFAULTS_TEXT
