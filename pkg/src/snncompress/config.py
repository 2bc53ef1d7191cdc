"""Pipeline configuration: typed INI sections with unknown keys rejected.

Schema (section -> keys, defaults in parentheses)::

    [run]        seed (0), batch_size (64), eval_repeats (5),
                 stages (fp32-train, cat, fsc-prune, finetune, quantize-codebook, export)
    [data]       kind (synthetic | idx), classes (3), channels (3), height (8), width (8),
                 noise (0.7), train_per_class (200), test_per_class (100),
                 idx_images, idx_labels, idx_test_images, idx_test_labels, test_fraction (0.2)
    [arch]       blocks (conv16, conv32), kernel (3), padding (1), pool (true), init_gain (2.0)
    [snn]        beta (0.5), u_thr (1.0), t_steps (4), surrogate_alpha (2.0), readout (mean)
    [cat]        m (4), bitwidth (8), beta_commit (0.5), codebook_task_grad (true),
                 quant_mode (paper-exact), reseed_dead (true)
    [prune]      criterion (fsc), ratio (0.3), calib_batches (4)
    [ternary]    threshold_frac (0.05)
    [cluster]    qat_bits (8), snap_finetune_frac (0.1)
    [deploy]     e_mac_pj (4.6), e_ac_pj (0.9), spike_rate (0.2), latency_batches (3),
                 size_mode (paper), profile (truenorth-like)
    [stage.NAME] epochs, lr, weight_decay  for NAME in ann, fp32-train, qat, cat,
                 ternary, finetune
"""

import configparser
import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field

from .data import DataSpec
from .errors import ContractError

STAGE_KINDS = ("fp32-train", "qat", "cluster", "cat", "fsc-prune", "ternary", "finetune",
               "quantize-codebook", "export")
TRAIN_STAGES = ("ann", "fp32-train", "qat", "cat", "ternary", "finetune")


@dataclass
class RunSection:
    seed: int = 0
    batch_size: int = 64
    eval_repeats: int = 5
    stages: tuple = ("fp32-train", "cat", "fsc-prune", "finetune", "quantize-codebook", "export")


@dataclass
class ArchSection:
    blocks: tuple = ("conv16", "conv32")
    kernel: int = 3
    padding: int = 1
    pool: bool = True
    init_gain: float = 2.0

    def block_list(self):
        out = []
        for b in self.blocks:
            for kind in ("conv", "dense"):
                if b.startswith(kind) and b[len(kind):].isdigit():
                    out.append((kind, int(b[len(kind):])))
                    break
            else:
                raise ContractError(f"bad block spec {b!r}: expected convN or denseN")
        return out


@dataclass
class SnnSection:
    beta: float = 0.5
    u_thr: float = 1.0
    t_steps: int = 4
    surrogate_alpha: float = 2.0
    readout: str = "mean"


@dataclass
class CatSection:
    m: int = 4
    bitwidth: int = 8
    beta_commit: float = 0.5
    codebook_task_grad: bool = True
    quant_mode: str = "paper-exact"
    reseed_dead: bool = True


@dataclass
class PruneSection:
    criterion: str = "fsc"
    ratio: float = 0.3
    calib_batches: int = 4


@dataclass
class TernarySection:
    threshold_frac: float = 0.05


@dataclass
class ClusterSection:
    qat_bits: int = 8
    snap_finetune_frac: float = 0.1


@dataclass
class DeploySection:
    e_mac_pj: float = 4.6
    e_ac_pj: float = 0.9
    spike_rate: float = 0.2
    latency_batches: int = 3
    size_mode: str = "paper"
    profile: str = "truenorth-like"


@dataclass
class StageSection:
    epochs: int = 0
    lr: float = 1e-4
    weight_decay: float = 1e-5


def _default_stages():
    return {
        "ann": StageSection(30, 1e-2),
        "fp32-train": StageSection(30, 1e-2),
        "qat": StageSection(15, 1e-3),
        "cat": StageSection(15, 1e-4),
        "ternary": StageSection(15, 1e-3),
        "finetune": StageSection(15, 1e-4),
    }


@dataclass
class PipelineConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSpec = field(default_factory=DataSpec)
    arch: ArchSection = field(default_factory=ArchSection)
    snn: SnnSection = field(default_factory=SnnSection)
    cat: CatSection = field(default_factory=CatSection)
    prune: PruneSection = field(default_factory=PruneSection)
    ternary: TernarySection = field(default_factory=TernarySection)
    cluster: ClusterSection = field(default_factory=ClusterSection)
    deploy: DeploySection = field(default_factory=DeploySection)
    stages: dict = field(default_factory=_default_stages)

    def validate(self):
        if not self.run.stages:
            raise ContractError("[run] stages must list at least one stage")
        for s in self.run.stages:
            if s not in STAGE_KINDS:
                raise ContractError(f"[run] stages: unknown stage {s!r} (known: {', '.join(STAGE_KINDS)})")
        if self.run.eval_repeats < 1:
            raise ContractError("[run] eval_repeats must be >= 1")
        if self.run.batch_size < 1:
            raise ContractError("[run] batch_size must be >= 1")
        if not 0 <= self.prune.ratio < 1:
            raise ContractError(f"[prune] ratio must lie in [0, 1), got {self.prune.ratio}")
        if self.prune.criterion not in ("fsc", "sca", "mag", "oracle"):
            raise ContractError(f"[prune] unknown criterion {self.prune.criterion!r}")
        if self.cat.m < 2:
            raise ContractError("[cat] m must be >= 2")
        if self.cat.bitwidth not in (2, 4, 8):
            raise ContractError("[cat] bitwidth must be 2, 4 or 8")
        if self.cat.quant_mode not in ("paper-exact", "resolution-preserving"):
            raise ContractError(f"[cat] unknown quant_mode {self.cat.quant_mode!r}")
        if self.deploy.size_mode not in ("paper", "index"):
            raise ContractError(f"[deploy] size_mode must be 'paper' or 'index'")
        self.arch.block_list()
        return self

    def stage(self, name: str) -> StageSection:
        return self.stages[name]

    def hash(self) -> str:
        return hashlib.sha256(to_text(self).encode()).hexdigest()[:16]


_SECTIONS = ("run", "data", "arch", "snn", "cat", "prune", "ternary", "cluster", "deploy")


def _convert(raw: str, typ, where: str):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is tuple:
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        return typ(raw.strip())
    except ValueError as exc:
        raise ContractError(f"{where}: cannot read {raw!r} as {typ.__name__}") from exc


def _fill(obj, items, where: str):
    hints = typing.get_type_hints(type(obj))
    for key, raw in items:
        if key not in hints:
            raise ContractError(f"{where}: unknown key {key!r}")
        setattr(obj, key, _convert(raw, hints[key], f"{where}.{key}"))


def parse_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ContractError(f"malformed config: {exc}") from exc
    cfg = PipelineConfig()
    for section in parser.sections():
        items = parser.items(section)
        if section in _SECTIONS:
            _fill(getattr(cfg, section), items, f"[{section}]")
        elif section.startswith("stage."):
            name = section[len("stage."):]
            if name not in TRAIN_STAGES:
                raise ContractError(f"[{section}]: unknown training stage {name!r}")
            _fill(cfg.stages[name], items, f"[{section}]")
        else:
            raise ContractError(f"unknown config section [{section}]")
    return cfg.validate()


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(v)
    return repr(v) if isinstance(v, float) else str(v)


def to_text(cfg: PipelineConfig) -> str:
    """Canonical text form; parse_config(to_text(c)) reproduces c."""
    lines = []
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        for f in dataclasses.fields(getattr(cfg, section)):
            lines.append(f"{f.name} = {_fmt(getattr(getattr(cfg, section), f.name))}")
        lines.append("")
    for name in TRAIN_STAGES:
        lines.append(f"[stage.{name}]")
        for f in dataclasses.fields(StageSection):
            lines.append(f"{f.name} = {_fmt(getattr(cfg.stages[name], f.name))}")
        lines.append("")
    return "\n".join(lines)
