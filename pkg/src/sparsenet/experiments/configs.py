"""Network configurations, one key per column of the architecture table."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from ..layers import DEFAULT_DUTY_ALPHA, round_half_up
from ..tensor import SgdConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DATASETS = {
    # (input channels, height, width), classes
    "mnist": ((1, 28, 28), 10),
    "gsc": ((1, 32, 32), 12),
}

TABLE_COLUMNS = ("L1 F", "L1 sparsity", "L2 F", "L2 sparsity", "L3 N", "L3 sparsity", "Wt sparsity")


class ConfigError(ValueError):
    pass


def parse_percent(value) -> float | None:
    """``"9.3%"`` -> 0.093; numbers are read as percentages too."""
    if value is None or value == "":
        return None
    if isinstance(value, str):
        value = value.strip().rstrip("%")
    try:
        frac = float(value) / 100.0
    except ValueError as exc:
        raise ConfigError(f"not a percentage: {value!r}") from exc
    if not 0 < frac <= 1:
        raise ConfigError(f"percentage outside (0, 100]: {value!r}")
    return frac


def _fmt_percent(frac: float | None) -> str:
    return "" if frac is None else f"{frac * 100:g}%"


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    sparsity: float  # fraction of pooled outputs kept; 1.0 means ReLU
    in_channels: int
    in_size: int
    kernel: int

    @property
    def conv_size(self) -> int:
        return self.in_size - self.kernel + 1

    @property
    def pooled_size(self) -> int:
        return self.conv_size // 2

    @property
    def units(self) -> int:
        return self.filters * self.pooled_size ** 2

    @property
    def k(self) -> int | None:
        return None if self.sparsity >= 1 else round_half_up(self.sparsity * self.units)


@dataclass(frozen=True)
class NetworkConfig:
    name: str
    l1_filters: int
    l1_sparsity: float
    l3_units: int
    l3_sparsity: float
    weight_density: float
    l2_filters: int = 0
    l2_sparsity: float | None = None
    dataset: str = "mnist"
    kernel: int = 5
    boost_strength: float = 1.5
    duty_alpha: float = DEFAULT_DUTY_ALPHA
    training: SgdConfig = field(default_factory=SgdConfig)

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.l1_filters <= 0 or self.l3_units <= 0:
            raise ConfigError("L1 F and L3 N must be positive")
        if self.l2_filters and self.l2_sparsity is None:
            raise ConfigError("L2 F given without L2 sparsity")
        if not self.l2_filters and self.l2_sparsity not in (None, 1.0):
            raise ConfigError("L2 sparsity given without L2 F")
        for frac in (self.l1_sparsity, self.l3_sparsity, self.weight_density, self.l2_sparsity or 1.0):
            if not 0 < frac <= 1:
                raise ConfigError(f"sparsity {frac} outside (0, 1]")
        if self.boost_strength < 0:
            raise ConfigError("boost strength must be >= 0")
        size = self.input_shape[1]
        for conv in self.conv_layers:
            if conv.in_size < conv.kernel or conv.pooled_size < 1:
                raise ConfigError(f"input {size} too small for the convolution stack")
            if conv.k is not None and conv.k < 1:
                raise ConfigError("convolutional sparsity leaves no winners")
        if self.l3_k is not None and self.l3_k < 1:
            raise ConfigError("L3 sparsity leaves no winners")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return DATASETS[self.dataset][0]

    @property
    def classes(self) -> int:
        return DATASETS[self.dataset][1]

    @property
    def conv_layers(self) -> list[ConvSpec]:
        c, size, _ = self.input_shape
        specs = [ConvSpec(self.l1_filters, self.l1_sparsity, c, size, self.kernel)]
        if self.l2_filters:
            first = specs[0]
            specs.append(ConvSpec(self.l2_filters, self.l2_sparsity, first.filters, first.pooled_size, self.kernel))
        return specs

    @property
    def hidden_in(self) -> int:
        return self.conv_layers[-1].units

    @property
    def l3_k(self) -> int | None:
        return None if self.l3_sparsity >= 1 else round_half_up(self.l3_sparsity * self.l3_units)

    @property
    def is_sparse(self) -> bool:
        """True when any layer uses k-winners."""
        return self.l3_k is not None or any(c.k is not None for c in self.conv_layers)

    def dense_counterpart(self) -> "NetworkConfig":
        return replace(self, name=f"{self.name} (dense)", l1_sparsity=1.0,
                       l2_sparsity=1.0 if self.l2_filters else None,
                       l3_sparsity=1.0, weight_density=1.0)

    def table_row(self) -> dict:
        return {
            "L1 F": self.l1_filters,
            "L1 sparsity": _fmt_percent(self.l1_sparsity),
            "L2 F": self.l2_filters or "",
            "L2 sparsity": _fmt_percent(self.l2_sparsity) if self.l2_filters else "",
            "L3 N": self.l3_units,
            "L3 sparsity": _fmt_percent(self.l3_sparsity),
            "Wt sparsity": _fmt_percent(self.weight_density),
        }

    def to_dict(self) -> dict:
        doc = {"name": self.name, "dataset": self.dataset, **self.table_row(),
               "kernel": self.kernel, "boost_strength": self.boost_strength,
               "duty_alpha": self.duty_alpha, "training": asdict(self.training)}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkConfig":
        missing = [c for c in TABLE_COLUMNS if c not in doc and c not in ("L2 F", "L2 sparsity")]
        if missing:
            raise ConfigError(f"config lacks columns: {', '.join(missing)}")
        known = {f.name for f in fields(SgdConfig)}
        train = doc.get("training", {})
        unknown = set(train) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        try:
            return cls(
                name=doc.get("name", "custom"),
                dataset=doc.get("dataset", "mnist"),
                l1_filters=int(doc["L1 F"]),
                l1_sparsity=parse_percent(doc["L1 sparsity"]),
                l2_filters=int(doc.get("L2 F") or 0),
                l2_sparsity=parse_percent(doc.get("L2 sparsity")),
                l3_units=int(doc["L3 N"]),
                l3_sparsity=parse_percent(doc["L3 sparsity"]),
                weight_density=parse_percent(doc["Wt sparsity"]),
                kernel=int(doc.get("kernel", 5)),
                boost_strength=float(doc.get("boost_strength", 1.5)),
                duty_alpha=float(doc.get("duty_alpha", DEFAULT_DUTY_ALPHA)),
                training=SgdConfig(**train),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def builtin_names() -> list[str]:
    root = resources.files(__package__) / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_config(name_or_path) -> NetworkConfig:
    """Load a built-in config by name (``sparse-cnn-2``) or a TOML file path."""
    path = Path(str(name_or_path))
    if path.suffix == ".toml" and path.exists():
        text = path.read_text()
    else:
        key = str(name_or_path).lower().replace(" ", "-")
        if key not in builtin_names():
            raise ConfigError(f"unknown config {name_or_path!r}; available: {', '.join(builtin_names())}")
        text = (resources.files(__package__) / "configs" / f"{key}.toml").read_text()
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{name_or_path}: {exc}") from exc
    return NetworkConfig.from_dict(doc)
