"""Model, hardware and task descriptors.

Sizes are integer bytes throughout; ``GB`` and ``MB`` in configuration text
are powers of ten.  Configuration documents are YAML with an optional
top-level ``profile`` key naming a built-in base, then ``model`` and
``hardware`` sections whose keys are the dataclass field names below::

    profile: mixtral-sec41
    model:
      top_k: 2
    hardware:
      gpu_mem_bytes: 30GB
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Any, Mapping

import yaml


class ProfileError(ValueError):
    """Malformed or invalid configuration."""


class Precision(str, enum.Enum):
    P4 = "P4"
    P8 = "P8"
    P16 = "P16"

    @property
    def bits(self) -> int:
        return int(self.value[1:])


class Preference(str, enum.Enum):
    THROUGHPUT = "throughput"
    QUALITY = "quality"


_SUFFIXES = {"B": 1, "KB": 10**3, "MB": 10**6, "GB": 10**9, "TB": 10**12}

# measured on the reference testbed: one 336 MB expert in 27.35 ms
REFERENCE_EXPERT_BYTES = 336_000_000
REFERENCE_TRANSFER_S = 0.02735
DEFAULT_TRANSFER_BW = REFERENCE_EXPERT_BYTES / REFERENCE_TRANSFER_S
DEFAULT_GPU_MEM = 80 * 10**9

CALIBRATION_TPS = 13.0
CALIBRATION_NONEXPERT_FRACTION = 0.1


def parse_size(value: Any) -> int:
    """Parse ``336MB``, ``3.16 GB``, ``84000000`` or an int into bytes."""
    if isinstance(value, bool):
        raise ProfileError(f"not a size: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not value.is_integer():
            raise ProfileError(f"size must be whole bytes: {value!r}")
        return int(value)
    text = str(value).strip().upper().replace(" ", "")
    for suffix in sorted(_SUFFIXES, key=len, reverse=True):
        if text.endswith(suffix):
            number, scale = text[: -len(suffix)], _SUFFIXES[suffix]
            break
    else:
        number, scale = text, 1
    try:
        exact = Decimal(number) * scale
    except InvalidOperation:
        raise ProfileError(f"not a size: {value!r}") from None
    if exact != exact.to_integral_value():
        raise ProfileError(f"size must be whole bytes: {value!r}")
    return int(exact)


def format_gb(n_bytes: int | float) -> str:
    return f"{n_bytes / 1e9:.3f} GB"


def calibrated_latencies(
    num_layers: int,
    top_k: int,
    target_tps: float = CALIBRATION_TPS,
    nonexpert_fraction: float = CALIBRATION_NONEXPERT_FRACTION,
) -> tuple[float, float]:
    """(compute_latency16_s, nonexpert_latency_s) hitting ``target_tps``
    when every expert is GPU-resident at 16 bit."""
    token_s = 1.0 / target_tps
    nonexpert = nonexpert_fraction * token_s
    per_activation = (token_s - nonexpert) / (num_layers * top_k)
    return per_activation, nonexpert


@dataclass(frozen=True)
class ModelProfile:
    num_layers: int
    experts_per_layer: int
    size_nonexpert_bytes: int
    size_expert16_bytes: int
    top_k: int = 2
    quant_ratio: float = 4.0
    compute_latency16_s: float | None = None
    compute_penalty4: float = 1.15
    nonexpert_latency_s: float | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        for attr in ("num_layers", "experts_per_layer", "top_k",
                     "size_nonexpert_bytes", "size_expert16_bytes"):
            if not isinstance(getattr(self, attr), int) or isinstance(getattr(self, attr), bool):
                raise ProfileError(f"{attr} must be an integer")
        if self.num_layers < 1:
            raise ProfileError("num_layers must be >= 1")
        if self.experts_per_layer < 1:
            raise ProfileError("experts_per_layer must be >= 1")
        if not 1 <= self.top_k <= self.experts_per_layer:
            raise ProfileError("top_k must satisfy 1 <= top_k <= experts_per_layer")
        if self.size_nonexpert_bytes <= 0 or self.size_expert16_bytes <= 0:
            raise ProfileError("byte sizes must be > 0")
        # quant_ratio = 1 is accepted for identity-size experiments
        if not self.quant_ratio >= 1:
            raise ProfileError("quant_ratio must be >= 1")
        if not self.compute_penalty4 >= 1:
            raise ProfileError("compute_penalty4 must be >= 1")
        compute, nonexpert = calibrated_latencies(self.num_layers, self.top_k)
        if self.compute_latency16_s is None:
            object.__setattr__(self, "compute_latency16_s", compute)
        if self.nonexpert_latency_s is None:
            object.__setattr__(self, "nonexpert_latency_s", nonexpert)
        if self.compute_latency16_s < 0 or self.nonexpert_latency_s < 0:
            raise ProfileError("latencies must be >= 0")

    @property
    def num_experts(self) -> int:
        return self.num_layers * self.experts_per_layer

    @property
    def size_expert4_bytes(self) -> int:
        return expert_size(self, Precision.P4)

    def fingerprint(self) -> str:
        """Stable short hash of every cost-relevant field."""
        fields = {k: v for k, v in dataclasses.asdict(self).items() if k != "name"}
        blob = json.dumps(fields, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class HardwareProfile:
    gpu_mem_bytes: int = DEFAULT_GPU_MEM
    transfer_bw_bytes_per_s: float = DEFAULT_TRANSFER_BW

    def __post_init__(self) -> None:
        if self.gpu_mem_bytes <= 0:
            raise ProfileError("gpu_mem_bytes must be > 0")
        if not self.transfer_bw_bytes_per_s > 0:
            raise ProfileError("transfer_bw_bytes_per_s must be > 0")

    def with_memory(self, gpu_mem_bytes: int) -> "HardwareProfile":
        return dataclasses.replace(self, gpu_mem_bytes=gpu_mem_bytes)


@dataclass(frozen=True)
class TaskRequest:
    preference: Preference
    n4_target: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "preference", Preference(self.preference))
        if self.seed < 0:
            raise ProfileError("seed must be unsigned")
        if self.preference is Preference.QUALITY and self.n4_target is None:
            raise ProfileError("quality requests need n4_target")
        if self.n4_target is not None and self.n4_target < 0:
            raise ProfileError("n4_target must be >= 0")


def expert_size(profile: ModelProfile, precision: Precision) -> int:
    """Bytes of one expert at ``precision`` (4-bit rounds down)."""
    precision = Precision(precision)
    if precision is Precision.P16:
        return profile.size_expert16_bytes
    if precision is Precision.P4:
        return math.floor(profile.size_expert16_bytes / profile.quant_ratio)
    return profile.size_expert16_bytes // 2


def model_size(
    profile: ModelProfile,
    n4: int,
    nonexpert_precision: Precision = Precision.P16,
    quantized_precision: Precision = Precision.P4,
) -> int:
    """Whole-model bytes with ``n4`` experts quantized, the rest 16-bit.

    ``quantized_precision`` exists so homogeneous 8-bit models can be sized
    too; the mixed 4/16 range uses the default.
    """
    if not 0 <= n4 <= profile.num_experts:
        raise ProfileError(f"n4={n4} outside [0, {profile.num_experts}]")
    divisor = {Precision.P4: 4, Precision.P8: 2, Precision.P16: 1}[Precision(nonexpert_precision)]
    nonexpert = profile.size_nonexpert_bytes // divisor
    low = expert_size(profile, quantized_precision)
    return nonexpert + n4 * low + (profile.num_experts - n4) * profile.size_expert16_bytes


MIXTRAL_SEC41 = ModelProfile(
    name="mixtral-sec41",
    num_layers=32,
    experts_per_layer=8,
    size_nonexpert_bytes=3_160_000_000,
    size_expert16_bytes=336_000_000,
)

# Table-level totals: 94.21 GB at 16 bit and a 26.62 GB all-4-bit-expert
# floor; solving both gives 4.09 GB non-expert and 90.12 GB / 256 per expert.
MIXTRAL_TABLE1 = ModelProfile(
    name="mixtral-table1",
    num_layers=32,
    experts_per_layer=8,
    size_nonexpert_bytes=4_090_000_000,
    size_expert16_bytes=352_031_250,
)

BUILTIN_PROFILES: dict[str, ModelProfile] = {
    MIXTRAL_SEC41.name: MIXTRAL_SEC41,
    MIXTRAL_TABLE1.name: MIXTRAL_TABLE1,
}

_SIZE_KEYS = {"size_nonexpert_bytes", "size_expert16_bytes", "gpu_mem_bytes"}
_INT_KEYS = {"num_layers", "experts_per_layer", "top_k"}
_FLOAT_KEYS = {"quant_ratio", "compute_latency16_s", "compute_penalty4",
               "nonexpert_latency_s", "transfer_bw_bytes_per_s"}


def _coerce(key: str, value: Any) -> Any:
    if key in _SIZE_KEYS:
        return parse_size(value)
    if key == "transfer_bw_bytes_per_s" and isinstance(value, str):
        # bandwidth may be written as "12.285GB" (per second implied)
        return float(parse_size(value.upper().removesuffix("/S")))
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ProfileError(f"{key} must be an integer, got {value!r}")
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ProfileError(f"{key} must be a number, got {value!r}")
        return float(value)
    return value


def _section(doc: Mapping[str, Any], name: str, allowed: set[str]) -> dict[str, Any]:
    raw = doc.get(name) or {}
    if not isinstance(raw, Mapping):
        raise ProfileError(f"section '{name}' must be a mapping")
    unknown = set(raw) - allowed
    if unknown:
        raise ProfileError(f"unknown keys in '{name}': {sorted(unknown)}")
    return {k: _coerce(k, v) for k, v in raw.items()}


def profiles_from_mapping(doc: Mapping[str, Any]) -> tuple[ModelProfile, HardwareProfile]:
    if not isinstance(doc, Mapping):
        raise ProfileError("configuration must be a mapping")
    model_fields = {f.name for f in dataclasses.fields(ModelProfile)} - {"name"}
    hw_fields = {f.name for f in dataclasses.fields(HardwareProfile)}
    model_kw = _section(doc, "model", model_fields)
    hw_kw = _section(doc, "hardware", hw_fields)

    base_name = doc.get("profile")
    if base_name is not None:
        if base_name not in BUILTIN_PROFILES:
            raise ProfileError(f"unknown built-in profile {base_name!r}; "
                               f"choose from {sorted(BUILTIN_PROFILES)}")
        base = BUILTIN_PROFILES[base_name]
        shape_changed = {"num_layers", "top_k"} & set(model_kw)
        if shape_changed:
            # calibrated latencies depend on the shape; recalibrate unless given
            for key in ("compute_latency16_s", "nonexpert_latency_s"):
                model_kw.setdefault(key, None)
        try:
            model = dataclasses.replace(base, **model_kw)
        except TypeError as exc:
            raise ProfileError(str(exc)) from None
    else:
        missing = {"num_layers", "experts_per_layer", "size_nonexpert_bytes",
                   "size_expert16_bytes"} - set(model_kw)
        if missing:
            raise ProfileError(f"model section missing {sorted(missing)} "
                               "(or set 'profile' to a built-in)")
        model = ModelProfile(**model_kw)
    return model, HardwareProfile(**hw_kw)


def load_profiles(document: str) -> tuple[ModelProfile, HardwareProfile]:
    """Parse a YAML configuration document into validated profiles."""
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise ProfileError(f"parse error: {exc}") from None
    if doc is None:
        doc = {}
    return profiles_from_mapping(doc)


def default_profiles() -> tuple[ModelProfile, HardwareProfile]:
    return MIXTRAL_SEC41, HardwareProfile()
