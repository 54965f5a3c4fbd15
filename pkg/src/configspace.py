"""
Configuration Space

Tunable parameter definitions, seeded sampling, validation, and the numeric
encoding consumed by the surrogate models.

Encoding layout:
- continuous / integer -> one coordinate in [0, 1] (log-space first when log_scale)
- categorical          -> one-hot block, one coordinate per choice
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from .errors import DomainError, ValidationError
from .seeding import stable_hash

KINDS = ("continuous", "integer", "categorical")


@dataclass(frozen=True)
class ParameterDef:
    """One tunable knob (e.g. enable_bitmapscan)."""
    name: str
    kind: str
    lower: Optional[float] = None
    upper: Optional[float] = None
    choices: Tuple[str, ...] = ()
    log_scale: bool = False
    default: Any = None

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name.isidentifier():
            raise ValidationError(f"Parameter name must be an identifier, got {self.name!r}")
        if self.kind not in KINDS:
            raise ValidationError(f"{self.name}: unknown kind {self.kind!r}, expected one of {KINDS}")

        if self.kind == "categorical":
            choices = tuple(str(c) for c in self.choices)
            if len(set(choices)) < 2 or len(set(choices)) != len(choices):
                raise ValidationError(f"{self.name}: categorical needs >= 2 distinct choices")
            if self.lower is not None or self.upper is not None or self.log_scale:
                raise ValidationError(f"{self.name}: categorical takes no bounds or log_scale")
            object.__setattr__(self, "choices", choices)
        else:
            if self.lower is None or self.upper is None:
                raise ValidationError(f"{self.name}: {self.kind} needs lower and upper bounds")
            lower, upper = float(self.lower), float(self.upper)
            if not (math.isfinite(lower) and math.isfinite(upper)) or lower >= upper:
                raise ValidationError(f"{self.name}: requires finite lower < upper, got [{lower}, {upper}]")
            if self.log_scale and lower <= 0:
                raise ValidationError(f"{self.name}: log_scale requires lower > 0")
            if self.kind == "integer":
                if not (lower.is_integer() and upper.is_integer()):
                    raise ValidationError(f"{self.name}: integer bounds must be whole numbers")
                lower, upper = int(lower), int(upper)
            if self.choices:
                raise ValidationError(f"{self.name}: only categorical parameters take choices")
            object.__setattr__(self, "lower", lower)
            object.__setattr__(self, "upper", upper)

        # Missing default: midpoint (geometric if log-scale), first choice for categorical
        default = self.midpoint() if self.default is None else self.canonical(self.default)
        if not self.contains(default):
            raise ValidationError(f"{self.name}: default {self.default!r} outside the domain")
        object.__setattr__(self, "default", default)

    @property
    def encoded_width(self) -> int:
        return len(self.choices) if self.kind == "categorical" else 1

    def midpoint(self) -> Any:
        if self.kind == "categorical":
            return self.choices[0]
        if self.log_scale:
            mid = math.sqrt(self.lower * self.upper)
        else:
            mid = (self.lower + self.upper) / 2.0
        return int(np.rint(mid)) if self.kind == "integer" else float(mid)

    def canonical(self, value: Any) -> Any:
        """Cast a raw value to the parameter's Python type."""
        if self.kind == "categorical":
            return str(value)
        if isinstance(value, bool):
            raise ValidationError(f"{self.name}: booleans are not numeric values")
        try:
            number = float(value)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"{self.name}: cannot interpret {value!r} ({e})")
        if self.kind == "integer":
            if not number.is_integer():
                raise ValidationError(f"{self.name}: {value!r} is not an integer")
            return int(number)
        return number

    def contains(self, value: Any) -> bool:
        if self.kind == "categorical":
            return value in self.choices
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            return False
        if not math.isfinite(value):
            return False
        return self.lower <= value <= self.upper

    def to_unit(self, value: Any) -> float:
        """Normalize a numeric value to [0, 1]."""
        if self.log_scale:
            return (math.log(value) - math.log(self.lower)) / (math.log(self.upper) - math.log(self.lower))
        return (value - self.lower) / (self.upper - self.lower)

    def from_unit(self, u: float) -> Any:
        """Inverse of to_unit; integers round half-to-even."""
        u = min(max(float(u), 0.0), 1.0)
        if self.log_scale:
            value = math.exp(math.log(self.lower) + u * (math.log(self.upper) - math.log(self.lower)))
        else:
            value = self.lower + u * (self.upper - self.lower)
        if self.kind == "integer":
            return int(min(max(np.rint(value), self.lower), self.upper))
        return float(min(max(value, self.lower), self.upper))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """
        Draw n raw values (choice indices for categorical).

        Integers are drawn continuously over [lower - 0.5, upper + 0.5] and rounded
        half-to-even, so both endpoints keep their share of mass.
        """
        if self.kind == "categorical":
            return rng.integers(0, len(self.choices), size=n)
        if self.log_scale:
            values = np.exp(rng.uniform(math.log(self.lower), math.log(self.upper), size=n))
        elif self.kind == "integer":
            values = rng.uniform(self.lower - 0.5, self.upper + 0.5, size=n)
        else:
            values = rng.uniform(self.lower, self.upper, size=n)
        if self.kind == "integer":
            values = np.clip(np.rint(values), self.lower, self.upper)
        return values

    def to_dict(self) -> Dict[str, Any]:
        data = {"name": self.name, "kind": self.kind}
        if self.kind == "categorical":
            data["choices"] = list(self.choices)
        else:
            data.update({"lower": self.lower, "upper": self.upper, "log_scale": self.log_scale})
        data["default"] = self.default
        return data


@dataclass(frozen=True)
class Configuration:
    """A point in a ConfigSpace. config_id is a content hash of the values."""
    config_id: int
    values: Mapping[str, Any] = field(compare=False)

    def __hash__(self):
        return hash(self.config_id)

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.values)


def compute_config_id(values: Mapping[str, Any]) -> int:
    """Stable 64-bit content hash, independent of key order."""
    return stable_hash(dict(values))


class ConfigSpace:
    """Ordered, immutable set of parameters."""

    def __init__(self, parameters: Iterable[ParameterDef]):
        self._parameters = tuple(parameters)
        names = [p.name for p in self._parameters]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValidationError(f"Duplicate parameter names: {duplicates}")
        self._index = {p.name: p for p in self._parameters}

    @property
    def parameters(self) -> Tuple[ParameterDef, ...]:
        return self._parameters

    @property
    def names(self) -> List[str]:
        return [p.name for p in self._parameters]

    @property
    def encoded_width(self) -> int:
        return sum(p.encoded_width for p in self._parameters)

    def __len__(self) -> int:
        return len(self._parameters)

    def __iter__(self) -> Iterator[ParameterDef]:
        return iter(self._parameters)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> ParameterDef:
        return self._index[name]

    def validate(self, values: Mapping[str, Any]) -> Dict[str, Any]:
        """Return canonical values in parameter order, or raise ValidationError."""
        unknown = sorted(set(values) - set(self._index))
        if unknown:
            raise ValidationError(f"Unknown parameters: {unknown}")
        missing = [n for n in self.names if n not in values]
        if missing:
            raise ValidationError(f"Missing parameters: {missing}")
        canonical = {}
        for param in self._parameters:
            value = param.canonical(values[param.name])
            if not param.contains(value):
                raise ValidationError(f"{param.name}={values[param.name]!r} outside the domain")
            canonical[param.name] = value
        return canonical

    def make_config(self, values: Mapping[str, Any]) -> Configuration:
        canonical = self.validate(values)
        return Configuration(config_id=compute_config_id(canonical), values=canonical)

    def to_dict(self) -> Dict[str, Any]:
        return {"parameters": [p.to_dict() for p in self._parameters]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ConfigSpace":
        if "parameters" not in data:
            raise ValidationError("Space document needs a 'parameters' list")
        params = []
        for entry in data["parameters"]:
            params.append(ParameterDef(
                name=entry.get("name"),
                kind=entry.get("kind"),
                lower=entry.get("lower"),
                upper=entry.get("upper"),
                choices=tuple(entry.get("choices") or ()),
                log_scale=bool(entry.get("log_scale", False)),
                default=entry.get("default"),
            ))
        return cls(params)


# ============= OPERATIONS =============

def sample_random(space: ConfigSpace, rng_seed: int, n: int) -> List[Configuration]:
    """n seeded random configurations; log-scale parameters uniform in log space."""
    if len(space) == 0:
        raise DomainError("Cannot sample from an empty space")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")

    rng = np.random.default_rng(rng_seed)
    columns = {p.name: p.sample(rng, n) for p in space}
    configs = []
    for i in range(n):
        values = {}
        for p in space:
            raw = columns[p.name][i]
            if p.kind == "categorical":
                values[p.name] = p.choices[int(raw)]
            elif p.kind == "integer":
                values[p.name] = int(raw)
            else:
                values[p.name] = float(raw)
        configs.append(Configuration(config_id=compute_config_id(values), values=values))
    return configs


def sample_encoded(space: ConfigSpace, rng: np.random.Generator, n: int) -> np.ndarray:
    """n random configurations directly in encoded form (rows decode to valid configs)."""
    if len(space) == 0:
        raise DomainError("Cannot sample from an empty space")
    matrix = np.zeros((n, space.encoded_width))
    col = 0
    for p in space:
        raw = p.sample(rng, n)
        if p.kind == "categorical":
            matrix[np.arange(n), col + raw.astype(int)] = 1.0
        elif p.log_scale:
            matrix[:, col] = (np.log(raw) - math.log(p.lower)) / (math.log(p.upper) - math.log(p.lower))
        else:
            matrix[:, col] = (raw - p.lower) / (p.upper - p.lower)
        col += p.encoded_width
    return np.clip(matrix, 0.0, 1.0)


def default_config(space: ConfigSpace) -> Configuration:
    return space.make_config({p.name: p.default for p in space})


def encode(space: ConfigSpace, config: Configuration) -> np.ndarray:
    """Fixed-width numeric vector for a configuration."""
    values = space.validate(config.values)
    vector = np.zeros(space.encoded_width)
    col = 0
    for p in space:
        value = values[p.name]
        if p.kind == "categorical":
            vector[col + p.choices.index(value)] = 1.0
        else:
            vector[col] = p.to_unit(value)
        col += p.encoded_width
    return vector


def decode(space: ConfigSpace, vector: Iterable[float]) -> Configuration:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (space.encoded_width,):
        raise ValidationError(f"Expected vector of width {space.encoded_width}, got {vector.shape}")
    values = {}
    col = 0
    for p in space:
        if p.kind == "categorical":
            block = vector[col:col + p.encoded_width]
            values[p.name] = p.choices[int(np.argmax(block))]
        else:
            values[p.name] = p.from_unit(vector[col])
        col += p.encoded_width
    return space.make_config(values)
