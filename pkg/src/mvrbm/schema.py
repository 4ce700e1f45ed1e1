"""Visible-unit types, record schemas, and typed records.

A schema is an ordered list of named, typed visible units.  Each unit
occupies a contiguous block of weight columns:

    binary               1 column   (bit)
    gaussian             1 column   (real value, noise scale sigma)
    categorical(M)       M columns  (one-hot over M options)
    constrained_poisson(V)  V columns  (count vector, rates tied to its sum)
    replicated_softmax(V)   V columns  (token counts, shared weights)

Records store one typed value per unit.  Replicated-softmax values are
multisets of tokens; only their counts matter, so any token order is
equivalent.  The replication count D of a record is the total number of
replicated-softmax tokens; it scales the hidden bias wherever hidden
pre-activations are formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .exceptions import SchemaError, ValidationError


@dataclass(frozen=True)
class Binary:
    kind = "binary"
    width = 1


@dataclass(frozen=True)
class Gaussian:
    sigma: float = 1.0
    kind = "gaussian"
    width = 1

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise SchemaError(f"gaussian sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class Categorical:
    m: int
    kind = "categorical"

    def __post_init__(self):
        if self.m < 2:
            raise SchemaError(f"categorical needs at least 2 options, got {self.m}")

    @property
    def width(self) -> int:
        return self.m


@dataclass(frozen=True)
class ConstrainedPoisson:
    v: int
    kind = "constrained_poisson"

    def __post_init__(self):
        if self.v < 1:
            raise SchemaError(f"count vocabulary must be >= 1, got {self.v}")

    @property
    def width(self) -> int:
        return self.v


@dataclass(frozen=True)
class ReplicatedSoftmax:
    v: int
    kind = "replicated_softmax"

    def __post_init__(self):
        if self.v < 1:
            raise SchemaError(f"token vocabulary must be >= 1, got {self.v}")

    @property
    def width(self) -> int:
        return self.v


UnitType = Union[Binary, Gaussian, Categorical, ConstrainedPoisson, ReplicatedSoftmax]

_KINDS = {
    "binary": Binary,
    "gaussian": Gaussian,
    "categorical": Categorical,
    "constrained_poisson": ConstrainedPoisson,
    "replicated_softmax": ReplicatedSoftmax,
}


@dataclass(frozen=True)
class VisibleSchema:
    """Ordered, uniquely named visible units defining one record layout."""

    units: tuple[tuple[str, UnitType], ...]

    def __post_init__(self):
        names = [name for name, _ in self.units]
        if len(names) != len(set(names)):
            raise SchemaError("unit names must be unique")
        if not self.units:
            raise SchemaError("schema needs at least one unit")

    @property
    def total_columns(self) -> int:
        return sum(u.width for _, u in self.units)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.units)

    def column_slices(self) -> list[slice]:
        """Per-unit weight-column slices, in schema order."""
        out, start = [], 0
        for _, unit in self.units:
            out.append(slice(start, start + unit.width))
            start += unit.width
        return out

    def unit_index(self, name: str) -> int:
        for i, (n, _) in enumerate(self.units):
            if n == name:
                return i
        raise SchemaError(f"no unit named {name!r}")

    def has_kind(self, kind: str) -> bool:
        return any(u.kind == kind for _, u in self.units)

    def weight_feature_scale(self) -> np.ndarray:
        """Per-column factor turning raw features into hidden-input features.

        1/sigma on gaussian columns, 1 everywhere else.
        """
        s = np.ones(self.total_columns)
        for sl, (_, unit) in zip(self.column_slices(), self.units):
            if unit.kind == "gaussian":
                s[sl] = 1.0 / unit.sigma
        return s

    def to_dict(self) -> dict:
        out = []
        for name, unit in self.units:
            d = {"name": name, "type": unit.kind}
            if unit.kind == "gaussian":
                d["sigma"] = unit.sigma
            elif unit.kind == "categorical":
                d["m"] = unit.m
            elif unit.kind in ("constrained_poisson", "replicated_softmax"):
                d["v"] = unit.v
            out.append(d)
        return {"units": out}

    @staticmethod
    def from_dict(d: dict) -> "VisibleSchema":
        units = []
        for entry in d["units"]:
            kind = entry["type"]
            if kind not in _KINDS:
                raise SchemaError(f"unknown unit type {kind!r}")
            if kind == "gaussian":
                unit = Gaussian(sigma=float(entry.get("sigma", 1.0)))
            elif kind == "categorical":
                unit = Categorical(m=int(entry["m"]))
            elif kind == "constrained_poisson":
                unit = ConstrainedPoisson(v=int(entry["v"]))
            elif kind == "replicated_softmax":
                unit = ReplicatedSoftmax(v=int(entry["v"]))
            else:
                unit = Binary()
            units.append((entry["name"], unit))
        return VisibleSchema(units=tuple(units))


@dataclass
class MixedRecord:
    """One data row: a typed value per schema unit.

    Values by unit kind: bit (0/1) for binary, float for gaussian, option
    index for categorical, a count tuple (length V) for constrained
    poisson, and a token tuple for replicated softmax.
    """

    values: tuple = field(default_factory=tuple)

    def replication_count(self, schema: VisibleSchema) -> int:
        """Total number of replicated-softmax tokens in this record."""
        d = 0
        for value, (_, unit) in zip(self.values, schema.units):
            if unit.kind == "replicated_softmax":
                d += len(value)
        return d


def validate_record(record: MixedRecord, schema: VisibleSchema) -> None:
    """Raise SchemaError/ValidationError unless the record fits the schema.

    Count blocks accept non-negative finite reals, not just integers:
    data records carry integer counts, but mean-rate reconstructions are
    fractional and must survive a record-level Gibbs round trip.
    """
    if len(record.values) != len(schema.units):
        raise SchemaError(
            f"record has {len(record.values)} values, schema has "
            f"{len(schema.units)} units"
        )
    for value, (name, unit) in zip(record.values, schema.units):
        if unit.kind == "binary":
            if value not in (0, 1):
                raise ValidationError(f"{name}: binary value must be 0 or 1, got {value!r}")
        elif unit.kind == "gaussian":
            if not math.isfinite(float(value)):
                raise ValidationError(f"{name}: gaussian value must be finite")
        elif unit.kind == "categorical":
            if not math.isfinite(float(value)) or not (0 <= int(value) < unit.m):
                raise ValidationError(f"{name}: index {value!r} outside [0, {unit.m})")
        elif unit.kind == "constrained_poisson":
            counts = tuple(value)
            if len(counts) != unit.v:
                raise SchemaError(f"{name}: expected {unit.v} counts, got {len(counts)}")
            if any(not math.isfinite(float(c)) or c < 0 for c in counts):
                raise ValidationError(f"{name}: counts must be non-negative and finite")
        elif unit.kind == "replicated_softmax":
            for tok in value:
                if not math.isfinite(float(tok)) or not (0 <= int(tok) < unit.v):
                    raise ValidationError(f"{name}: token {tok!r} outside [0, {unit.v})")


def encode_features(records: list[MixedRecord], schema: VisibleSchema) -> np.ndarray:
    """Stack records into an (n, C) raw feature matrix.

    Binary and gaussian columns hold the raw value, categorical columns the
    one-hot indicator, count blocks the counts.  Gaussian columns are *not*
    divided by sigma here; see VisibleSchema.weight_feature_scale.
    """
    n = len(records)
    x = np.zeros((n, schema.total_columns))
    slices = schema.column_slices()
    for r, record in enumerate(records):
        for value, sl, (_, unit) in zip(record.values, slices, schema.units):
            if unit.kind in ("binary", "gaussian"):
                x[r, sl.start] = float(value)
            elif unit.kind == "categorical":
                x[r, sl.start + int(value)] = 1.0
            elif unit.kind == "constrained_poisson":
                x[r, sl] = np.asarray(value, dtype=float)
            elif unit.kind == "replicated_softmax":
                counts = np.bincount(np.asarray(value, dtype=int), minlength=unit.v)
                x[r, sl] = counts.astype(float)
    return x


def bias_scales(records: list[MixedRecord], schema: VisibleSchema) -> np.ndarray:
    """Per-record hidden-bias multiplier: the replication count D, or 1
    for schemas without replicated-softmax blocks."""
    if not schema.has_kind("replicated_softmax"):
        return np.ones(len(records))
    return np.array([float(r.replication_count(schema)) for r in records])
