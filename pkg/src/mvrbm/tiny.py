"""Random tiny models and records, shared by gradcheck and the tests."""

from __future__ import annotations

import numpy as np

from .model import ModelParams
from .schema import (
    Binary,
    Categorical,
    Gaussian,
    MixedRecord,
    ReplicatedSoftmax,
    VisibleSchema,
)


def random_discrete_schema(
    rng: np.random.Generator,
    max_units: int = 4,
    allow_rs: bool = True,
) -> VisibleSchema:
    """A small schema of binary/categorical units, sometimes with one
    replicated-softmax block (the oracle-supported discrete types)."""
    n_units = int(rng.integers(1, max_units + 1))
    units = []
    rs_used = False
    for i in range(n_units):
        kinds = ["binary", "categorical"]
        if allow_rs and not rs_used:
            kinds.append("replicated_softmax")
        kind = kinds[rng.integers(0, len(kinds))]
        if kind == "binary":
            units.append((f"u{i}", Binary()))
        elif kind == "categorical":
            units.append((f"u{i}", Categorical(m=int(rng.integers(2, 5)))))
        else:
            units.append((f"u{i}", ReplicatedSoftmax(v=int(rng.integers(2, 5)))))
            rs_used = True
    return VisibleSchema(units=tuple(units))


def random_mixed_schema(rng: np.random.Generator, max_units: int = 4) -> VisibleSchema:
    """Like random_discrete_schema but gaussian units may appear too."""
    n_units = int(rng.integers(1, max_units + 1))
    units = []
    rs_used = False
    for i in range(n_units):
        kinds = ["binary", "categorical", "gaussian"]
        if not rs_used:
            kinds.append("replicated_softmax")
        kind = kinds[rng.integers(0, len(kinds))]
        if kind == "binary":
            units.append((f"u{i}", Binary()))
        elif kind == "gaussian":
            sigma = float(rng.uniform(0.5, 2.0))
            units.append((f"u{i}", Gaussian(sigma=sigma)))
        elif kind == "categorical":
            units.append((f"u{i}", Categorical(m=int(rng.integers(2, 5)))))
        else:
            units.append((f"u{i}", ReplicatedSoftmax(v=int(rng.integers(2, 5)))))
            rs_used = True
    return VisibleSchema(units=tuple(units))


def random_params(
    schema: VisibleSchema,
    n_hidden: int,
    rng: np.random.Generator,
    scale: float = 0.5,
) -> ModelParams:
    c = schema.total_columns
    return ModelParams(
        a=rng.normal(0.0, scale, size=c),
        b=rng.normal(0.0, scale, size=n_hidden),
        w=rng.normal(0.0, scale, size=(c, n_hidden)),
    )


def random_record(
    schema: VisibleSchema,
    rng: np.random.Generator,
    rs_tokens: int | None = None,
    poisson_total: int = 6,
) -> MixedRecord:
    values = []
    for _, unit in schema.units:
        if unit.kind == "binary":
            values.append(int(rng.integers(0, 2)))
        elif unit.kind == "gaussian":
            values.append(float(rng.normal(0.0, 1.0)))
        elif unit.kind == "categorical":
            values.append(int(rng.integers(0, unit.m)))
        elif unit.kind == "constrained_poisson":
            counts = rng.multinomial(poisson_total, np.full(unit.v, 1.0 / unit.v))
            values.append(tuple(int(c) for c in counts))
        elif unit.kind == "replicated_softmax":
            d = rs_tokens if rs_tokens is not None else int(rng.integers(1, 5))
            values.append(tuple(int(t) for t in rng.integers(0, unit.v, size=d)))
    return MixedRecord(values=tuple(values))
