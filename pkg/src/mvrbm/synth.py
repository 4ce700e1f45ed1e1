"""Planted-concept synthetic mixed data.

Stands in for real corpora: each concept owns a gaussian prototype, a
preferred option per categorical unit, and a token distribution
concentrated on its own slice of the vocabulary.  Gaussian columns are
standardised over the generated dataset (zero mean, unit variance), so
the emitted schema uses sigma = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import UsageError
from .schema import (
    Categorical,
    Gaussian,
    MixedRecord,
    ReplicatedSoftmax,
    VisibleSchema,
)


@dataclass
class SyntheticSpec:
    n_concepts: int = 5
    records_per_concept: int = 100
    n_gaussian: int = 8
    n_categorical: int = 2
    categorical_options: int = 6
    vocab_size: int = 30
    tokens_per_record: int = 10
    concept_separation: float = 2.0
    gaussian_noise: float = 1.0
    categorical_flip: float = 0.1
    token_noise: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.n_concepts < 1 or self.records_per_concept < 1:
            raise UsageError("need at least one concept and one record per concept")
        if self.n_gaussian < 0 or self.n_categorical < 0:
            raise UsageError("unit counts must be non-negative")
        if self.n_categorical > 0 and self.categorical_options < 2:
            raise UsageError("categorical units need at least 2 options")
        if self.vocab_size < 1 or self.tokens_per_record < 0:
            raise UsageError("vocabulary must be >= 1 and token count >= 0")
        if not (0.0 <= self.categorical_flip <= 1.0 and 0.0 <= self.token_noise <= 1.0):
            raise UsageError("noise probabilities must lie in [0, 1]")
        if self.n_gaussian + self.n_categorical == 0 and self.tokens_per_record == 0:
            raise UsageError("spec generates empty records")


def build_schema(spec: SyntheticSpec) -> VisibleSchema:
    units = []
    for i in range(spec.n_gaussian):
        units.append((f"g{i}", Gaussian(sigma=1.0)))
    for i in range(spec.n_categorical):
        units.append((f"c{i}", Categorical(m=spec.categorical_options)))
    if spec.tokens_per_record > 0:
        units.append(("tokens", ReplicatedSoftmax(v=spec.vocab_size)))
    return VisibleSchema(units=tuple(units))


def generate(spec: SyntheticSpec):
    """Return (schema, records, concept_labels), reproducible from the seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    schema = build_schema(spec)
    n = spec.n_concepts * spec.records_per_concept

    gauss_proto = rng.normal(
        0.0, spec.concept_separation, size=(spec.n_concepts, spec.n_gaussian)
    )
    cat_proto = rng.integers(
        0, spec.categorical_options, size=(spec.n_concepts, spec.n_categorical)
    )

    token_proto = None
    if spec.tokens_per_record > 0:
        # each concept concentrates on its own slice of the vocabulary,
        # blended with a uniform background by token_noise
        token_proto = np.full((spec.n_concepts, spec.vocab_size), 0.0)
        per = max(1, spec.vocab_size // spec.n_concepts)
        for c in range(spec.n_concepts):
            lo = (c * per) % spec.vocab_size
            idx = [(lo + t) % spec.vocab_size for t in range(per)]
            token_proto[c, idx] = 1.0
        token_proto /= token_proto.sum(axis=1, keepdims=True)
        uniform = np.full(spec.vocab_size, 1.0 / spec.vocab_size)
        token_proto = (1.0 - spec.token_noise) * token_proto + spec.token_noise * uniform

    labels = []
    gauss_vals = np.zeros((n, spec.n_gaussian))
    cat_vals = np.zeros((n, spec.n_categorical), dtype=int)
    token_vals: list[tuple[int, ...]] = []

    r = 0
    for c in range(spec.n_concepts):
        for _ in range(spec.records_per_concept):
            labels.append(c)
            if spec.n_gaussian:
                gauss_vals[r] = gauss_proto[c] + rng.normal(
                    0.0, spec.gaussian_noise, size=spec.n_gaussian
                )
            for j in range(spec.n_categorical):
                if rng.random() < spec.categorical_flip:
                    cat_vals[r, j] = rng.integers(0, spec.categorical_options)
                else:
                    cat_vals[r, j] = cat_proto[c, j]
            if spec.tokens_per_record > 0:
                counts = rng.multinomial(spec.tokens_per_record, token_proto[c])
                tokens = np.repeat(np.arange(spec.vocab_size), counts)
                token_vals.append(tuple(int(t) for t in tokens))
            r += 1

    if spec.n_gaussian:
        mean = gauss_vals.mean(axis=0)
        std = gauss_vals.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        gauss_vals = (gauss_vals - mean) / std

    records = []
    for r in range(n):
        values: list = [float(v) for v in gauss_vals[r]]
        values.extend(int(v) for v in cat_vals[r])
        if spec.tokens_per_record > 0:
            values.append(token_vals[r])
        records.append(MixedRecord(values=tuple(values)))
    return schema, records, labels
