"""Energies, conditionals, and samplers for the mixed-variate model.

Conventions used throughout (one binary hidden layer of size K, visible
units per the schema, W of shape columns x K):

  * The joint energy of a record v and hidden bits h is

        E(v, h) = sum_gauss (v_i - a_i)^2 / (2 sigma_i^2)
                  - sum_{non-gauss cols} a_c x_c
                  - D(v) * b.h
                  - x_w(v).(W h)

    where x is the raw feature encoding of the record, x_w the
    hidden-input features (gaussian columns divided by sigma), and D(v)
    the record's replication count (1 when the schema has no
    replicated-softmax block).  Gaussian visible biases act only through
    the quadratic term.

  * Hidden pre-activations are D(v) * b + W^T x_w(v); each hidden unit is
    Bernoulli(logistic(pre)) and the units are conditionally independent.

  * Visible conditionals given h: binary -> Bernoulli(logistic(a + Wh)),
    gaussian -> Normal(a + sigma * Wh, sigma^2), categorical and
    replicated softmax -> softmax over the block, constrained poisson ->
    independent Poisson with rates N * softmax over the block (N is the
    conditioning record's total count, so rates always sum to N).

The constrained-poisson block defines conditionals only; its bilinear
terms are used in the energy as stated but there is no proper joint over
the counts, which is why the exact oracle refuses such schemas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import SchemaError, UsageError, ValidationError
from .schema import MixedRecord, VisibleSchema, bias_scales, encode_features, validate_record


def logistic(x):
    # overflowing exp saturates to exactly 0 or 1, which is what we want
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class ModelParams:
    """Visible biases a (C,), hidden biases b (K,), weights w (C, K)."""

    a: np.ndarray
    b: np.ndarray
    w: np.ndarray

    @property
    def n_hidden(self) -> int:
        return self.b.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.a.copy(), self.b.copy(), self.w.copy())

    def all_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.a))
            and np.all(np.isfinite(self.b))
            and np.all(np.isfinite(self.w))
        )

    def check(self, schema: VisibleSchema) -> None:
        c = schema.total_columns
        if self.a.shape != (c,):
            raise SchemaError(f"a has shape {self.a.shape}, expected ({c},)")
        if self.w.shape != (c, self.n_hidden):
            raise SchemaError(
                f"w has shape {self.w.shape}, expected ({c}, {self.n_hidden})"
            )
        if not self.all_finite():
            raise ValidationError("parameters contain non-finite entries")


def init_params(
    schema: VisibleSchema,
    n_hidden: int,
    rng: np.random.Generator,
    weight_scale: float = 0.01,
) -> ModelParams:
    """Small normal weights, zero biases."""
    c = schema.total_columns
    return ModelParams(
        a=np.zeros(c),
        b=np.zeros(n_hidden),
        w=rng.normal(0.0, weight_scale, size=(c, n_hidden)),
    )


# ---------------------------------------------------------------------------
# Batch encoding


@dataclass
class EncodedBatch:
    """Records flattened into column space for vectorised work.

    x      (n, C) raw features (gaussian columns hold the raw value)
    scale  (n,)   hidden-bias multiplier per record
    """

    x: np.ndarray
    scale: np.ndarray
    schema: VisibleSchema

    def __len__(self) -> int:
        return self.x.shape[0]

    def weight_features(self) -> np.ndarray:
        return self.x * self.schema.weight_feature_scale()[None, :]

    def take(self, idx: np.ndarray) -> "EncodedBatch":
        return EncodedBatch(self.x[idx], self.scale[idx], self.schema)


def encode_batch(records: list[MixedRecord], schema: VisibleSchema) -> EncodedBatch:
    for r in records:
        validate_record(r, schema)
    return EncodedBatch(
        x=encode_features(records, schema),
        scale=bias_scales(records, schema),
        schema=schema,
    )


def hidden_means(batch: EncodedBatch, params: ModelParams) -> np.ndarray:
    """(n, K) matrix of P(h_j = 1 | v) for every record in the batch."""
    pre = batch.scale[:, None] * params.b[None, :] + batch.weight_features() @ params.w
    return logistic(pre)


def bias_gradient_features(batch: EncodedBatch, params: ModelParams) -> np.ndarray:
    """(n, C) matrix of d(-E)/da per record.

    Equals the raw features except on gaussian columns, where the
    quadratic term gives (v - a) / sigma^2.
    """
    out = batch.x.copy()
    for sl, (_, unit) in zip(batch.schema.column_slices(), batch.schema.units):
        if unit.kind == "gaussian":
            c = sl.start
            out[:, c] = (batch.x[:, c] - params.a[c]) / unit.sigma**2
    return out


# ---------------------------------------------------------------------------
# Spec-level, single-record operations


def energy(
    record: MixedRecord,
    h_bits: np.ndarray,
    params: ModelParams,
    schema: VisibleSchema,
) -> float:
    """Joint energy E(v, h) of one record and one binary hidden vector."""
    params.check(schema)
    validate_record(record, schema)
    h = np.asarray(h_bits, dtype=float)
    if h.shape != (params.n_hidden,):
        raise SchemaError(f"h has shape {h.shape}, expected ({params.n_hidden},)")
    if not np.all((h == 0) | (h == 1)):
        raise ValidationError("hidden state must be binary")

    batch = encode_batch([record], schema)
    x = batch.x[0]
    xw = batch.weight_features()[0]
    scale = batch.scale[0]

    e = -scale * float(params.b @ h) - float(xw @ (params.w @ h))
    for sl, (_, unit) in zip(schema.column_slices(), schema.units):
        if unit.kind == "gaussian":
            c = sl.start
            e += (x[c] - params.a[c]) ** 2 / (2.0 * unit.sigma**2)
        else:
            e -= float(params.a[sl] @ x[sl])
    return float(e)


def hidden_conditional(
    record: MixedRecord, params: ModelParams, schema: VisibleSchema
) -> np.ndarray:
    """Posterior vector (P(h_1=1|v), ..., P(h_K=1|v))."""
    params.check(schema)
    batch = encode_batch([record], schema)
    return hidden_means(batch, params)[0]


@dataclass
class BernoulliDist:
    p: float


@dataclass
class GaussianDist:
    mean: float
    sigma: float


@dataclass
class CategoricalDist:
    probs: np.ndarray


@dataclass
class PoissonRatesDist:
    rates: np.ndarray  # sums to the conditioning record's total count


@dataclass
class TokenDist:
    probs: np.ndarray
    count: int  # number of tokens to draw


def visible_conditional(
    h,
    params: ModelParams,
    schema: VisibleSchema,
    ref_record: MixedRecord | None = None,
) -> list:
    """Per-unit conditional distribution parameters given hidden state h.

    h may be binary or a posterior vector (mean-field).  Count blocks need
    a reference record to carry the conditioning totals: the constrained
    poisson rate sum N and the replicated-softmax token count D.
    """
    params.check(schema)
    h = np.asarray(h, dtype=float)
    if h.shape != (params.n_hidden,):
        raise SchemaError(f"h has shape {h.shape}, expected ({params.n_hidden},)")
    if np.any(h < 0) or np.any(h > 1):
        raise ValidationError("hidden state entries must lie in [0, 1]")

    needs_ref = schema.has_kind("constrained_poisson") or schema.has_kind(
        "replicated_softmax"
    )
    if needs_ref and ref_record is None:
        raise UsageError("count blocks need a reference record for their totals")

    wh = params.w @ h  # (C,)
    dists = []
    for i, (sl, (_, unit)) in enumerate(zip(schema.column_slices(), schema.units)):
        if unit.kind == "binary":
            dists.append(BernoulliDist(p=float(logistic(params.a[sl.start] + wh[sl.start]))))
        elif unit.kind == "gaussian":
            mean = params.a[sl.start] + unit.sigma * wh[sl.start]
            dists.append(GaussianDist(mean=float(mean), sigma=unit.sigma))
        elif unit.kind == "categorical":
            dists.append(CategoricalDist(probs=softmax(params.a[sl] + wh[sl])))
        elif unit.kind == "constrained_poisson":
            total = float(np.sum(ref_record.values[i]))
            dists.append(PoissonRatesDist(rates=total * softmax(params.a[sl] + wh[sl])))
        elif unit.kind == "replicated_softmax":
            d = len(ref_record.values[i])
            dists.append(TokenDist(probs=softmax(params.a[sl] + wh[sl]), count=d))
    return dists


def sample_hidden(posteriors: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw binary hidden bits from their posteriors."""
    p = np.asarray(posteriors, dtype=float)
    return (rng.random(p.shape) < p).astype(float)


def sample_visible(
    dists: list,
    rng: np.random.Generator,
    schema: VisibleSchema,
    sample_gaussian: bool = False,
    sample_poisson: bool = False,
) -> MixedRecord:
    """Draw a record from per-unit conditional distributions.

    Gaussian units reconstruct noise-free (the conditional mean) and
    constrained-poisson units return the mean rate vector by default;
    both can be switched to genuine sampling.
    """
    values = []
    for dist, (_, unit) in zip(dists, schema.units):
        if unit.kind == "binary":
            values.append(int(rng.random() < dist.p))
        elif unit.kind == "gaussian":
            if sample_gaussian:
                values.append(float(rng.normal(dist.mean, dist.sigma)))
            else:
                values.append(float(dist.mean))
        elif unit.kind == "categorical":
            values.append(int(np.searchsorted(np.cumsum(dist.probs), rng.random())))
        elif unit.kind == "constrained_poisson":
            if sample_poisson:
                values.append(tuple(int(c) for c in rng.poisson(dist.rates)))
            else:
                values.append(tuple(float(r) for r in dist.rates))
        elif unit.kind == "replicated_softmax":
            counts = rng.multinomial(dist.count, dist.probs)
            tokens = np.repeat(np.arange(unit.v), counts)
            values.append(tuple(int(t) for t in tokens))
    return MixedRecord(values=tuple(values))


# ---------------------------------------------------------------------------
# Batch Gibbs machinery (kept in column space; used by training/inference)


def reconstruct_batch(
    h_mat: np.ndarray,
    batch: EncodedBatch,
    params: ModelParams,
    rng: np.random.Generator | None,
    sample: bool = True,
    sample_gaussian: bool = False,
    sample_poisson: bool = False,
) -> EncodedBatch:
    """One top-down pass: produce a visible batch from hidden states.

    With sample=False every unit returns its mean-field value (binary
    probabilities, gaussian means, categorical/softmax probabilities,
    poisson mean rates).  Totals (N, D) are carried over from `batch`.
    """
    schema = batch.schema
    n = h_mat.shape[0]
    wh = h_mat @ params.w.T  # (n, C)
    logits = params.a[None, :] + wh
    x = np.zeros_like(batch.x)
    for sl, (_, unit) in zip(schema.column_slices(), schema.units):
        if unit.kind == "binary":
            p = logistic(logits[:, sl.start])
            if sample:
                x[:, sl.start] = (rng.random(n) < p).astype(float)
            else:
                x[:, sl.start] = p
        elif unit.kind == "gaussian":
            mean = params.a[sl.start] + unit.sigma * wh[:, sl.start]
            if sample and sample_gaussian:
                x[:, sl.start] = rng.normal(mean, unit.sigma)
            else:
                x[:, sl.start] = mean
        elif unit.kind == "categorical":
            probs = softmax(logits[:, sl], axis=1)
            if sample:
                u = rng.random(n)
                idx = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
                idx = np.minimum(idx, unit.m - 1)
                x[np.arange(n), sl.start + idx] = 1.0
            else:
                x[:, sl] = probs
        elif unit.kind == "constrained_poisson":
            totals = batch.x[:, sl].sum(axis=1)
            rates = totals[:, None] * softmax(logits[:, sl], axis=1)
            if sample and sample_poisson:
                x[:, sl] = rng.poisson(rates).astype(float)
            else:
                x[:, sl] = rates
        elif unit.kind == "replicated_softmax":
            probs = softmax(logits[:, sl], axis=1)
            counts_ref = batch.x[:, sl].sum(axis=1)
            if sample:
                for r in range(n):
                    x[r, sl] = rng.multinomial(int(round(counts_ref[r])), probs[r])
            else:
                x[:, sl] = counts_ref[:, None] * probs
    return EncodedBatch(x=x, scale=batch.scale.copy(), schema=schema)
