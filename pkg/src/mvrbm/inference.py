"""Latent-space inference: posterior projection, reconstruction error, and
mean-field prediction of unseen tokens from an observed record."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import UsageError
from .model import (
    EncodedBatch,
    ModelParams,
    encode_batch,
    hidden_conditional,
    hidden_means,
    reconstruct_batch,
    softmax,
)
from .schema import MixedRecord, VisibleSchema


@dataclass
class LatentProfile:
    """Hidden posteriors for one record, with the thresholded binary code.

    A posterior exactly equal to the threshold maps to bit 1.
    """

    posteriors: np.ndarray
    code: np.ndarray

    def active_set(self) -> frozenset:
        return frozenset(int(i) for i in np.flatnonzero(self.code))


def project(
    record: MixedRecord,
    params: ModelParams,
    schema: VisibleSchema,
    rho1: float = 0.5,
) -> LatentProfile:
    posteriors = hidden_conditional(record, params, schema)
    return LatentProfile(posteriors=posteriors, code=(posteriors >= rho1).astype(int))


def project_batch(
    records: list[MixedRecord],
    params: ModelParams,
    schema: VisibleSchema,
    rho1: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """(n, K) posteriors and codes for a list of records."""
    params.check(schema)
    posteriors = hidden_means(encode_batch(records, schema), params)
    return posteriors, (posteriors >= rho1).astype(int)


# ---------------------------------------------------------------------------
# Reconstruction


def reconstruction_errors(batch: EncodedBatch, params: ModelParams) -> np.ndarray:
    """Per-record scalar mean-field reconstruction error.

    The record's posteriors drive a deterministic top-down pass; per-unit
    errors are squared differences for binary and gaussian units, a
    misclassification indicator for categorical units, and total
    variation between count proportions for count blocks.  The scalar is
    the mean over units.
    """
    schema = batch.schema
    posteriors = hidden_means(batch, params)
    recon = reconstruct_batch(posteriors, batch, params, rng=None, sample=False)
    n = len(batch)
    per_unit = np.zeros((n, len(schema.units)))
    for u, (sl, (_, unit)) in enumerate(zip(schema.column_slices(), schema.units)):
        if unit.kind in ("binary", "gaussian"):
            with np.errstate(over="ignore"):  # inf error is an honest answer
                per_unit[:, u] = (batch.x[:, sl.start] - recon.x[:, sl.start]) ** 2
        elif unit.kind == "categorical":
            truth = np.argmax(batch.x[:, sl], axis=1)
            pred = np.argmax(recon.x[:, sl], axis=1)
            per_unit[:, u] = (truth != pred).astype(float)
        else:  # count blocks: total variation on proportions
            totals = batch.x[:, sl].sum(axis=1)
            safe = np.where(totals > 0, totals, 1.0)
            p_true = batch.x[:, sl] / safe[:, None]
            p_rec = recon.x[:, sl] / safe[:, None]
            tv = 0.5 * np.abs(p_true - p_rec).sum(axis=1)
            per_unit[:, u] = np.where(totals > 0, tv, 0.0)
    return per_unit.mean(axis=1)


@dataclass
class Reconstruction:
    values: tuple  # mean-field reconstruction, one entry per unit
    per_unit_error: dict
    error: float


def reconstruct(
    record: MixedRecord, params: ModelParams, schema: VisibleSchema
) -> Reconstruction:
    """Mean-field reconstruction of one record with its error breakdown."""
    params.check(schema)
    batch = encode_batch([record], schema)
    posteriors = hidden_means(batch, params)
    recon = reconstruct_batch(posteriors, batch, params, rng=None, sample=False)
    errors = {}
    values = []
    for sl, (name, unit) in zip(schema.column_slices(), schema.units):
        if unit.kind in ("binary", "gaussian"):
            v_hat = float(recon.x[0, sl.start])
            errors[name] = (float(batch.x[0, sl.start]) - v_hat) ** 2
            values.append(v_hat)
        elif unit.kind == "categorical":
            probs = recon.x[0, sl]
            pred = int(np.argmax(probs))
            errors[name] = float(pred != int(np.argmax(batch.x[0, sl])))
            values.append(probs)
        else:
            total = float(batch.x[0, sl].sum())
            values.append(recon.x[0, sl])
            if total > 0:
                errors[name] = float(
                    0.5 * np.abs(batch.x[0, sl] / total - recon.x[0, sl] / total).sum()
                )
            else:
                errors[name] = 0.0
    scalar = float(np.mean(list(errors.values())))
    return Reconstruction(values=tuple(values), per_unit_error=errors, error=scalar)


# ---------------------------------------------------------------------------
# Mean-field prediction of unseen tokens


@dataclass
class PredictionRanking:
    """(token, probability) pairs in descending probability order; ties are
    broken by ascending token id.  Probabilities sum to 1 over the
    candidate set."""

    entries: list[tuple[int, float]]

    def tokens(self) -> list[int]:
        return [t for t, _ in self.entries]

    def probabilities(self) -> dict[int, float]:
        return {t: p for t, p in self.entries}


def _find_token_unit(schema: VisibleSchema, unit: str | None) -> int:
    if unit is not None:
        i = schema.unit_index(unit)
        if schema.units[i][1].kind != "replicated_softmax":
            raise UsageError(f"unit {unit!r} is not a replicated-softmax block")
        return i
    rs = [i for i, (_, u) in enumerate(schema.units) if u.kind == "replicated_softmax"]
    if not rs:
        raise UsageError("schema has no replicated-softmax block to predict over")
    if len(rs) > 1:
        raise UsageError("several replicated-softmax blocks; name one explicitly")
    return rs[0]


def predict_unseen(
    v_observed: MixedRecord,
    params: ModelParams,
    schema: VisibleSchema,
    candidate_vocab: list[int] | None = None,
    unit: str | None = None,
    normalize: str = "full",
) -> PredictionRanking:
    """Rank candidate tokens by their mean-field probability.

    The observed record is projected to posteriors p; each token j in the
    block scores exp(a_j + sum_k W_jk p_k).  With normalize="full" the
    softmax runs over the whole block vocabulary and is then renormalised
    over the candidates; with normalize="candidates" it runs over the
    candidate set directly.  candidate_vocab=None ranks the whole
    vocabulary; an explicitly empty candidate set is an error.
    """
    if candidate_vocab is not None and not candidate_vocab:
        raise UsageError("empty candidate set")
    if normalize not in ("full", "candidates"):
        raise UsageError(f"unknown normalization mode {normalize!r}")
    params.check(schema)
    u = _find_token_unit(schema, unit)
    vocab_size = schema.units[u][1].v
    if candidate_vocab is None:
        candidate_vocab = range(vocab_size)
    candidates = sorted(set(int(t) for t in candidate_vocab))
    for t in candidates:
        if not (0 <= t < vocab_size):
            raise UsageError(f"candidate token {t} outside vocabulary [0, {vocab_size})")

    posteriors = hidden_conditional(v_observed, params, schema)
    sl = schema.column_slices()[u]
    scores = params.a[sl] + params.w[sl] @ posteriors
    if normalize == "full":
        probs = softmax(scores)
        sub = probs[candidates]
        sub = sub / sub.sum()
    else:
        sub = softmax(scores[candidates])

    order = sorted(range(len(candidates)), key=lambda i: (-sub[i], candidates[i]))
    entries = [(candidates[i], float(sub[i])) for i in order]
    return PredictionRanking(entries=entries)
