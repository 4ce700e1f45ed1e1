"""Contrastive-divergence training with optional structured sparsity and
distance-metric regularization.

The maximised objective per record is

    log L(v)  -  alpha * R(v)  -  beta * (D_N(v) - D_Nbar(v))

where R is the group l1/l2 norm of the hidden posteriors and D_N / D_Nbar
are mean symmetric-KL distances from a record's posterior to sampled
same-concept and different-concept peers.  The likelihood gradient is
estimated by CD-k (or persistent CD); regularizer gradients are exact.

All randomness flows through sub-generators derived from the single
config seed (init, shuffle, chain, pair sampling), so a fit is
bit-reproducible from (dataset, config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, UsageError
from .model import (
    EncodedBatch,
    ModelParams,
    bias_gradient_features,
    encode_batch,
    hidden_conditional,
    hidden_means,
    init_params,
    reconstruct_batch,
    sample_hidden,
)
from .schema import MixedRecord, VisibleSchema

PROB_EPS = 1e-7  # clamp for posteriors before any log or ratio
ZERO_NORM_EPS = 1e-12  # group norms below this contribute zero gradient


@dataclass
class TrainConfig:
    n_hidden: int = 50
    cd_steps: int = 1
    persistent: bool = False
    lr_w: float = 0.02
    lr_a: float = 0.3
    lr_b: float = 0.02
    batch_size: int = 100
    epochs: int = 100
    alpha: float = 0.0
    groups: int = 1
    beta: float = 0.0
    rho1: float = 0.5
    seed: int = 0
    neighbors_per_record: int = 5
    non_neighbors_per_record: int = 5
    mean_field_data_term: bool = False
    sample_gaussian: bool = False
    sample_poisson: bool = False
    oracle_exact_gradient: bool = False
    categorical_bias_init: bool = False
    weight_init_scale: float = 0.01
    lr_scale: dict = field(default_factory=dict)  # unit kind -> multiplier

    def validate(self) -> None:
        if self.n_hidden < 1:
            raise ConfigError("n_hidden must be >= 1")
        if self.cd_steps < 1:
            raise ConfigError("cd_steps must be >= 1")
        for name in ("lr_w", "lr_a", "lr_b"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if not (0.0 < self.rho1 < 1.0):
            raise ConfigError("rho1 must lie in (0, 1)")
        if self.groups < 1:
            raise ConfigError("groups must be >= 1")
        if self.alpha > 0 and self.n_hidden % self.groups != 0:
            raise ConfigError(
                f"groups={self.groups} must divide n_hidden={self.n_hidden} "
                "when alpha > 0"
            )


@dataclass
class Gradient:
    dw: np.ndarray
    da: np.ndarray
    db: np.ndarray

    @staticmethod
    def zeros(n_columns: int, n_hidden: int) -> "Gradient":
        return Gradient(
            dw=np.zeros((n_columns, n_hidden)),
            da=np.zeros(n_columns),
            db=np.zeros(n_hidden),
        )

    def add_scaled(self, other: "Gradient", factor: float) -> None:
        self.dw += factor * other.dw
        self.da += factor * other.da
        self.db += factor * other.db


# ---------------------------------------------------------------------------
# CD gradient


def cd_gradient_encoded(
    batch: EncodedBatch,
    params: ModelParams,
    cd_steps: int,
    rng: np.random.Generator,
    chain: EncodedBatch | None = None,
    mean_field_data_term: bool = False,
    sample_gaussian: bool = False,
    sample_poisson: bool = False,
) -> tuple[Gradient, EncodedBatch]:
    """One CD-k (or PCD-k) gradient estimate averaged over a batch.

    The data term pairs the observed records with their hidden state
    (sampled bits by default, posteriors with mean_field_data_term); the
    model term pairs the k-step reconstruction with its hidden
    posteriors, as in the final CD update.  Returns the chain end state
    so persistent chains can continue.
    """
    if len(batch) == 0:
        raise UsageError("empty batch")
    n = len(batch)
    xw0 = batch.weight_features()
    p0 = hidden_means(batch, params)
    h0 = sample_hidden(p0, rng)
    h_data = p0 if mean_field_data_term else h0

    if chain is not None:
        cur = chain
        h_drive = sample_hidden(hidden_means(cur, params), rng)
    else:
        cur = batch
        h_drive = h0

    for step in range(cd_steps):
        cur = reconstruct_batch(
            h_drive,
            cur,
            params,
            rng,
            sample=True,
            sample_gaussian=sample_gaussian,
            sample_poisson=sample_poisson,
        )
        pk = hidden_means(cur, params)
        if step < cd_steps - 1:
            h_drive = sample_hidden(pk, rng)

    m = len(cur)
    grad = Gradient(
        dw=xw0.T @ h_data / n - cur.weight_features().T @ pk / m,
        da=bias_gradient_features(batch, params).mean(axis=0)
        - bias_gradient_features(cur, params).mean(axis=0),
        db=(batch.scale[:, None] * h_data).mean(axis=0)
        - (cur.scale[:, None] * pk).mean(axis=0),
    )
    return grad, cur


def cd_gradient(
    batch: list[MixedRecord],
    params: ModelParams,
    schema: VisibleSchema,
    cd_steps: int = 1,
    rng: np.random.Generator | None = None,
    chain: EncodedBatch | None = None,
    **kwargs,
) -> tuple[Gradient, EncodedBatch]:
    """Record-list front end for cd_gradient_encoded."""
    if not batch:
        raise UsageError("empty batch")
    if rng is None:
        rng = np.random.default_rng(0)
    params.check(schema)
    return cd_gradient_encoded(
        encode_batch(batch, schema), params, cd_steps, rng, chain=chain, **kwargs
    )


# ---------------------------------------------------------------------------
# Structured sparsity (group l1/l2 on hidden posteriors)


def group_norms(posteriors: np.ndarray, n_groups: int) -> np.ndarray:
    """l2 norm of each of n_groups contiguous equal-size posterior blocks."""
    p = np.asarray(posteriors, dtype=float)
    k = p.shape[-1]
    if k % n_groups != 0:
        raise ConfigError(f"{n_groups} groups do not divide {k} hidden units")
    shaped = p.reshape(p.shape[:-1] + (n_groups, k // n_groups))
    return np.sqrt(np.sum(shaped**2, axis=-1))


def sparsity_penalty(posteriors: np.ndarray, n_groups: int) -> float:
    """Group-sparsity value R = sum_m ||p_{G_m}||_2 for one posterior vector."""
    return float(np.sum(group_norms(posteriors, n_groups)))


def _sparsity_dpre(p: np.ndarray, n_groups: int) -> np.ndarray:
    """dR/d(pre-activation) for a batch of posteriors p of shape (n, K)."""
    n, k = p.shape
    norms = group_norms(p, n_groups)  # (n, M)
    safe = np.where(norms > ZERO_NORM_EPS, norms, 1.0)
    per_unit_norm = np.repeat(safe, k // n_groups, axis=1)
    active = np.repeat(norms > ZERO_NORM_EPS, k // n_groups, axis=1)
    return np.where(active, p**2 * (1.0 - p) / per_unit_norm, 0.0)


def sparsity_gradient_encoded(
    batch: EncodedBatch, params: ModelParams, n_groups: int
) -> Gradient:
    """Gradient of the mean group-sparsity penalty over a batch.

    da is identically zero; db picks up the record's hidden-bias scale
    and dW the same typed visible features that feed the posteriors, so
    the result matches finite differences of the penalty.
    """
    n = len(batch)
    p = hidden_means(batch, params)
    dpre = _sparsity_dpre(p, n_groups)
    return Gradient(
        dw=batch.weight_features().T @ dpre / n,
        da=np.zeros(batch.x.shape[1]),
        db=(batch.scale[:, None] * dpre).mean(axis=0),
    )


def sparsity_gradient(
    record: MixedRecord, params: ModelParams, schema: VisibleSchema, n_groups: int
) -> Gradient:
    params.check(schema)
    return sparsity_gradient_encoded(encode_batch([record], schema), params, n_groups)


# ---------------------------------------------------------------------------
# Symmetric KL distance and its gradient


def symmetric_kl(p: np.ndarray, q: np.ndarray, eps: float = PROB_EPS) -> float:
    """Mean of the two Bernoulli KL directions between posterior vectors.

    Equals 0.5 * sum_j (p_j - q_j) * (logit p_j - logit q_j) after
    clamping both arguments into [eps, 1 - eps].
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise UsageError(f"posterior length mismatch: {p.shape} vs {q.shape}")
    pc = np.clip(p, eps, 1.0 - eps)
    qc = np.clip(q, eps, 1.0 - eps)
    return float(
        0.5 * np.sum((pc - qc) * (np.log(pc / qc) - np.log((1.0 - pc) / (1.0 - qc))))
    )


def symmetric_kl_matrix(p: np.ndarray, q: np.ndarray, eps: float = PROB_EPS) -> np.ndarray:
    """All pairwise symmetric KLs between rows of p (n, K) and q (m, K)."""
    pc = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    qc = np.clip(np.asarray(q, dtype=float), eps, 1.0 - eps)
    lp = np.log(pc / (1.0 - pc))
    lq = np.log(qc / (1.0 - qc))
    up = np.sum(pc * lp, axis=1)
    uq = np.sum(qc * lq, axis=1)
    return 0.5 * (up[:, None] + uq[None, :] - pc @ lq.T - lp @ qc.T)


def _pair_distance_dpre(pr: np.ndarray, po: np.ndarray) -> np.ndarray:
    """d D(r, o) / d(pre-activation of r), rows are pairs, columns units."""
    pr = np.clip(pr, PROB_EPS, 1.0 - PROB_EPS)
    po = np.clip(po, PROB_EPS, 1.0 - PROB_EPS)
    d_dp = 0.5 * (
        np.log(pr / po)
        - np.log((1.0 - pr) / (1.0 - po))
        - po / pr
        + (1.0 - po) / (1.0 - pr)
    )
    return d_dp * pr * (1.0 - pr)


def metric_pair_gradient(
    pairs_f: EncodedBatch,
    pairs_g: EncodedBatch,
    coefs: np.ndarray,
    params: ModelParams,
) -> Gradient:
    """Gradient of sum_i coefs_i * D(f_i, g_i) over aligned pair batches.

    Both endpoints of every pair receive their chain-rule term; the
    visible biases do not appear in the distance, so da stays zero.
    """
    pf = hidden_means(pairs_f, params)
    pg = hidden_means(pairs_g, params)
    dpre_f = _pair_distance_dpre(pf, pg) * coefs[:, None]
    dpre_g = _pair_distance_dpre(pg, pf) * coefs[:, None]
    dw = pairs_f.weight_features().T @ dpre_f + pairs_g.weight_features().T @ dpre_g
    db = (pairs_f.scale[:, None] * dpre_f).sum(axis=0) + (
        pairs_g.scale[:, None] * dpre_g
    ).sum(axis=0)
    return Gradient(dw=dw, da=np.zeros(pairs_f.x.shape[1]), db=db)


def metric_gradient(
    record: MixedRecord,
    neighbors: list[MixedRecord],
    non_neighbors: list[MixedRecord],
    params: ModelParams,
    schema: VisibleSchema,
) -> Gradient:
    """Gradient of D_N(f) - D_Nbar(f) for one record f.

    Empty neighbor or non-neighbor sets contribute nothing (their mean
    distance term is absent, not an error).
    """
    params.check(schema)
    grad = Gradient.zeros(schema.total_columns, params.n_hidden)
    for group, sign in ((neighbors, 1.0), (non_neighbors, -1.0)):
        if not group:
            continue
        coef = sign / len(group)
        f_rep = encode_batch([record] * len(group), schema)
        g_rep = encode_batch(group, schema)
        part = metric_pair_gradient(f_rep, g_rep, np.full(len(group), coef), params)
        grad.add_scaled(part, 1.0)
    return grad


def metric_objective(
    record: MixedRecord,
    neighbors: list[MixedRecord],
    non_neighbors: list[MixedRecord],
    params: ModelParams,
    schema: VisibleSchema,
) -> float:
    """D_N(f) - D_Nbar(f); the scalar whose gradient metric_gradient returns."""
    pf = hidden_conditional(record, params, schema)
    value = 0.0
    for group, sign in ((neighbors, 1.0), (non_neighbors, -1.0)):
        if not group:
            continue
        dists = [symmetric_kl(hidden_conditional(g, params, schema), pf) for g in group]
        value += sign * float(np.mean(dists))
    return value


# ---------------------------------------------------------------------------
# Fit loop


@dataclass
class LogRow:
    epoch: int
    recon_error: float
    mean_group_norm: float | None = None
    intra_kl: float | None = None
    inter_kl: float | None = None


@dataclass
class FitResult:
    params: ModelParams
    log: list[LogRow]
    diverged: bool = False


def _concept_index(labels: list) -> dict:
    """Per concept: sorted index arrays of same-concept and other-concept
    labeled records."""
    by_concept: dict = {}
    for i, lab in enumerate(labels):
        if lab is not None:
            by_concept.setdefault(lab, []).append(i)
    all_labeled = np.array(sorted(i for i, lab in enumerate(labels) if lab is not None))
    pools = {}
    for concept, idx in by_concept.items():
        same = np.array(idx)
        pools[concept] = (same, np.setdiff1d(all_labeled, same))
    return pools


def _sample_metric_pairs(
    batch_idx: np.ndarray,
    labels: list,
    pools: dict,
    n_nb: int,
    n_non: int,
    rng: np.random.Generator,
):
    """For each labeled record in the batch, draw up to n_nb same-concept
    and n_non different-concept partners (uniform, without replacement).
    Returns (f_indices, g_indices, coefs) as flat arrays."""
    f_out, g_out, c_out = [], [], []
    for i in batch_idx:
        lab = labels[i]
        if lab is None:
            continue
        same, other = pools[lab]
        same = same[same != i]
        for pool, want, sign in ((same, n_nb, 1.0), (other, n_non, -1.0)):
            if len(pool) == 0 or want == 0:
                continue
            take = min(want, len(pool))
            chosen = rng.choice(pool, size=take, replace=False)
            f_out.extend([int(i)] * take)
            g_out.extend(int(j) for j in chosen)
            c_out.extend([sign / take] * take)
    return np.array(f_out, dtype=int), np.array(g_out, dtype=int), np.array(c_out)


def _mean_intra_inter_kl(posteriors: np.ndarray, labels: list) -> tuple[float, float]:
    idx = [i for i, lab in enumerate(labels) if lab is not None]
    if len(idx) < 2:
        return float("nan"), float("nan")
    p = posteriors[idx]
    lab = np.array([labels[i] for i in idx])
    d = symmetric_kl_matrix(p, p)
    same = lab[:, None] == lab[None, :]
    triu = np.triu(np.ones_like(same, dtype=bool), k=1)
    intra = d[same & triu]
    inter = d[(~same) & triu]
    return (
        float(intra.mean()) if intra.size else float("nan"),
        float(inter.mean()) if inter.size else float("nan"),
    )


def _apply_update(
    params: ModelParams, grad: Gradient, config: TrainConfig, col_mult: np.ndarray
) -> None:
    params.w += config.lr_w * (col_mult[:, None] * grad.dw)
    params.a += config.lr_a * (col_mult * grad.da)
    params.b += config.lr_b * grad.db


def _column_lr_multipliers(schema: VisibleSchema, lr_scale: dict) -> np.ndarray:
    mult = np.ones(schema.total_columns)
    if lr_scale:
        for sl, (_, unit) in zip(schema.column_slices(), schema.units):
            mult[sl] = lr_scale.get(unit.kind, 1.0)
    return mult


def fit(
    records: list[MixedRecord],
    schema: VisibleSchema,
    config: TrainConfig,
    labels: list | None = None,
    init: ModelParams | None = None,
    epoch_callback=None,
) -> FitResult:
    """Stochastic gradient ascent on the regularized likelihood.

    Logs one row per epoch: full-dataset mean-field reconstruction error,
    plus mean group norm when alpha > 0 and mean intra/inter-concept
    symmetric KL when beta > 0 and labels are present.  On divergence
    (non-finite parameter) training stops and the last finite epoch
    checkpoint is returned with the diverged flag set.
    """
    from .inference import reconstruction_errors

    config.validate()
    if not records:
        raise UsageError("empty dataset")
    if config.beta > 0 and labels is None:
        raise UsageError("beta > 0 requires concept labels")
    if labels is not None and len(labels) != len(records):
        raise UsageError("labels length must match dataset length")

    ss = np.random.SeedSequence(config.seed)
    seeds = ss.spawn(4)
    rng_init = np.random.default_rng(seeds[0])
    rng_shuffle = np.random.default_rng(seeds[1])
    rng_chain = np.random.default_rng(seeds[2])
    rng_pairs = np.random.default_rng(seeds[3])

    encoded = encode_batch(records, schema)
    n = len(encoded)

    if init is not None:
        params = init.copy()
        params.check(schema)
    else:
        params = init_params(schema, config.n_hidden, rng_init, config.weight_init_scale)
        if config.categorical_bias_init:
            _init_categorical_biases(params, encoded, schema)

    pair_pools = _concept_index(labels) if labels is not None else {}
    col_mult = _column_lr_multipliers(schema, config.lr_scale)

    chain: EncodedBatch | None = None
    if config.persistent:
        chain = encoded.take(np.arange(min(config.batch_size, n)))

    log: list[LogRow] = []
    checkpoint = params.copy()
    diverged = False

    for epoch in range(1, config.epochs + 1):
        if config.oracle_exact_gradient:
            grad = _exact_dataset_gradient(records, params, schema)
            _add_regularizers(
                grad, encoded, np.arange(n), labels, pair_pools, params, config, rng_pairs
            )
            _apply_update(params, grad, config, col_mult)
            if not params.all_finite():
                params, diverged = checkpoint, True
        else:
            perm = rng_shuffle.permutation(n)
            for start in range(0, n, config.batch_size):
                idx = perm[start : start + config.batch_size]
                sub = encoded.take(idx)
                grad, chain_out = cd_gradient_encoded(
                    sub,
                    params,
                    config.cd_steps,
                    rng_chain,
                    chain=chain,
                    mean_field_data_term=config.mean_field_data_term,
                    sample_gaussian=config.sample_gaussian,
                    sample_poisson=config.sample_poisson,
                )
                if config.persistent:
                    chain = chain_out
                _add_regularizers(
                    grad, encoded, idx, labels, pair_pools, params, config, rng_pairs
                )
                _apply_update(params, grad, config, col_mult)
                if not params.all_finite():
                    params, diverged = checkpoint, True
                    break

        if diverged:
            break

        row = _epoch_log_row(epoch, encoded, params, labels, config, reconstruction_errors)
        log.append(row)
        if epoch_callback is not None:
            epoch_callback(row)
        checkpoint = params.copy()

    return FitResult(params=params, log=log, diverged=diverged)


def _init_categorical_biases(
    params: ModelParams, encoded: EncodedBatch, schema: VisibleSchema
) -> None:
    """Optional empirical log-frequency initialisation of categorical biases."""
    for sl, (_, unit) in zip(schema.column_slices(), schema.units):
        if unit.kind == "categorical":
            freq = encoded.x[:, sl].mean(axis=0) + 1e-3
            params.a[sl] = np.log(freq / freq.sum())


def _add_regularizers(
    grad: Gradient,
    encoded: EncodedBatch,
    idx: np.ndarray,
    labels,
    pair_pools: dict,
    params: ModelParams,
    config: TrainConfig,
    rng_pairs: np.random.Generator,
) -> None:
    sub = encoded.take(idx)
    if config.alpha > 0:
        grad.add_scaled(
            sparsity_gradient_encoded(sub, params, config.groups), -config.alpha
        )
    if config.beta > 0 and labels is not None:
        f_idx, g_idx, coefs = _sample_metric_pairs(
            idx,
            labels,
            pair_pools,
            config.neighbors_per_record,
            config.non_neighbors_per_record,
            rng_pairs,
        )
        if len(f_idx) > 0:
            part = metric_pair_gradient(
                encoded.take(f_idx), encoded.take(g_idx), coefs, params
            )
            grad.add_scaled(part, -config.beta / len(idx))


def _epoch_log_row(
    epoch: int,
    encoded: EncodedBatch,
    params: ModelParams,
    labels,
    config: TrainConfig,
    recon_fn,
) -> LogRow:
    errors = recon_fn(encoded, params)
    row = LogRow(epoch=epoch, recon_error=float(np.mean(errors)))
    posteriors = None
    if config.alpha > 0:
        posteriors = hidden_means(encoded, params)
        row.mean_group_norm = float(np.mean(group_norms(posteriors, config.groups)))
    if config.beta > 0 and labels is not None:
        if posteriors is None:
            posteriors = hidden_means(encoded, params)
        row.intra_kl, row.inter_kl = _mean_intra_inter_kl(posteriors, labels)
    return row


def _exact_dataset_gradient(
    records: list[MixedRecord], params: ModelParams, schema: VisibleSchema
) -> Gradient:
    from .oracle import exact_gradient

    grad = Gradient.zeros(schema.total_columns, params.n_hidden)
    for record in records:
        grad.add_scaled(exact_gradient(record, params, schema), 1.0 / len(records))
    return grad
