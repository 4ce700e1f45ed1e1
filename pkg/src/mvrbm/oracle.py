"""Exact brute-force reference computations on tiny models.

Everything here enumerates the 2^K hidden configurations and handles each
visible unit with a closed-form sum or integral:

    binary        1 + exp(a + Wh)                 (two-term sum)
    categorical   sum_m exp(a_m + W_m h)          (M-term sum)
    gaussian      sigma sqrt(2 pi) exp(Wh a/sigma + (Wh)^2/2)   (analytic)
    repl.softmax  (sum_n exp(a_n + W_n h))^D      (D-token multinomial sum)

Constrained-poisson blocks have no proper joint distribution and are
refused.  Replicated-softmax likelihoods are over token multisets, so
they include the multinomial coefficient; the coefficient is constant in
the parameters and therefore invisible to gradients.

These routines back the test suite and the gradcheck command; they are
deliberately independent of the training path.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import OracleRefusal, UsageError
from .model import ModelParams, encode_batch, energy, hidden_conditional
from .schema import MixedRecord, VisibleSchema
from .training import Gradient

MAX_RS_TOKENS = 6
MAX_RS_VOCAB = 6


@dataclass(frozen=True)
class TinyModelBound:
    """Enumeration limits; anything larger is refused with a reason.

    poisson_truncation is reserved for a truncated count enumeration;
    count-conditional units are currently refused outright, so it caps
    nothing yet.
    """

    max_hidden: int = 12
    max_configs: int = 2**20
    poisson_truncation: int = 0


DEFAULT_BOUND = TinyModelBound()


def _rs_token_counts(
    schema: VisibleSchema,
    record: MixedRecord | None = None,
    rs_tokens: dict | int | None = None,
) -> dict[int, int]:
    """Resolve the token count D of every replicated-softmax block."""
    out = {}
    for i, (name, unit) in enumerate(schema.units):
        if unit.kind != "replicated_softmax":
            continue
        if record is not None:
            out[i] = len(record.values[i])
        elif isinstance(rs_tokens, dict):
            if name not in rs_tokens:
                raise UsageError(f"token count for block {name!r} not given")
            out[i] = int(rs_tokens[name])
        elif rs_tokens is not None:
            out[i] = int(rs_tokens)
        else:
            raise UsageError(
                "replicated-softmax blocks need a token count (rs_tokens) "
                "to define their configuration space"
            )
    return out


def _check_supported(
    schema: VisibleSchema,
    n_hidden: int,
    bound: TinyModelBound,
    token_counts: dict[int, int],
) -> None:
    if schema.has_kind("constrained_poisson"):
        raise OracleRefusal(
            "constrained-poisson blocks define no proper joint distribution"
        )
    if n_hidden > bound.max_hidden:
        raise OracleRefusal(f"{n_hidden} hidden units exceed bound {bound.max_hidden}")
    if 2**n_hidden > bound.max_configs:
        raise OracleRefusal("hidden configuration count exceeds bound")
    for i, (name, unit) in enumerate(schema.units):
        if unit.kind == "replicated_softmax":
            d = token_counts[i]
            if d > MAX_RS_TOKENS or unit.v > MAX_RS_VOCAB:
                raise OracleRefusal(
                    f"block {name!r}: exact token enumeration supports "
                    f"D <= {MAX_RS_TOKENS}, V <= {MAX_RS_VOCAB} "
                    f"(got D={d}, V={unit.v})"
                )


def all_hidden_configs(n_hidden: int) -> np.ndarray:
    """(2^K, K) matrix of all binary hidden vectors, in integer order."""
    idx = np.arange(2**n_hidden)
    return ((idx[:, None] >> np.arange(n_hidden)[None, :]) & 1).astype(float)


def _bias_scale(schema: VisibleSchema, token_counts: dict[int, int]) -> float:
    if not schema.has_kind("replicated_softmax"):
        return 1.0
    return float(sum(token_counts.values()))


def _per_config_log_norms(
    params: ModelParams, schema: VisibleSchema, token_counts: dict[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """For every hidden config h: log of the per-unit normaliser product
    plus the scaled hidden-bias term.  Returns (H, log_weights)."""
    h_all = all_hidden_configs(params.n_hidden)
    wh = h_all @ params.w.T  # (2^K, C)
    log_w = _bias_scale(schema, token_counts) * (h_all @ params.b)
    for i, (sl, (_, unit)) in enumerate(zip(schema.column_slices(), schema.units)):
        if unit.kind == "binary":
            log_w += np.logaddexp(0.0, params.a[sl.start] + wh[:, sl.start])
        elif unit.kind == "categorical":
            block = params.a[sl][None, :] + wh[:, sl]
            m = block.max(axis=1)
            log_w += m + np.log(np.exp(block - m[:, None]).sum(axis=1))
        elif unit.kind == "gaussian":
            t = wh[:, sl.start]
            log_w += (
                math.log(unit.sigma * math.sqrt(2.0 * math.pi))
                + t * (params.a[sl.start] / unit.sigma)
                + 0.5 * t**2
            )
        elif unit.kind == "replicated_softmax":
            block = params.a[sl][None, :] + wh[:, sl]
            m = block.max(axis=1)
            lse = m + np.log(np.exp(block - m[:, None]).sum(axis=1))
            log_w += token_counts[i] * lse
    return h_all, log_w


def exact_log_partition(
    params: ModelParams,
    schema: VisibleSchema,
    rs_tokens: dict | int | None = None,
    bound: TinyModelBound = DEFAULT_BOUND,
) -> float:
    """log Z by summing/integrating over every joint configuration."""
    params.check(schema)
    token_counts = _rs_token_counts(schema, rs_tokens=rs_tokens)
    _check_supported(schema, params.n_hidden, bound, token_counts)
    _, log_w = _per_config_log_norms(params, schema, token_counts)
    m = log_w.max()
    return float(m + np.log(np.exp(log_w - m).sum()))


def _log_multiset_coefficient(record: MixedRecord, schema: VisibleSchema) -> float:
    """log of the multinomial coefficients of all replicated-softmax blocks."""
    total = 0.0
    for i, (_, unit) in enumerate(schema.units):
        if unit.kind == "replicated_softmax":
            tokens = np.asarray(record.values[i], dtype=int)
            counts = np.bincount(tokens, minlength=unit.v)
            total += math.lgamma(len(tokens) + 1) - sum(
                math.lgamma(c + 1) for c in counts
            )
    return total


def _negative_energy_parts(
    record: MixedRecord, params: ModelParams, schema: VisibleSchema
) -> tuple[float, np.ndarray]:
    """-E(v, h) = base(v) + pre . h; returns (base, pre)."""
    batch = encode_batch([record], schema)
    xw = batch.weight_features()[0]
    scale = batch.scale[0]
    base = 0.0
    for sl, (_, unit) in zip(schema.column_slices(), schema.units):
        if unit.kind == "gaussian":
            c = sl.start
            base -= (batch.x[0, c] - params.a[c]) ** 2 / (2.0 * unit.sigma**2)
        else:
            base += float(params.a[sl] @ batch.x[0, sl])
    pre = scale * params.b + params.w.T @ xw
    return base, pre


def exact_log_likelihood(
    record: MixedRecord,
    params: ModelParams,
    schema: VisibleSchema,
    bound: TinyModelBound = DEFAULT_BOUND,
) -> float:
    """log P(v): hidden units summed out, normalised by the exact partition
    function.  Replicated-softmax blocks are scored as order-free
    multisets (multinomial coefficient included); gaussian units make
    this a log density."""
    params.check(schema)
    token_counts = _rs_token_counts(schema, record=record)
    _check_supported(schema, params.n_hidden, bound, token_counts)
    h_all, log_w = _per_config_log_norms(params, schema, token_counts)
    base, pre = _negative_energy_parts(record, params, schema)
    neg_e = base + h_all @ pre
    m = neg_e.max()
    log_num = m + math.log(np.exp(neg_e - m).sum())
    mz = log_w.max()
    log_z = mz + math.log(np.exp(log_w - mz).sum())
    return float(log_num - log_z + _log_multiset_coefficient(record, schema))


def exact_gradient(
    record: MixedRecord,
    params: ModelParams,
    schema: VisibleSchema,
    bound: TinyModelBound = DEFAULT_BOUND,
) -> Gradient:
    """d log P(v) / d(a, b, W): data expectation minus exact model
    expectation, the latter via the per-config closed forms."""
    params.check(schema)
    token_counts = _rs_token_counts(schema, record=record)
    _check_supported(schema, params.n_hidden, bound, token_counts)
    scale = _bias_scale(schema, token_counts)

    h_all, log_w = _per_config_log_norms(params, schema, token_counts)
    m = log_w.max()
    p_h = np.exp(log_w - m)
    p_h /= p_h.sum()  # P(h) over all 2^K configs
    wh = h_all @ params.w.T

    c = schema.total_columns
    exp_xw = np.zeros((len(h_all), c))  # E[hidden-input features | h]
    exp_da = np.zeros((len(h_all), c))  # E[d(-E)/da | h]
    for i, (sl, (_, unit)) in enumerate(zip(schema.column_slices(), schema.units)):
        if unit.kind == "binary":
            p = 1.0 / (1.0 + np.exp(-(params.a[sl.start] + wh[:, sl.start])))
            exp_xw[:, sl.start] = p
            exp_da[:, sl.start] = p
        elif unit.kind == "categorical":
            block = params.a[sl][None, :] + wh[:, sl]
            block -= block.max(axis=1, keepdims=True)
            sm = np.exp(block)
            sm /= sm.sum(axis=1, keepdims=True)
            exp_xw[:, sl] = sm
            exp_da[:, sl] = sm
        elif unit.kind == "gaussian":
            t = wh[:, sl.start]
            exp_xw[:, sl.start] = params.a[sl.start] / unit.sigma + t
            exp_da[:, sl.start] = t / unit.sigma
        elif unit.kind == "replicated_softmax":
            block = params.a[sl][None, :] + wh[:, sl]
            block -= block.max(axis=1, keepdims=True)
            sm = np.exp(block)
            sm /= sm.sum(axis=1, keepdims=True)
            exp_xw[:, sl] = token_counts[i] * sm
            exp_da[:, sl] = token_counts[i] * sm

    batch = encode_batch([record], schema)
    xw = batch.weight_features()[0]
    posterior = hidden_conditional(record, params, schema)

    from .model import bias_gradient_features

    da_data = bias_gradient_features(batch, params)[0]
    dw = np.outer(xw, posterior) - np.einsum("h,hc,hk->ck", p_h, exp_xw, h_all)
    da = da_data - p_h @ exp_da
    db = scale * posterior - scale * (p_h @ h_all)
    return Gradient(dw=dw, da=da, db=db)


# ---------------------------------------------------------------------------
# Visible-space enumeration (discrete schemas)


def _compositions(total: int, parts: int):
    """All count vectors of length `parts` summing to `total`."""
    for dividers in itertools.combinations(range(total + parts - 1), parts - 1):
        counts = []
        prev = -1
        for d in dividers:
            counts.append(d - prev - 1)
            prev = d
        counts.append(total + parts - 1 - prev - 1)
        yield tuple(counts)


def enumerate_unit_values(unit, token_count: int | None = None) -> list:
    """All values a discrete unit can take (token tuples for RS blocks)."""
    if unit.kind == "binary":
        return [0, 1]
    if unit.kind == "categorical":
        return list(range(unit.m))
    if unit.kind == "replicated_softmax":
        if token_count is None:
            raise UsageError("token count needed to enumerate a softmax block")
        values = []
        for counts in _compositions(token_count, unit.v):
            tokens = tuple(
                int(t) for t in np.repeat(np.arange(unit.v), np.array(counts))
            )
            values.append(tokens)
        return values
    raise OracleRefusal(f"cannot enumerate values of a {unit.kind} unit")


def enumerate_records(
    schema: VisibleSchema,
    rs_tokens: dict | int | None = None,
    bound: TinyModelBound = DEFAULT_BOUND,
) -> list[MixedRecord]:
    """Every record of a fully discrete schema."""
    token_counts = _rs_token_counts(schema, rs_tokens=rs_tokens)
    spaces = []
    size = 1
    for i, (_, unit) in enumerate(schema.units):
        vals = enumerate_unit_values(unit, token_counts.get(i))
        spaces.append(vals)
        size *= len(vals)
        if size > bound.max_configs:
            raise OracleRefusal("visible configuration count exceeds bound")
    return [MixedRecord(values=v) for v in itertools.product(*spaces)]


def hidden_conditional_by_enumeration(
    record: MixedRecord, params: ModelParams, schema: VisibleSchema
) -> np.ndarray:
    """P(h_j = 1 | v) from raw Boltzmann weights exp(-E), via the energy
    function alone.  Cross-checks the logistic closed form."""
    h_all = all_hidden_configs(params.n_hidden)
    weights = np.array(
        [math.exp(-energy(record, h, params, schema)) for h in h_all]
    )
    total = weights.sum()
    return (weights @ h_all) / total


def unit_conditional_by_enumeration(
    record: MixedRecord,
    h_bits: np.ndarray,
    params: ModelParams,
    schema: VisibleSchema,
    unit_name: str,
) -> dict:
    """P(v_unit = value | h) over a discrete unit's value space, from raw
    Boltzmann weights with the other units held fixed."""
    i = schema.unit_index(unit_name)
    unit = schema.units[i][1]
    token_count = len(record.values[i]) if unit.kind == "replicated_softmax" else None
    values = enumerate_unit_values(unit, token_count)
    log_w = []
    for value in values:
        modified = MixedRecord(
            values=record.values[:i] + (value,) + record.values[i + 1 :]
        )
        lw = -energy(modified, h_bits, params, schema)
        if unit.kind == "replicated_softmax":
            lw += _log_multiset_coefficient_single(value, unit.v)
        log_w.append(lw)
    log_w = np.array(log_w)
    log_w -= log_w.max()
    w = np.exp(log_w)
    w /= w.sum()
    return {value: float(p) for value, p in zip(values, w)}


def _log_multiset_coefficient_single(tokens, vocab: int) -> float:
    counts = np.bincount(np.asarray(tokens, dtype=int), minlength=vocab)
    return math.lgamma(len(tokens) + 1) - sum(math.lgamma(c + 1) for c in counts)


def gaussian_conditional_log_density_by_enumeration(
    record: MixedRecord,
    h_bits: np.ndarray,
    params: ModelParams,
    schema: VisibleSchema,
    unit_name: str,
    value: float,
) -> float:
    """log p(v_unit = value | h) for a gaussian unit, from energy
    differences normalised by the analytic per-unit integral of exp(-E).

    The unit's unnormalised log weight at `value` is recovered as
    E(v_i = 0) - E(v_i = value) plus its weight at zero, so the result
    never consults the closed-form normal conditional it checks.
    """
    i = schema.unit_index(unit_name)
    unit = schema.units[i][1]
    if unit.kind != "gaussian":
        raise UsageError(f"{unit_name!r} is not a gaussian unit")
    h = np.asarray(h_bits, dtype=float)
    at_value = MixedRecord(
        values=record.values[:i] + (float(value),) + record.values[i + 1 :]
    )
    at_zero = MixedRecord(values=record.values[:i] + (0.0,) + record.values[i + 1 :])
    sl = schema.column_slices()[i]
    a_i, sigma = params.a[sl.start], unit.sigma
    wh = float(params.w[sl.start] @ h)
    log_weight = (
        energy(at_zero, h, params, schema)
        - energy(at_value, h, params, schema)
        - a_i**2 / (2.0 * sigma**2)
    )
    log_integral = (
        math.log(sigma * math.sqrt(2.0 * math.pi))
        + wh * (a_i / sigma)
        + 0.5 * wh**2
    )
    return log_weight - log_integral


def exact_unseen_conditional(
    record: MixedRecord,
    params: ModelParams,
    schema: VisibleSchema,
    candidate_vocab: list[int] | None = None,
    unit: str | None = None,
    normalize: str = "full",
) -> dict[int, float]:
    """Exact next-token conditional P(extra token = j | observed record).

    The observed record is extended by one more replicated-softmax token
    (raising the replication count by one) and the hidden units are
    summed out exactly.  This is the quantity the mean-field prediction
    approximates.
    """
    from .inference import _find_token_unit

    i = _find_token_unit(schema, unit)
    vocab = schema.units[i][1].v
    h_all = all_hidden_configs(params.n_hidden)
    log_w = np.empty(vocab)
    for j in range(vocab):
        extended = MixedRecord(
            values=record.values[:i]
            + (tuple(record.values[i]) + (j,),)
            + record.values[i + 1 :]
        )
        base, pre = _negative_energy_parts(extended, params, schema)
        neg_e = base + h_all @ pre
        m = neg_e.max()
        log_w[j] = m + math.log(np.exp(neg_e - m).sum())
    candidates = sorted(set(int(t) for t in candidate_vocab)) if candidate_vocab else list(range(vocab))
    if normalize == "full":
        probs = np.exp(log_w - log_w.max())
        probs /= probs.sum()
        sub = probs[candidates]
        sub = sub / sub.sum()
    else:
        scores = log_w[candidates]
        sub = np.exp(scores - scores.max())
        sub /= sub.sum()
    return {t: float(p) for t, p in zip(candidates, sub)}


# ---------------------------------------------------------------------------
# Generative / discriminative / hybrid objectives


def hybrid_objectives(
    records: list[MixedRecord],
    params: ModelParams,
    schema: VisibleSchema,
    target_unit: str,
    mix: float,
    bound: TinyModelBound = DEFAULT_BOUND,
) -> tuple[float, float, float]:
    """Evaluate the generative, discriminative, and blended objectives of a
    predictive model whose unseen variable set is one discrete unit.

    L1 averages log P(v without target) over the dataset, L2 averages
    log P(target | rest), and L3 = mix * L1 + (1 - mix) * L2.
    """
    if not records:
        raise UsageError("empty dataset")
    if not (0.0 <= mix <= 1.0):
        raise UsageError("mix must lie in [0, 1]")
    i = schema.unit_index(target_unit)
    unit = schema.units[i][1]
    l_full = []
    l_marg = []
    for record in records:
        token_count = (
            len(record.values[i]) if unit.kind == "replicated_softmax" else None
        )
        values = enumerate_unit_values(unit, token_count)
        lls = np.array(
            [
                exact_log_likelihood(
                    MixedRecord(
                        values=record.values[:i] + (v,) + record.values[i + 1 :]
                    ),
                    params,
                    schema,
                    bound,
                )
                for v in values
            ]
        )
        m = lls.max()
        marg = m + math.log(np.exp(lls - m).sum())
        l_full.append(exact_log_likelihood(record, params, schema, bound))
        l_marg.append(marg)
    l1 = float(np.mean(l_marg))
    l2 = float(np.mean(np.array(l_full) - np.array(l_marg)))
    l3 = mix * l1 + (1.0 - mix) * l2
    return l1, l2, l3


# ---------------------------------------------------------------------------
# Finite differences (used by gradcheck and the test suite)


def finite_difference_gradient(
    objective,
    params: ModelParams,
    eps: float = 1e-6,
) -> Gradient:
    """Central finite differences of a scalar objective(params) with
    respect to every parameter."""
    grad = Gradient.zeros(params.a.shape[0], params.n_hidden)

    def _fd(array, out):
        flat = array.ravel()
        out_flat = out.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = objective(params)
            flat[i] = orig - eps
            down = objective(params)
            flat[i] = orig
            out_flat[i] = (up - down) / (2.0 * eps)

    _fd(params.a, grad.da)
    _fd(params.b, grad.db)
    _fd(params.w, grad.dw)
    return grad


def gradient_relative_error(g: Gradient, ref: Gradient) -> float:
    """max-norm difference relative to the largest reference component."""
    diff = max(
        np.abs(g.dw - ref.dw).max(),
        np.abs(g.da - ref.da).max(),
        np.abs(g.db - ref.db).max(),
    )
    scale = max(
        np.abs(ref.dw).max(), np.abs(ref.da).max(), np.abs(ref.db).max(), 1e-8
    )
    return float(diff / scale)
