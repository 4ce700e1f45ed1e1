"""Similarity, clustering, and ranked-retrieval metrics over latent profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import UsageError
from .training import symmetric_kl_matrix


def jaccard(code_p, code_q) -> float:
    """|intersection| / |union| of two active-bit sets.

    Two empty sets count as identical (value 1).
    """
    p, q = set(code_p), set(code_q)
    if not p and not q:
        return 1.0
    return len(p & q) / len(p | q)


def rand_index(assignment, reference) -> float:
    """Fraction of item pairs on which two labelings agree (same cluster
    in both, or different cluster in both)."""
    a = np.asarray(assignment)
    b = np.asarray(reference)
    if a.shape != b.shape:
        raise UsageError(f"labelings cover different ids: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise UsageError("rand index needs at least two items")
    same_a = a[:, None] == a[None, :]
    same_b = b[:, None] == b[None, :]
    triu = np.triu(np.ones((n, n), dtype=bool), k=1)
    agree = (same_a == same_b) & triu
    return float(agree.sum() / triu.sum())


# ---------------------------------------------------------------------------
# Hamming k-means with elementwise-median centroids


def hamming_kmeans(
    codes: np.ndarray,
    n_clusters: int,
    seed: int = 0,
    max_iter: int = 100,
) -> np.ndarray:
    """Cluster binary codes under Hamming distance.

    Centroids are elementwise majority bits (exact ties round to 1);
    assignment ties go to the lowest cluster id; empty clusters are
    re-seeded from the point farthest from its centroid.  Initial
    centroids are drawn without replacement from the distinct codes, so
    the result is a pure function of (codes, n_clusters, seed).
    """
    codes = np.asarray(codes, dtype=int)
    if codes.ndim != 2:
        raise UsageError("codes must be a 2-d bit array")
    n = codes.shape[0]
    distinct = np.unique(codes, axis=0)
    if n_clusters < 1 or n_clusters > distinct.shape[0]:
        raise UsageError(
            f"need 1 <= clusters <= {distinct.shape[0]} distinct codes, "
            f"got {n_clusters}"
        )
    rng = np.random.default_rng(seed)
    pick = rng.choice(distinct.shape[0], size=n_clusters, replace=False)
    centroids = distinct[pick].astype(int)

    assign = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        dist = np.abs(codes[:, None, :] - centroids[None, :, :]).sum(axis=2)
        new_assign = np.argmin(dist, axis=1)  # argmin takes the lowest id on ties

        for c in range(n_clusters):
            members = codes[new_assign == c]
            if members.shape[0] == 0:
                worst = int(np.argmax(dist[np.arange(n), new_assign]))
                centroids[c] = codes[worst]
                new_assign[worst] = c
            else:
                centroids[c] = (members.mean(axis=0) >= 0.5).astype(int)

        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    return assign


# ---------------------------------------------------------------------------
# Retrieval


@dataclass
class RetrievalResult:
    """One query's ranking over a corpus: ids in ascending-distance order
    with relevance flags (same concept as the query)."""

    query_id: int
    corpus_ids: list[int]
    distances: list[float]
    relevant: list[int]  # 0/1 per retrieved item, aligned with corpus_ids


def rank_by_distance(
    query_posterior: np.ndarray,
    corpus_posteriors: np.ndarray,
    query_concept=None,
    corpus_concepts=None,
    query_id: int = 0,
) -> RetrievalResult:
    """Rank a corpus by symmetric KL from the query's posterior.

    Ties break by ascending corpus id.  Relevance flags are filled from
    concept labels when given, otherwise left at 0.
    """
    q = np.atleast_2d(np.asarray(query_posterior, dtype=float))
    corpus = np.asarray(corpus_posteriors, dtype=float)
    if corpus.ndim != 2 or q.shape[1] != corpus.shape[1]:
        raise UsageError("query and corpus posteriors must share one width")
    d = symmetric_kl_matrix(q, corpus)[0]
    order = np.lexsort((np.arange(corpus.shape[0]), d))
    if corpus_concepts is not None and query_concept is not None:
        rel = [int(corpus_concepts[i] == query_concept) for i in order]
    else:
        rel = [0] * corpus.shape[0]
    return RetrievalResult(
        query_id=query_id,
        corpus_ids=[int(i) for i in order],
        distances=[float(d[i]) for i in order],
        relevant=rel,
    )


def average_precision_at_k(relevant: list[int], k: int) -> float:
    """AP truncated at k: precision summed at relevant ranks, normalised
    by min(total relevant, k); 0 when nothing relevant exists."""
    if k < 1:
        raise UsageError("k must be >= 1")
    total_rel = int(np.sum(relevant))
    if total_rel == 0:
        return 0.0
    hits = 0
    score = 0.0
    for i, r in enumerate(relevant[:k], start=1):
        if r:
            hits += 1
            score += hits / i
    return score / min(total_rel, k)


def map_at_k(results: list[RetrievalResult], k: int) -> float:
    """Mean over queries of average precision truncated at k."""
    if not results:
        raise UsageError("no retrieval results")
    return float(np.mean([average_precision_at_k(r.relevant, k) for r in results]))


def ndcg_at_k_single(relevant: list[int], k: int) -> float:
    """Binary-gain NDCG with 1/log2(rank + 1) discounts."""
    if k < 1:
        raise UsageError("k must be >= 1")
    total_rel = int(np.sum(relevant))
    if total_rel == 0:
        return 0.0
    dcg = sum(r / np.log2(i + 1) for i, r in enumerate(relevant[:k], start=1))
    ideal = sum(1.0 / np.log2(i + 1) for i in range(1, min(total_rel, k) + 1))
    return float(dcg / ideal)


def ndcg_at_k(results: list[RetrievalResult], k: int) -> float:
    if not results:
        raise UsageError("no retrieval results")
    return float(np.mean([ndcg_at_k_single(r.relevant, k) for r in results]))


def retrieval_run(
    query_posteriors: np.ndarray,
    corpus_posteriors: np.ndarray,
    query_concepts,
    corpus_concepts,
) -> list[RetrievalResult]:
    """Rank the corpus for every query (vectorised over queries)."""
    qp = np.asarray(query_posteriors, dtype=float)
    cp = np.asarray(corpus_posteriors, dtype=float)
    if qp.ndim != 2 or cp.ndim != 2 or qp.shape[1] != cp.shape[1]:
        raise UsageError("query and corpus posteriors must share one width")
    d = symmetric_kl_matrix(qp, cp)
    results = []
    corpus_idx = np.arange(cp.shape[0])
    for qi in range(qp.shape[0]):
        order = np.lexsort((corpus_idx, d[qi]))
        qc = query_concepts[qi]
        # unlabeled records are never relevant (None matches nothing)
        rel = [
            int(qc is not None and corpus_concepts[i] == qc) for i in order
        ]
        results.append(
            RetrievalResult(
                query_id=qi,
                corpus_ids=[int(i) for i in order],
                distances=[float(d[qi, i]) for i in order],
                relevant=rel,
            )
        )
    return results
