"""Recovery metrics, edge-reconstruction AUC and synthetic generators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import rng
from .errors import DataError, DegenerateError, InfeasibleError
from .graph import UNDIRECTED, EmbeddingMatrix, SparseGraph, largest_connected_component
from .patches import PatchGraph

EXHAUSTIVE_MAX_NODES = 2000


@dataclass(frozen=True, eq=False)
class SyntheticProblem:
    """Ground truth plus per-patch similarity transforms and noise.

    Patch ``k`` holds ``scales[k] * X[P_k] @ rotations[k].T + translations[k] + noise[k]``.
    """

    ground_truth: EmbeddingMatrix
    patch_graph: PatchGraph
    scales: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray
    noise: tuple
    sigma: float

    def reconstruct(self):
        """Patch coordinates recomputed from the stored transforms."""
        X = self.ground_truth
        return [self.scales[k] * X.rows(P) @ self.rotations[k].T + self.translations[k] + self.noise[k]
                for k, P in enumerate(self.patch_graph.patches)]


def random_orthogonal(d, gen):
    """Haar-distributed orthogonal matrix (reflections included)."""
    Q, R = np.linalg.qr(gen.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


def synthetic_cover(n, p, overlap, gen):
    """Ring of ``p`` node segments, each patch reaching ``overlap`` nodes into the next.

    For ``p >= 4`` a few chords join non-adjacent patches, each carrying
    ``overlap`` sampled nodes of the far segment. Returns ``(patches, edges)``.
    """
    if p == 1:
        return [np.arange(n)], np.zeros((0, 2), dtype=np.int64)
    if n // p < overlap:
        raise InfeasibleError(f"{p} patches with pairwise overlap {overlap} need segments of "
                              f">= {overlap} nodes, {n} nodes give {n // p}")
    perm = gen.permutation(n)
    bounds = np.linspace(0, n, p + 1).round().astype(int)
    segs = [perm[bounds[k]:bounds[k + 1]] for k in range(p)]
    patches = [list(segs[k]) + list(segs[(k + 1) % p][:overlap]) for k in range(p)]
    edges = [(k, (k + 1) % p) for k in range(p)]
    if p >= 4:
        for _ in range(p // 3):
            a = int(gen.integers(p))
            b = (a + int(gen.integers(2, p - 1))) % p
            patches[a] += list(gen.choice(segs[b], size=overlap, replace=False))
            edges.append((a, b))
    return [np.unique(np.asarray(P, dtype=np.int64)) for P in patches], np.asarray(edges)


def generate_synthetic(n, d, p, overlap, sigma=0.0, seed=0):
    """Random patch problem with known transforms.

    Ground-truth rows are i.i.d. standard normal. Per patch: scale uniform in
    ``[0.5, 2]``, Haar orthogonal map, translation uniform in ``[-10, 10]^d``
    and i.i.d. ``N(0, sigma^2)`` coordinate noise.
    """
    if overlap < d + 1:
        raise InfeasibleError(f"overlap {overlap} must be at least d+1={d + 1}")
    if p < 1:
        raise InfeasibleError("need at least one patch")
    gen = rng.generator(seed, rng.SYNTH)
    X = gen.standard_normal((n, d))
    patches, edges = synthetic_cover(n, p, overlap, gen)
    scales = gen.uniform(0.5, 2.0, p)
    rotations = np.stack([random_orthogonal(d, gen) for _ in range(p)])
    translations = gen.uniform(-10, 10, (p, d))
    noise = tuple(sigma * gen.standard_normal((P.size, d)) for P in patches)
    coords = tuple(scales[k] * X[P] @ rotations[k].T + translations[k] + noise[k]
                   for k, P in enumerate(patches))
    pg = PatchGraph(tuple(patches), edges, coords)
    truth = EmbeddingMatrix(X, np.arange(n))
    return SyntheticProblem(truth, pg, scales, rotations, translations, noise, float(sigma))


def _matched(a, b):
    if a.d != b.d:
        raise DataError(f"embedding dimensions differ: {a.d} vs {b.d}")
    ia, ib = np.sort(a.node_ids), np.sort(b.node_ids)
    if ia.size != ib.size or np.any(ia != ib):
        raise DataError("embeddings cover different node sets")
    return a.rows(ib), b.rows(ib)


def procrustes_error(a, b):
    """Relative residual of the best similarity map from ``a`` onto ``b``.

    Minimizes ``||c * A Q + t - B||_F`` over scale ``c``, orthogonal ``Q`` and
    shift ``t``, divided by the centered norm of ``B``.
    """
    A, B = _matched(a, b)
    A = A - A.mean(axis=0)
    B = B - B.mean(axis=0)
    nb = np.linalg.norm(B)
    if nb < 1e-300:
        raise DegenerateError("reference embedding has zero spread")
    na = np.linalg.norm(A)
    if na < 1e-300:
        return 1.0
    U, s, Vt = np.linalg.svd(A.T @ B)
    Q = U @ Vt
    c = s.sum() / na ** 2
    return float(np.linalg.norm(c * A @ Q - B) / nb)


def _edge_codes(g):
    e = g.edges()
    idx = g.index_of(e)
    return idx, idx[:, 0] * g.n + idx[:, 1]


def _sample_negatives(g, count, gen, edge_codes):
    n = g.n
    undirected = g.mode == UNDIRECTED
    total = n * (n - 1) // (2 if undirected else 1)
    if count > total - edge_codes.size:
        raise DataError(f"graph too dense: {total - edge_codes.size} non-edges available, "
                        f"{count} negatives requested")
    known = np.sort(edge_codes)
    got = np.zeros(0, dtype=np.int64)
    for _ in range(1000):
        need = count - got.size
        if need <= 0:
            break
        u = gen.integers(0, n, 2 * need + 16)
        v = gen.integers(0, n, 2 * need + 16)
        ok = u != v
        u, v = u[ok], v[ok]
        if undirected:
            u, v = np.minimum(u, v), np.maximum(u, v)
        codes = u * n + v
        pos = np.minimum(np.searchsorted(known, codes), max(known.size - 1, 0))
        if known.size:
            codes = codes[known[pos] != codes]
        got = np.unique(np.concatenate([got, codes]))
    else:
        raise DataError("negative sampling did not gather enough non-edges")
    got = gen.permutation(got)[:count]
    return np.stack([got // n, got % n], axis=1)


def _rank_auc(pos, neg):
    ranks = rankdata(np.concatenate([pos, neg]))
    m, k = pos.size, neg.size
    return float((ranks[:m].sum() - m * (m + 1) / 2) / (m * k))


def auc_details(emb, g, neg_samples=None, *, seed=0, exhaustive=None, dst_emb=None):
    """Edge-reconstruction AUC with dot-product scores.

    Exhaustive over all non-edges when ``exhaustive`` is set (the default for
    graphs of at most 2000 nodes with ``neg_samples`` unset); otherwise
    ``neg_samples`` distinct non-edges (default ``min(10 m, 10**6)``) are drawn
    uniformly by rejection. ``dst_emb`` scores directed graphs as
    source-row dot destination-row.

    Returns a dict with ``auc``, ``m`` and ``negatives``.
    """
    if g.m == 0:
        raise DataError("graph has no edges to reconstruct")
    src = emb.rows(g.node_ids)
    dst = src if dst_emb is None else dst_emb.rows(g.node_ids)
    idx, codes = _edge_codes(g)
    pos = np.einsum("ij,ij->i", src[idx[:, 0]], dst[idx[:, 1]])
    if exhaustive is None:
        exhaustive = neg_samples is None and g.n <= EXHAUSTIVE_MAX_NODES
    n = g.n
    if exhaustive:
        S = src @ dst.T
        mask = np.ones((n, n), dtype=bool)
        if g.mode == UNDIRECTED:
            mask = np.triu(mask, 1)
        else:
            np.fill_diagonal(mask, False)
        mask[idx[:, 0], idx[:, 1]] = False
        neg = S[mask]
        if neg.size == 0:
            raise DataError("graph is complete: no non-edges")
    else:
        if neg_samples is None:
            neg_samples = min(10 * g.m, 10 ** 6)
        gen = rng.generator(seed, rng.EVAL)
        pairs = _sample_negatives(g, int(neg_samples), gen, codes)
        neg = np.einsum("ij,ij->i", src[pairs[:, 0]], dst[pairs[:, 1]])
    return {"auc": _rank_auc(pos, neg), "m": int(g.m), "negatives": int(neg.size)}


def reconstruction_auc(emb, g, neg_samples=None, *, seed=0, exhaustive=None, dst_emb=None):
    """Rank-based, tie-corrected ROC AUC of true edges against non-edges."""
    return auc_details(emb, g, neg_samples, seed=seed, exhaustive=exhaustive, dst_emb=dst_emb)["auc"]


def planted_partition_graph(n, blocks, mean_degree, mixing=0.1, seed=0):
    """Stochastic block model with equal blocks and a given expected mean degree.

    ``mixing`` is the expected fraction of a node's edges that leave its block.
    """
    gen = rng.generator(seed, rng.SYNTH, 0x5B)
    labels = np.sort(np.arange(n) % blocks)
    size = n / blocks
    m_total = mean_degree * n / 2
    m_in = (1 - mixing) * m_total
    m_out = mixing * m_total
    p_in = m_in / (blocks * size * (size - 1) / 2)
    pairs_out = n * (n - 1) / 2 - blocks * size * (size - 1) / 2
    p_out = m_out / pairs_out if pairs_out > 0 else 0.0
    src, dst = [], []
    for u in range(n - 1):
        v = np.arange(u + 1, n)
        prob = np.where(labels[v] == labels[u], p_in, p_out)
        hit = v[gen.random(v.size) < prob]
        src.append(np.full(hit.size, u))
        dst.append(hit)
    g = SparseGraph.from_edges(np.concatenate(src), np.concatenate(dst), node_ids=np.arange(n))
    return g, labels


def cora_like_graph(seed=0):
    """Sparse 7-block graph with Cora's node count (2708) and mean degree (~4).

    Only the largest connected component is returned.
    """
    g, _ = planted_partition_graph(2708, 7, 3.9, mixing=0.2, seed=seed)
    return largest_connected_component(g)


__all__ = [
    "SyntheticProblem", "generate_synthetic", "procrustes_error", "reconstruction_auc",
    "auc_details", "planted_partition_graph", "cora_like_graph", "random_orthogonal",
    "synthetic_cover",
]
