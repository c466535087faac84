"""Structure-only patch embeddings and patch coordinate files.

Two backends are provided: a bipartite SVD embedding of the degree-normalized
adjacency (sources and destinations get separate coordinates) and a spectral
embedding of undirected patches. Both remove the trivial singular/eigen
direction ``D^{1/2} 1`` and fix column signs so the entry of largest
magnitude is positive.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from . import io
from .errors import ConfigError, DataError, DegenerateError, DisconnectedError
from .graph import BIPARTITE, UNDIRECTED, EmbeddingMatrix, SparseGraph, induced_subgraph
from .linalg import block_lanczos, fix_signs

log = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class BipartiteEmbedding:
    """Source coordinates ``X = D_s^-1/2 U`` and destination coordinates ``Y = D_d^-1/2 V``."""

    source_ids: np.ndarray
    destination_ids: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    singular_values: np.ndarray
    U: np.ndarray
    V: np.ndarray
    dropped: np.ndarray

    @property
    def sources(self):
        return EmbeddingMatrix(self.X, self.source_ids)

    @property
    def destinations(self):
        return EmbeddingMatrix(self.Y, self.destination_ids)


def _augmented(An, u0, v0):
    ns = An.shape[0]
    AnT = An.T.tocsr()

    def matvec(W):
        top, bottom = W[:ns], W[ns:]
        out = np.empty_like(W)
        out[:ns] = An @ bottom - np.outer(u0, v0 @ bottom)
        out[ns:] = AnT @ top - np.outer(v0, u0 @ top)
        return out

    return matvec


def svd_bipartite_embed(g, d, *, tol=1e-9, seed=0):
    """Leading nontrivial singular triplets of ``D_s^-1/2 A D_d^-1/2``.

    Rows of the (directed) adjacency are sources, columns destinations.
    Nodes that are neither a source nor a destination are dropped and listed
    in ``dropped``. The trivial pair ``(D_s^1/2 1, D_d^1/2 1)``, which has
    singular value 1, is deflated exactly; the rest is found by block Lanczos
    on the symmetric augmented operator ``[[0, B], [B^T, 0]]`` followed by a
    Rayleigh-Ritz SVD on the two recovered subspaces.

    Raises :class:`ConfigError` when ``d >= min(#sources, #destinations) - 1``
    and :class:`DegenerateError` when fewer than ``d`` nontrivial singular
    values are nonzero.
    """
    if d < 1:
        raise ConfigError(f"embedding dimension must be positive, got {d}")
    A = g.adjacency.astype(np.float64)
    out_deg = np.asarray(A.sum(axis=1)).ravel()
    in_deg = np.asarray(A.sum(axis=0)).ravel()
    src = np.flatnonzero(out_deg > 0)
    dst = np.flatnonzero(in_deg > 0)
    dropped = g.node_ids[(out_deg == 0) & (in_deg == 0)]
    if dropped.size:
        log.info("dropping %d zero-degree nodes", dropped.size)
    ns, nd = src.size, dst.size
    if d >= min(ns, nd) - 1:
        raise ConfigError(f"dimension {d} too large for {ns} sources and {nd} destinations "
                          f"(need d < {min(ns, nd) - 1})")
    B = A[src][:, dst].tocsr()
    ds, dd = out_deg[src], in_deg[dst]
    An = (sp.diags(1 / np.sqrt(ds)) @ B @ sp.diags(1 / np.sqrt(dd))).tocsr()
    u0 = np.sqrt(ds) / np.linalg.norm(np.sqrt(ds))
    v0 = np.sqrt(dd) / np.linalg.norm(np.sqrt(dd))
    eig = block_lanczos(_augmented(An, u0, v0), ns + nd, d, block_size=d, tol=tol, seed=seed)

    def basis(W, t):
        W = W - np.outer(t, t @ W)
        Q, _ = np.linalg.qr(W)
        return Q - np.outer(t, t @ Q)

    Qu = basis(eig.vectors[:ns], u0)
    Qv = basis(eig.vectors[ns:], v0)
    small = Qu.T @ (An @ Qv) - np.outer(Qu.T @ u0, v0 @ Qv)
    a, s, bt = np.linalg.svd(small)
    if s[-1] < RANK_TOL:
        raise DegenerateError(f"normalized adjacency has only {int(np.sum(s >= RANK_TOL))} nonzero "
                              f"nontrivial singular values, {d} requested (rank deficient)")
    U = Qu @ a
    V = Qv @ bt.T
    U, V = fix_signs(U, V)
    return BipartiteEmbedding(
        source_ids=g.node_ids[src],
        destination_ids=g.node_ids[dst],
        X=U / np.sqrt(ds)[:, None],
        Y=V / np.sqrt(dd)[:, None],
        singular_values=s,
        U=U,
        V=V,
        dropped=dropped,
    )


def spectral_embed(g, d, *, tol=1e-9, seed=0):
    """``d`` leading nontrivial eigenvectors of ``D^-1/2 A D^-1/2``, rows scaled by ``D^-1/2``."""
    if g.mode != UNDIRECTED:
        raise ConfigError("spectral embedding needs an undirected graph")
    if d < 1:
        raise ConfigError(f"embedding dimension must be positive, got {d}")
    n = g.n
    if d >= n - 1:
        raise ConfigError(f"dimension {d} too large for a patch of {n} nodes (need d < {n - 1})")
    ncomp, labels = csgraph.connected_components(g.adjacency, directed=False)
    if ncomp > 1:
        comps = [g.node_ids[labels == c] for c in range(ncomp)]
        raise DisconnectedError(f"patch is disconnected into {ncomp} components", components=comps)
    deg = g.degree().astype(np.float64)
    inv = 1 / np.sqrt(deg)
    An = (sp.diags(inv) @ g.adjacency.astype(np.float64) @ sp.diags(inv)).tocsr()
    u0 = np.sqrt(deg) / np.linalg.norm(np.sqrt(deg))
    eig = block_lanczos(An, n, d, block_size=d, tol=tol, deflate=u0[:, None], seed=seed)
    vecs = fix_signs(eig.vectors)
    return EmbeddingMatrix(vecs * inv[:, None], g.node_ids)


def _embed_one(args):
    g, nodes, d, backend, seed = args
    sub = induced_subgraph(g, nodes)
    if backend == "spectral":
        return spectral_embed(sub, d, seed=seed), None
    if g.mode == UNDIRECTED:
        # symmetric adjacency read as sources x destinations
        sub = SparseGraph(sub.adjacency, sub.node_ids, BIPARTITE)
    res = svd_bipartite_embed(sub, d, seed=seed)
    return res.sources, res.destinations


def embed_patches(g, patches, d, *, backend="spectral", seed=0, jobs=1):
    """Embed every patch independently.

    Returns a list of ``(primary, secondary)`` pairs; ``secondary`` holds the
    destination embedding for the SVD backend and is ``None`` otherwise.
    """
    if backend not in ("spectral", "svd"):
        raise ConfigError(f"unknown embedding backend {backend!r}")
    tasks = [(g, nodes, d, backend, seed) for nodes in patches]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_embed_one, tasks))
    out = []
    for k, t in enumerate(tasks):
        try:
            out.append(_embed_one(t))
        except (DataError, ConfigError, DegenerateError) as exc:
            raise type(exc)(f"patch {k}: {exc}") from exc
    return out


def write_patch_coords(directory, embeddings, role=None):
    for k, emb in enumerate(embeddings):
        io.write_embedding_binary(emb.sorted(), io.patch_coords_path(directory, k, role))


def load_patch_coords(directory, pg, role=None):
    """Attach per-patch coordinate files to a patch graph.

    Each file's node ids must equal the patch's node set, and all files must
    share one dimension.
    """
    coords = []
    dim = None
    for k, nodes in enumerate(pg.patches):
        path = io.patch_coords_path(directory, k, role)
        if not path.exists():
            raise DataError(f"patch {k}: coordinate file {path} missing")
        emb = io.read_embedding(path)
        if dim is None:
            dim = emb.d
        elif emb.d != dim:
            raise DataError(f"patch {k}: dimension mismatch, file has d={emb.d} but patch 0 has d={dim}")
        ids = np.sort(emb.node_ids)
        missing = np.setdiff1d(nodes, ids)
        if missing.size:
            raise DataError(f"patch {k}: node {int(missing[0])} missing from {path.name}")
        extra = np.setdiff1d(ids, nodes)
        if extra.size:
            raise DataError(f"patch {k}: node {int(extra[0])} in {path.name} is not in the patch")
        coords.append(emb.rows(nodes))
    return pg.with_coords(tuple(coords))
