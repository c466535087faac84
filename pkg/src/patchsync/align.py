"""Patch alignment by synchronization over scales, orthogonal maps and translations.

Convention: patch ``k`` holds coordinates ``X_k ~ s_k * X @ S_k.T + t_k`` of
an unknown global embedding ``X``. The relative estimates on a patch edge are
``r_ij ~ s_i / s_j`` and ``R_ij ~ S_i @ S_j.T``; a patch is aligned by
``X_k @ S_k / s_k + T_k``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, DataError, DegenerateError, DisconnectedError
from .graph import EmbeddingMatrix, SparseGraph
from .linalg import block_lanczos, cg, nearest_orthogonal
from .patches import PatchGraph, fennel_partition

log = logging.getLogger(__name__)

REFINE_STEPS = 3


@dataclass(frozen=True, eq=False)
class RelativeTransforms:
    """Per patch edge ``(i, j)``, ``i < j``: ``r_ij``, ``R_ij`` and ``w_ij``."""

    edges: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    weights: np.ndarray

    @property
    def dim(self):
        return self.rotations.shape[1]

    def scale(self, i, j):
        e, forward = self._find(i, j)
        return self.scales[e] if forward else 1.0 / self.scales[e]

    def rotation(self, i, j):
        e, forward = self._find(i, j)
        return self.rotations[e] if forward else self.rotations[e].T

    def _find(self, i, j):
        a, b = min(i, j), max(i, j)
        hit = np.flatnonzero((self.edges[:, 0] == a) & (self.edges[:, 1] == b))
        if hit.size == 0:
            raise KeyError((i, j))
        return int(hit[0]), i < j


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    scales: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray
    embedding: EmbeddingMatrix
    diagnostics: dict = field(default_factory=dict)

    def transform(self, k, coords):
        """Apply patch ``k``'s estimated transform to raw patch coordinates."""
        return np.asarray(coords) @ self.rotations[k] / self.scales[k] + self.translations[k]

    def aligned_patches(self, pg):
        return [self.transform(k, pg.coords[k]) for k in range(pg.p)]


def _centered(x):
    x = np.asarray(x, dtype=np.float64)
    return x - x.mean(axis=0)


def estimate_relative_scale(xi, xj):
    """Ratio of the centered Frobenius norms of two matched point sets."""
    num = np.linalg.norm(_centered(xi))
    den = np.linalg.norm(_centered(xj))
    if den < 1e-12:
        raise DegenerateError("overlap points of the second patch coincide; relative scale undefined")
    return float(num / den)


def estimate_relative_rotation(xi, xj):
    """Orthogonal ``R`` minimizing ``||xi_c - xj_c @ R.T||_F`` over centered overlaps.

    Rotations and reflections are both admissible.
    """
    ci, cj = _centered(xi), _centered(xj)
    d = ci.shape[1]
    U, s, Vt = np.linalg.svd(ci.T @ cj)
    if d > 1:
        rank = int(np.sum(s > 1e-12 * max(s[0], 1e-300)))
        if s[0] < 1e-300 or rank < d - 1:
            raise DegenerateError(f"overlap cross-covariance has rank {rank} < {d - 1}; rotation ambiguous")
    elif s[0] < 1e-300:
        raise DegenerateError("overlap cross-covariance vanishes; rotation ambiguous")
    return U @ Vt


def estimate_relative_transforms(pg):
    """Relative scale and orthogonal transform on every patch edge."""
    d = pg.dim
    E = pg.num_edges
    scales = np.empty(E)
    rotations = np.empty((E, d, d))
    for e, ((i, j), ov) in enumerate(zip(pg.edges, pg.overlaps)):
        xi = pg.coords_for(i, ov)
        xj = pg.coords_for(j, ov)
        scales[e] = estimate_relative_scale(xi, xj)
        rotations[e] = estimate_relative_rotation(xi, xj)
    return RelativeTransforms(pg.edges.copy(), scales, rotations, pg.weights.copy())


def _require_connected(p, edges, what="patch graph"):
    if p > 1:
        PatchGraph([np.array([k]) for k in range(p)], edges).require_connected(what)


def synchronize_scales(transforms, p, *, tol=1e-10, max_iter=100_000):
    """Leading eigenvector of ``w_ij r_ij / sum_j w_ij``, normalized to mean 1.

    Power iteration on the lazy matrix ``(I + M) / 2`` (same eigenvectors,
    but the Perron root is strictly dominant even on bipartite patch graphs).
    Iteration stops when the estimated distance to the fixed point, i.e. the
    step size divided by one minus the observed contraction rate, drops below
    ``tol``.

    Returns ``(scales, info)``.
    """
    edges = transforms.edges
    _require_connected(p, edges)
    if p == 1:
        return np.ones(1), {"iterations": 0, "change": 0.0}
    i, j = edges[:, 0], edges[:, 1]
    w = transforms.weights
    r = transforms.scales
    deg = np.bincount(i, w, minlength=p) + np.bincount(j, w, minlength=p)
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    vals = np.concatenate([w * r / deg[i], w / r / deg[j]])
    M = sp.csr_matrix((vals, (rows, cols)), shape=(p, p))
    s = np.ones(p)
    prev_change = None
    for it in range(1, max_iter + 1):
        s_new = 0.5 * (s + M @ s)
        s_new /= s_new.mean()
        change = float(np.max(np.abs(s_new - s)))
        s = s_new
        if change == 0.0:
            break
        if prev_change is not None and prev_change > 0:
            rate = min(change / prev_change, 1 - 1e-12)
            if change * rate / (1 - rate) <= tol and change <= tol:
                break
        prev_change = change
    else:
        raise ConvergenceError(f"scale synchronization did not converge in {max_iter} iterations "
                               f"(last change {change:.3e})", residuals=np.array([change]))
    if np.any(s <= 0):
        raise DegenerateError("scale eigenvector has non-positive entries")
    return s, {"iterations": it, "change": change}


def rotation_sync_matrix(transforms, p):
    """Symmetrized block matrix ``D^-1/2 A D^-1/2`` with blocks ``A_ij = w_ij R_ij``."""
    d = transforms.dim
    edges = transforms.edges
    w = transforms.weights
    deg = np.bincount(edges[:, 0], w, minlength=p) + np.bincount(edges[:, 1], w, minlength=p)
    blocks, rows, cols = [], [], []
    for e, (a, b) in enumerate(edges):
        coef = w[e] / np.sqrt(deg[a] * deg[b])
        blocks.append(coef * transforms.rotations[e])
        rows.append(a)
        cols.append(b)
        blocks.append(coef * transforms.rotations[e].T)
        rows.append(b)
        cols.append(a)
    if not blocks:
        return sp.csr_matrix((p * d, p * d)), deg
    order = np.lexsort((cols, rows))
    data = np.stack(blocks)[order]
    rows = np.asarray(rows)[order]
    cols = np.asarray(cols)[order]
    indptr = np.searchsorted(rows, np.arange(p + 1))
    M = sp.bsr_matrix((data, cols, indptr), shape=(p * d, p * d), blocksize=(d, d))
    return M.tocsr(), deg


def synchronize_rotations(transforms, p, *, tol=1e-10, seed=0):
    """Orthogonal synchronization from the ``d`` leading eigenvectors.

    The eigenvectors of the row-normalized block matrix are recovered from
    its symmetric similar form, then each ``d x d`` block is projected to the
    nearest orthogonal matrix. ``Ŝ_i @ Ŝ_j.T`` approximates ``R_ij``; the
    common gauge is whatever the eigenbasis lands in.

    Returns ``(rotations, info)``.
    """
    d = transforms.dim
    edges = transforms.edges
    _require_connected(p, edges)
    if p == 1:
        return np.eye(d)[None], {"eigenvalues": np.ones(d), "residuals": np.zeros(d)}
    M, deg = rotation_sync_matrix(transforms, p)
    eig = block_lanczos(M, p * d, d, block_size=d, tol=tol, seed=seed)
    U = eig.vectors.reshape(p, d, d) / np.sqrt(deg)[:, None, None]
    out = np.empty((p, d, d))
    for k in range(p):
        try:
            out[k] = nearest_orthogonal(U[k] / np.linalg.norm(U[k]) * np.sqrt(d))
        except DegenerateError:
            raise DegenerateError(f"eigenvector block of patch {k} is near-singular; "
                                  f"cannot project to an orthogonal matrix") from None
    info = {
        "eigenvalues": eig.values,
        "residuals": eig.residuals,
        "basis_size": eig.basis_size,
        "iterations": eig.iterations,
    }
    return out, info


def synchronize_translations(pg, rotated, *, rtol=1e-10):
    """Least-squares patch translations from mean overlap differences.

    Solves the normal equations of ``B T = C`` (``B`` the patch-graph incidence
    matrix) by conjugate gradients on the patch-graph Laplacian, with up to
    two rounds of residual refinement, then shifts the solution to zero
    column means.

    Returns ``(T, info)``.
    """
    p = pg.p
    d = rotated[0].shape[1]
    _require_connected(p, pg.edges)
    E = pg.num_edges
    if E == 0:
        return np.zeros((p, d)), {"lsq_residual": 0.0, "iterations": 0}
    C = np.empty((E, d))
    for e, ((k, l), ov) in enumerate(zip(pg.edges, pg.overlaps)):
        if ov.size == 0:
            raise DataError(f"patch edge ({k}, {l}) has an empty overlap")
        xk = rotated[k][np.searchsorted(pg.patches[k], ov)]
        xl = rotated[l][np.searchsorted(pg.patches[l], ov)]
        C[e] = (xk - xl).mean(axis=0)
    k, l = pg.edges[:, 0], pg.edges[:, 1]
    rhs = np.zeros((p, d))
    np.add.at(rhs, l, C)
    np.add.at(rhs, k, -C)
    rhs -= rhs.mean(axis=0)
    L = pg.adjacency()
    L = (sp.diags(np.asarray(L.sum(axis=1)).ravel()) - L).tocsr()
    T = np.zeros((p, d))
    iterations = 0
    if not np.all(rhs == 0):
        # iterative refinement: each CG solve only needs rtol, but the
        # Laplacian's conditioning would otherwise leak into the solution error
        bnorm = np.linalg.norm(rhs)
        for _ in range(REFINE_STEPS):
            r = rhs - L @ T
            r -= r.mean(axis=0)
            if np.linalg.norm(r) <= 1e-15 * bnorm:
                break
            delta, info = cg(L, r, rtol=rtol)
            T += delta
            iterations += info["iterations"]
    T = T - T.mean(axis=0)
    resid = float(np.linalg.norm(T[l] - T[k] - C))
    return T, {"lsq_residual": resid, "iterations": int(iterations)}


def stitch_centroid(pg, aligned, translations=None, *, nodes=None):
    """Per node, the mean of its aligned coordinates over the patches holding it."""
    d = aligned[0].shape[1]
    all_ids = nodes if nodes is not None else pg.nodes
    all_ids = np.asarray(all_ids, dtype=np.int64)
    sums = np.zeros((all_ids.size, d))
    counts = np.zeros(all_ids.size)
    for k, (ids, x) in enumerate(zip(pg.patches, aligned)):
        pos = np.searchsorted(all_ids, ids)
        if np.any(pos >= all_ids.size) or np.any(all_ids[np.minimum(pos, all_ids.size - 1)] != ids):
            raise DataError(f"patch {k} holds nodes outside the requested node set")
        shift = 0.0 if translations is None else translations[k]
        sums[pos] += x + shift
        counts[pos] += 1
    if np.any(counts == 0):
        missing = all_ids[counts == 0]
        from .errors import CoverError
        raise CoverError(f"node {int(missing[0])} is in no patch ({missing.size} uncovered)")
    return EmbeddingMatrix(sums / counts[:, None], all_ids)


def unaligned_centroid(pg):
    """Baseline: centroid of raw patch coordinates, no transforms applied."""
    return stitch_centroid(pg, pg.coords)


def align_patches(pg, *, scale_sync=False, tol=1e-10, seed=0):
    """Synchronize scales (optional), orthogonal maps and translations, then stitch.

    Patch edges whose overlap is smaller than ``d + 1`` are dropped before
    estimation; the remaining patch graph must be connected.
    """
    if pg.coords is None:
        raise DataError("patch graph has no coordinates to align")
    d = pg.dim
    p = pg.p
    diag = {"timings": {}}
    t0 = time.perf_counter()
    low = pg.weights < d + 1
    if np.any(low):
        diag["dropped_edges"] = pg.edges[low].tolist()
        log.warning("dropping %d patch edges with overlap < d+1", int(low.sum()))
        pg = pg.with_edges(pg.edges[~low])
    if p > 1:
        pg.require_connected()
    if p == 1 or pg.num_edges == 0:
        emb = stitch_centroid(pg, pg.coords)
        return AlignmentResult(np.ones(p), np.tile(np.eye(d), (p, 1, 1)), np.zeros((p, d)), emb, diag)

    rel = estimate_relative_transforms(pg)
    diag["timings"]["estimate"] = time.perf_counter() - t0

    t = time.perf_counter()
    if scale_sync:
        scales, info = synchronize_scales(rel, p, tol=tol)
        diag["scale_sync"] = info
    else:
        scales = np.ones(p)
    diag["timings"]["scales"] = time.perf_counter() - t

    t = time.perf_counter()
    rotations, info = synchronize_rotations(rel, p, tol=tol, seed=seed)
    diag["rotation_sync"] = {
        "eigenvalues": np.asarray(info["eigenvalues"]).tolist(),
        "max_residual": float(np.max(info["residuals"])),
        "basis_size": info.get("basis_size"),
    }
    diag["timings"]["rotations"] = time.perf_counter() - t

    t = time.perf_counter()
    rotated = [pg.coords[k] @ rotations[k] / scales[k] for k in range(p)]
    T, info = synchronize_translations(pg, rotated)
    diag["translation_sync"] = info
    diag["timings"]["translations"] = time.perf_counter() - t

    t = time.perf_counter()
    emb = stitch_centroid(pg, rotated, T)
    diag["timings"]["stitch"] = time.perf_counter() - t
    diag["timings"]["total"] = time.perf_counter() - t0
    return AlignmentResult(scales, rotations, T, emb, diag)


def hierarchical_align(pg, num_clusters, *, scale_sync=False, tol=1e-10, seed=0):
    """Two-level alignment: align within patch-graph clusters, then align the clusters.

    The patch graph is split with FENNEL; each cluster's aligned centroid
    becomes a super-patch, and super-patches joined by any original patch edge
    are aligned against each other. The per-patch transforms returned are the
    compositions of both levels, with scales renormalized to mean 1.
    """
    if num_clusters < 1:
        raise DataError("num_clusters must be at least 1")
    if pg.coords is None:
        raise DataError("patch graph has no coordinates to align")
    p, d = pg.p, pg.dim
    if num_clusters > p:
        raise DataError(f"cannot split {p} patches into {num_clusters} clusters")
    low = pg.weights < d + 1
    if np.any(low):
        log.warning("dropping %d patch edges with overlap < d+1", int(low.sum()))
        pg = pg.with_edges(pg.edges[~low])
    pg.require_connected()
    if num_clusters == 1:
        labels = np.zeros(p, dtype=np.int64)
    else:
        pgraph = SparseGraph.from_edges(pg.edges[:, 0], pg.edges[:, 1], node_ids=np.arange(p))
        labels = fennel_partition(pgraph, num_clusters, min_size=1, seed=seed, connected=True).assignment

    t0 = time.perf_counter()
    inner = []
    super_nodes, super_coords = [], []
    for c in range(num_clusters):
        members = np.flatnonzero(labels == c)
        sub = pg.subgraph(members)
        if not sub.is_connected():
            raise DisconnectedError(f"patch cluster {c} (patches {members.tolist()}) is internally disconnected")
        res = align_patches(sub, scale_sync=scale_sync, tol=tol, seed=seed)
        inner.append((members, res))
        super_nodes.append(res.embedding.node_ids)
        super_coords.append(res.embedding.values)

    la, lb = labels[pg.edges[:, 0]], labels[pg.edges[:, 1]]
    cross = la != lb
    sedges = np.unique(np.sort(np.stack([la[cross], lb[cross]], axis=1), axis=1), axis=0)
    spg = PatchGraph(tuple(super_nodes), sedges, tuple(super_coords))
    low = spg.weights < d + 1
    if np.any(low):
        a, b = spg.edges[np.flatnonzero(low)[0]]
        raise DataError(f"super-patches {a} and {b} overlap in {int(spg.weights[low][0])} < d+1 nodes")
    top = align_patches(spg, scale_sync=scale_sync, tol=tol, seed=seed)

    scales = np.empty(p)
    rotations = np.empty((p, d, d))
    translations = np.empty((p, d))
    for c, (members, res) in enumerate(inner):
        for local, k in enumerate(members):
            scales[k] = res.scales[local] * top.scales[c]
            rotations[k] = res.rotations[local] @ top.rotations[c]
            translations[k] = res.translations[local] @ top.rotations[c] / top.scales[c] + top.translations[c]
    factor = scales.mean()
    scales /= factor
    translations *= factor
    emb = top.embedding
    if factor != 1.0:
        emb = EmbeddingMatrix(emb.values * factor, emb.node_ids)
    diag = {
        "clusters": labels.tolist(),
        "inner": [r.diagnostics for _, r in inner],
        "top": top.diagnostics,
        "timings": {"total": time.perf_counter() - t0},
    }
    return AlignmentResult(scales, rotations, translations, emb, diag)
