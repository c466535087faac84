"""Overlapping patch construction.

Pipeline: partition the graph into disjoint clusters with streaming FENNEL,
turn clusters into an initial patch graph, sparsify the patch graph by
effective-resistance weighted sampling, then grow the patches into their
neighbors' clusters until every patch edge has the requested overlap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from . import kernels, rng
from .errors import ConfigError, DataError, DisconnectedError, InfeasibleError
from .graph import UNDIRECTED
from .linalg import cg


@dataclass(frozen=True, eq=False)
class Partition:
    """Disjoint clustering; ``assignment[i]`` is the cluster of internal node ``i``."""

    assignment: np.ndarray
    node_ids: np.ndarray
    p: int

    @cached_property
    def clusters(self):
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.searchsorted(self.assignment[order], np.arange(self.p + 1))
        return [self.node_ids[order[bounds[c]:bounds[c + 1]]] for c in range(self.p)]

    @property
    def sizes(self):
        return np.bincount(self.assignment, minlength=self.p)


@dataclass(frozen=True, eq=False)
class PatchGraph:
    """Patches (sorted arrays of node ids) joined by patch edges.

    ``edges`` is an ``(E, 2)`` array with ``i < j`` in lexicographic order.
    ``coords[k]``, when present, holds one row per node of ``patches[k]`` in
    the same (ascending id) order. ``clusters`` keeps the disjoint cores the
    patches were grown from.
    """

    patches: tuple
    edges: np.ndarray
    coords: tuple | None = None
    clusters: tuple | None = None

    def __post_init__(self):
        patches = tuple(np.unique(np.asarray(p, dtype=np.int64)) for p in self.patches)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            edges = np.sort(edges, axis=1)
            edges = np.unique(edges, axis=0)
            if np.any(edges[:, 0] == edges[:, 1]):
                raise DataError("patch graph has a self-loop")
            if edges.max() >= len(patches):
                raise DataError("patch edge refers to a missing patch")
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "edges", edges)
        if self.coords is not None:
            coords = tuple(np.asarray(c, dtype=np.float64) for c in self.coords)
            if len(coords) != len(patches):
                raise DataError("one coordinate matrix per patch required")
            dims = {c.shape[1] for c in coords}
            if len(dims) > 1:
                raise DataError(f"patch embeddings have different dimensions {sorted(dims)}")
            for k, (c, nodes) in enumerate(zip(coords, patches)):
                if c.shape[0] != nodes.size:
                    raise DataError(f"patch {k}: {c.shape[0]} coordinate rows for {nodes.size} nodes")
            object.__setattr__(self, "coords", coords)
        if self.clusters is not None:
            object.__setattr__(self, "clusters",
                               tuple(np.unique(np.asarray(c, dtype=np.int64)) for c in self.clusters))

    @property
    def p(self):
        return len(self.patches)

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @property
    def dim(self):
        return None if self.coords is None else self.coords[0].shape[1]

    @cached_property
    def overlaps(self):
        return [np.intersect1d(self.patches[i], self.patches[j], assume_unique=True)
                for i, j in self.edges]

    @cached_property
    def weights(self):
        return np.array([o.size for o in self.overlaps], dtype=np.float64)

    @cached_property
    def nodes(self):
        if not self.patches:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(self.patches))

    def adjacency(self, weights=None):
        w = np.ones(self.num_edges) if weights is None else np.asarray(weights, dtype=np.float64)
        i, j = self.edges[:, 0], self.edges[:, 1]
        a = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                          shape=(self.p, self.p))
        return a.tocsr()

    def components(self):
        if self.p == 0:
            return []
        _, labels = csgraph.connected_components(self.adjacency(), directed=False)
        return [np.flatnonzero(labels == c) for c in np.unique(labels)]

    def is_connected(self):
        return len(self.components()) <= 1

    def require_connected(self, what="patch graph"):
        comps = self.components()
        if len(comps) > 1:
            raise DisconnectedError(
                f"{what} is disconnected: {len(comps)} components "
                f"{[c.tolist() for c in comps[:5]]}{' ...' if len(comps) > 5 else ''}",
                components=comps,
            )

    def coords_for(self, k, ids):
        """Rows of patch ``k``'s coordinates for the sorted id array ``ids``."""
        pos = np.searchsorted(self.patches[k], ids)
        return self.coords[k][pos]

    def with_coords(self, coords):
        return replace(self, coords=tuple(coords))

    def with_edges(self, edges):
        return PatchGraph(self.patches, edges, self.coords, self.clusters)

    def with_patches(self, patches):
        return PatchGraph(tuple(patches), self.edges, None, self.clusters)

    def subgraph(self, indices):
        """Patch graph on the given patch indices, renumbered in that order."""
        indices = np.asarray(indices, dtype=np.int64)
        remap = np.full(self.p, -1)
        remap[indices] = np.arange(indices.size)
        keep = (remap[self.edges[:, 0]] >= 0) & (remap[self.edges[:, 1]] >= 0)
        edges = remap[self.edges[keep]]
        coords = None if self.coords is None else [self.coords[k] for k in indices]
        clusters = None if self.clusters is None else [self.clusters[k] for k in indices]
        return PatchGraph([self.patches[k] for k in indices], edges, coords, clusters)

    def __repr__(self):
        return f"PatchGraph(p={self.p}, edges={self.num_edges}, dim={self.dim})"


def min_cluster_size(dim):
    return math.ceil((dim + 1) / 2)


def fennel_partition(g, p, *, gamma=1.5, balance_slack=1.1, seed=0, dim=None,
                     min_size=None, passes=2, alpha=None, repair=True, connected=False):
    """Streaming FENNEL clustering into ``p`` parts.

    Nodes stream in ascending id order. ``alpha`` defaults to
    ``m * p**(gamma - 1) / n**gamma`` and clusters are capped at
    ``balance_slack * n / p`` nodes. ``passes`` counts the initial streaming
    pass plus refinement passes.

    With ``repair`` set, clusters that are internally disconnected have their
    stray components moved to the adjacent cluster they share most edges
    with, provided the target stays within the cap. With ``connected`` set,
    fragments the cap kept in place are then merged regardless, trading
    balance for connected clusters. Clusters below the minimum size
    (``ceil((dim + 1) / 2)`` when ``dim`` is given) then take boundary nodes
    from their largest neighbor.
    """
    if p <= 0:
        raise ConfigError(f"number of clusters must be positive, got {p}")
    if min_size is None:
        min_size = 1 if dim is None else min_cluster_size(dim)
    n = g.n
    if p * min_size > n:
        raise InfeasibleError(f"{p} clusters of at least {min_size} nodes need {p * min_size} nodes, graph has {n}")
    if g.mode != UNDIRECTED:
        raise ConfigError("FENNEL partitioning needs an undirected graph")
    assignment = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(p, dtype=np.int64)
    if p == 1:
        assignment[:] = 0
        return Partition(assignment, g.node_ids, 1)
    if alpha is None:
        alpha = g.m * p ** (gamma - 1) / n ** gamma
    cap = balance_slack * n / p
    # +1e-9 keeps an exactly integral cap inclusive without float noise
    kernels.fennel_stream(g.indptr, g.indices, assignment, sizes, float(alpha), float(gamma),
                          math.floor(cap + 1e-9) + 0.0, int(passes))
    if repair:
        _repair_connectivity(g, assignment, p, cap)
        if connected:
            # fragments the cap kept in place are merged regardless
            _repair_connectivity(g, assignment, p, math.inf, rounds=p + 5)
        _repair_min_size(g, assignment, p, min_size)
    return Partition(assignment, g.node_ids, p)


def _cluster_links(g, assignment, nodes, p):
    """Edge counts from ``nodes`` into each cluster."""
    sub = g.adjacency[nodes]
    return np.bincount(assignment[sub.indices], minlength=p)


def _repair_connectivity(g, assignment, p, cap, rounds=5):
    for _ in range(rounds):
        changed = False
        for c in range(p):
            members = np.flatnonzero(assignment == c)
            if members.size < 2:
                continue
            sub = g.adjacency[members][:, members]
            ncomp, labels = csgraph.connected_components(sub, directed=False)
            if ncomp == 1:
                continue
            sizes = np.bincount(labels)
            main = int(np.argmax(sizes))
            for comp in range(ncomp):
                if comp == main:
                    continue
                nodes = members[labels == comp]
                links = _cluster_links(g, assignment, nodes, p)
                links[c] = 0
                sizes_now = np.bincount(assignment, minlength=p)
                links[sizes_now + nodes.size > cap] = 0
                if links.max() == 0:
                    continue  # nowhere to go without breaking the balance cap
                assignment[nodes] = int(np.argmax(links))
                changed = True
        if not changed:
            return


def _repair_min_size(g, assignment, p, min_size):
    n = assignment.size
    for _ in range(n * p + 1):
        sizes = np.bincount(assignment, minlength=p)
        small = np.flatnonzero(sizes < min_size)
        if small.size == 0:
            return
        c = int(small[np.argmin(sizes[small])])
        members = np.flatnonzero(assignment == c)
        if members.size:
            nb = np.unique(g.adjacency[members].indices)
            nb = nb[assignment[nb] != c]
        else:
            nb = np.zeros(0, dtype=np.int64)
        donors = np.unique(assignment[nb]) if nb.size else np.zeros(0, dtype=np.int64)
        donors = donors[sizes[donors] > min_size]
        if donors.size:
            donor = int(donors[np.argmax(sizes[donors])])  # argmax: lowest index on ties
            cand = nb[assignment[nb] == donor]
            # prefer the boundary node with most edges into the small cluster
            into = np.array([np.count_nonzero(assignment[g.neighbors(v)] == c) for v in cand])
            v = int(cand[np.argmax(into)])
        else:
            # no adjacent donor: seed from the largest cluster's least attached node
            donor = int(np.argmax(sizes))
            dm = np.flatnonzero(assignment == donor)
            internal = np.array([np.count_nonzero(assignment[g.neighbors(u)] == donor) for u in dm])
            v = int(dm[np.argmin(internal)])
        assignment[v] = c
    raise InfeasibleError("could not satisfy the minimum cluster size")


def build_patch_graph(g, part):
    """Patches initialized to clusters; an edge wherever a graph edge crosses."""
    a = g.adjacency.tocoo()
    ca, cb = part.assignment[a.row], part.assignment[a.col]
    cross = ca < cb
    edges = np.unique(np.stack([ca[cross], cb[cross]], axis=1), axis=0)
    clusters = part.clusters
    return PatchGraph(tuple(clusters), edges, None, tuple(clusters))


def _membership(g, pg):
    rows = np.concatenate([g.index_of(P) for P in pg.patches]) if pg.p else np.zeros(0, int)
    cols = np.repeat(np.arange(pg.p), [P.size for P in pg.patches])
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(g.n, pg.p))


def conductance_weights(g, pg):
    """``cut(P_i, P_j) / min(vol_i, vol_j)`` for every patch edge.

    ``vol_i`` counts edges with at least one endpoint in ``P_i``. Cuts count
    ordered node pairs ``u in P_i, v in P_j``, which equals the number of
    crossing edges for disjoint patches.
    """
    if pg.num_edges == 0:
        return np.zeros(0)
    M = _membership(g, pg)
    AM = g.adjacency.astype(np.float64) @ M
    K = (M.T @ AM).toarray()
    deg_sum = np.asarray(M.T @ g.degree().astype(np.float64)).ravel()
    vol = deg_sum - np.diag(K) / 2
    i, j = pg.edges[:, 0], pg.edges[:, 1]
    return K[i, j] / np.minimum(vol[i], vol[j])


def weighted_laplacian(pg, weights):
    a = pg.adjacency(weights)
    return sp.diags(np.asarray(a.sum(axis=1)).ravel()) - a


def effective_resistances(pg, weights, edges=None, *, rtol=1e-10):
    """Effective resistance across each listed patch pair (default: all edges).

    Solves ``L x = e_i - e_j`` by conjugate gradients on the weighted patch
    graph Laplacian for all pairs at once. With more pairs than patches the
    pseudoinverse itself is formed instead, from the ``p`` minimum-norm
    solutions of ``L x = e_i - 1/p``.
    """
    pg.require_connected("weighted patch graph")
    edges = pg.edges if edges is None else np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.shape[0] == 0:
        return np.zeros(0)
    L = weighted_laplacian(pg, weights).tocsr()
    E = edges.shape[0]
    i, j = edges[:, 0], edges[:, 1]
    if E > pg.p:
        p = pg.p
        Lp, _ = cg(L, np.eye(p) - 1.0 / p, rtol=rtol)
        Lp = 0.5 * (Lp + Lp.T)
        return Lp[i, i] + Lp[j, j] - 2 * Lp[i, j]
    rhs = np.zeros((pg.p, E))
    cols = np.arange(E)
    rhs[i, cols] = 1.0
    rhs[j, cols] = -1.0
    x, _ = cg(L, rhs, rtol=rtol)
    return x[i, cols] - x[j, cols]


def effective_resistance(pg, weights, edge, *, rtol=1e-10):
    return float(effective_resistances(pg, weights, [edge], rtol=rtol)[0])


def maximum_spanning_tree(p, edges, weights):
    """Kruskal; ties go to the lexicographically smallest patch pair.

    Returns a boolean mask over ``edges``.
    """
    order = np.lexsort((edges[:, 1], edges[:, 0], -np.asarray(weights)))
    parent = np.arange(p)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    mask = np.zeros(edges.shape[0], dtype=bool)
    count = 0
    for e in order:
        a, b = find(edges[e, 0]), find(edges[e, 1])
        if a != b:
            parent[a] = b
            mask[e] = True
            count += 1
            if count == p - 1:
                break
    return mask


def sparsify_patch_graph(pg, g, k, *, seed=0, resistance=True, literal=False):
    """Reduce the patch graph to mean degree ``k``.

    Keeps a maximum spanning tree under ``w = r * c`` (effective resistance
    times conductance, or ``c`` alone when ``resistance`` is off) and adds
    edges sampled without replacement with probability proportional to ``w``
    until ``ceil(k * p / 2)`` edges are kept. ``literal`` instead samples
    ``(k - 1) * p + 1`` extra edges on top of the tree.
    """
    if k < 2:
        raise ConfigError(f"target degree must be at least 2, got {k}")
    pg.require_connected()
    E, p = pg.num_edges, pg.p
    if literal:
        target = min(E, p - 1 + (k - 1) * p + 1)
    else:
        target = min(E, math.ceil(k * p / 2))
    if E <= target:
        return pg
    c = conductance_weights(g, pg)
    w = c * effective_resistances(pg, c) if resistance else c
    tree = maximum_spanning_tree(p, pg.edges, w)
    rest = np.flatnonzero(~tree)
    n_extra = target - int(tree.sum())
    chosen = np.zeros(0, dtype=np.int64)
    if n_extra > 0:
        gen = rng.generator(seed, rng.SPARSIFY)
        prob = w[rest] / w[rest].sum()
        chosen = gen.choice(rest, size=n_extra, replace=False, p=prob)
    keep = np.sort(np.concatenate([np.flatnonzero(tree), chosen]))
    return pg.with_edges(pg.edges[keep])


def expand_patches(pg, g, l, u, *, seed=0, dim=None):
    """Grow each patch into its neighbors' clusters by breadth-first frontiers.

    For every patch edge, in both directions, patch ``i`` absorbs frontier
    nodes of cluster ``j`` (starting from the nodes of ``C_j`` adjacent to
    ``C_i``) until it holds at least ``ceil(l / 2)`` nodes of ``C_j``. A
    frontier that would push past ``u / 2`` nodes is subsampled uniformly to
    land exactly on ``u / 2``. Afterwards every patch edge overlaps in at
    least ``l`` nodes.
    """
    if dim is not None and l < dim + 1:
        raise ConfigError(f"min overlap l={l} must be at least dim+1={dim + 1}")
    if u < 2 * l:
        raise ConfigError(f"max overlap u={u} must be at least 2*l={2 * l}")
    if pg.clusters is None:
        raise ConfigError("patch graph carries no cluster cores to expand from")
    pg.require_connected()
    half_l = math.ceil(l / 2)
    half_u = u // 2
    n = g.n
    assign = np.full(n, -1, dtype=np.int64)
    for c, members in enumerate(pg.clusters):
        assign[g.index_of(members)] = c
    sizes = np.bincount(assign[assign >= 0], minlength=pg.p)
    indptr = np.asarray(g.indptr, dtype=np.int64)
    indices = np.asarray(g.indices, dtype=np.int64)
    nbrs = [[] for _ in range(pg.p)]
    for a, b in pg.edges:
        nbrs[a].append(b)
        nbrs[b].append(a)

    new_patches = []
    for i in range(pg.p):
        in_p = np.zeros(n, dtype=np.uint8)
        in_p[g.index_of(pg.patches[i])] = 1
        core = np.flatnonzero(assign == i)
        for j in sorted(nbrs[i]):
            if sizes[j] < half_l:
                raise InfeasibleError(
                    f"patch pair ({i}, {j}): cluster {j} has {sizes[j]} nodes, "
                    f"fewer than the {half_l} needed for overlap {l}")
            in_cj = (assign == j).astype(np.uint8)
            have = int(np.count_nonzero(in_p & in_cj))
            gen = rng.generator(seed, rng.EXPAND, i, j)
            F = kernels.frontier(indptr, indices, core, in_cj & (1 - in_p))
            while have < half_l:
                if F.size == 0:
                    raise InfeasibleError(
                        f"patch pair ({i}, {j}): only {have} nodes of cluster {j} reachable, "
                        f"need {half_l}")
                if F.size + have > half_u:
                    F = np.sort(gen.choice(F, size=half_u - have, replace=False))
                in_p[F] = 1
                have += F.size
                F = kernels.frontier(indptr, indices, F, in_cj & (1 - in_p))
        new_patches.append(g.node_ids[np.flatnonzero(in_p)])
    out = PatchGraph(tuple(new_patches), pg.edges, None, pg.clusters)
    low = out.weights < l
    if np.any(low):
        e = int(np.flatnonzero(low)[0])
        raise InfeasibleError(f"patch edge {tuple(out.edges[e])} overlaps in {int(out.weights[e])} < {l} nodes")
    return out


def build_patches(g, p, dim, l, u, k, *, seed=0, resistance=True, literal=False,
                  gamma=1.5, balance_slack=1.1):
    """Full pipeline: partition, patch graph, sparsify, expand."""
    if l < dim + 1:
        raise ConfigError(f"min overlap l={l} must be at least dim+1={dim + 1}")
    # connected clusters keep the expanded patches connected, which the
    # spectral backend needs
    part = fennel_partition(g, p, gamma=gamma, balance_slack=balance_slack, seed=seed, dim=dim,
                            connected=True)
    pg = build_patch_graph(g, part)
    if p > 1:
        pg.require_connected()
        pg = sparsify_patch_graph(pg, g, k, seed=seed, resistance=resistance, literal=literal)
        pg = expand_patches(pg, g, l, u, seed=seed, dim=dim)
    return pg
