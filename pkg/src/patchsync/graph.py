"""Graph and embedding containers plus edge-list IO.

Nodes carry arbitrary non-negative integer ids. Internally every graph keeps
its ids sorted ascending, so internal index ``i`` is simply the rank of the
id and the mapping is stable for the lifetime of the object.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import DataError, ParseError

UNDIRECTED = "undirected"
BIPARTITE = "bipartite-directed"
MODES = (UNDIRECTED, BIPARTITE)

_MAX_ID = np.iinfo(np.int64).max


def _as_ids(ids):
    arr = np.asarray(ids)
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    if arr.dtype.kind not in "iu":
        raise DataError("node ids must be integers")
    if arr.dtype.kind == "u" and arr.max() > _MAX_ID:
        raise DataError("node ids above 2**63-1 are not supported")
    arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise DataError("node ids must be non-negative")
    return arr


def _freeze(arr):
    arr = np.asarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Unweighted graph on a dense internal index ``0..n-1``.

    ``adjacency`` is a binary CSR matrix. In undirected mode it is symmetric
    without self-loops; in bipartite-directed mode row ``i`` lists the
    destinations reached from source ``i``.
    """

    adjacency: sp.csr_matrix
    node_ids: np.ndarray
    mode: str = UNDIRECTED

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown graph mode {self.mode!r}")
        _freeze(self.node_ids)
        for a in (self.adjacency.indptr, self.adjacency.indices, self.adjacency.data):
            a.setflags(write=False)

    @classmethod
    def from_edges(cls, src, dst, mode=UNDIRECTED, node_ids=None):
        """Build a graph from parallel arrays of external ids.

        Duplicate edges collapse to one. Self-loops are dropped in undirected
        mode. ``node_ids`` may list extra (isolated) nodes.
        """
        src = _as_ids(src)
        dst = _as_ids(dst)
        if src.shape != dst.shape:
            raise ValueError("src and dst must have the same length")
        ids = np.concatenate([src, dst])
        if node_ids is not None:
            ids = np.concatenate([ids, _as_ids(node_ids)])
        ids = np.unique(ids)
        n = ids.size
        u = np.searchsorted(ids, src)
        v = np.searchsorted(ids, dst)
        if mode == UNDIRECTED:
            keep = u != v
            u, v = u[keep], v[keep]
            u, v = np.concatenate([u, v]), np.concatenate([v, u])
        a = sp.csr_matrix((np.ones(u.size, dtype=np.int8), (u, v)), shape=(n, n))
        a.sum_duplicates()
        a.data[:] = 1
        a.sort_indices()
        return cls(a, ids, mode)

    @classmethod
    def empty(cls, mode=UNDIRECTED):
        return cls(sp.csr_matrix((0, 0), dtype=np.int8), np.zeros(0, dtype=np.int64), mode)

    @property
    def n(self):
        return self.node_ids.size

    @property
    def m(self):
        nnz = self.adjacency.nnz
        return nnz // 2 if self.mode == UNDIRECTED else nnz

    @property
    def indptr(self):
        return self.adjacency.indptr

    @property
    def indices(self):
        return self.adjacency.indices

    def degree(self):
        return np.diff(self.adjacency.indptr)

    def in_degree(self):
        return np.bincount(self.adjacency.indices, minlength=self.n)

    def neighbors(self, i):
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def index_of(self, ids):
        """Internal indices for external ids; raises on unknown ids."""
        ids = np.asarray(ids, dtype=np.int64)
        if self.n == 0:
            if ids.size:
                raise DataError(f"unknown node id {int(ids.flat[0])}")
            return np.zeros(ids.shape, dtype=np.int64)
        idx = np.minimum(np.searchsorted(self.node_ids, ids), self.n - 1)
        bad = self.node_ids[idx] != ids
        if np.any(bad):
            raise DataError(f"unknown node id {int(ids[bad].flat[0])}")
        return idx

    def edges(self):
        """Edge array of external ids; each undirected edge listed once (u < v)."""
        coo = self.adjacency.tocoo()
        u, v = coo.row, coo.col
        if self.mode == UNDIRECTED:
            keep = u < v
            u, v = u[keep], v[keep]
        order = np.lexsort((v, u))
        return np.stack([self.node_ids[u[order]], self.node_ids[v[order]]], axis=1)

    def is_connected(self):
        if self.n == 0:
            return True
        ncomp, _ = csgraph.connected_components(self.adjacency, directed=False)
        return ncomp == 1

    def __repr__(self):
        return f"SparseGraph(n={self.n}, m={self.m}, mode={self.mode!r})"


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Row ``r`` of ``values`` holds the coordinates of node ``node_ids[r]``."""

    values: np.ndarray
    node_ids: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError("embedding values must be a 2-d array")
        ids = _as_ids(self.node_ids)
        if ids.shape != (values.shape[0],):
            raise DataError("one node id per embedding row required")
        if not np.all(np.isfinite(values)):
            raise DataError("embedding contains non-finite values")
        if np.unique(ids).size != ids.size:
            raise DataError("duplicate node ids in embedding")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "node_ids", _freeze(ids))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    @cached_property
    def _order(self):
        order = np.argsort(self.node_ids, kind="stable")
        return order, self.node_ids[order]

    def rows(self, ids):
        """Coordinates for ``ids`` in the order given."""
        ids = np.asarray(ids, dtype=np.int64)
        order, sorted_ids = self._order
        if self.n == 0:
            if ids.size:
                raise DataError(f"node id {int(ids.flat[0])} not in embedding")
            return np.zeros((0, self.d))
        pos = np.minimum(np.searchsorted(sorted_ids, ids), self.n - 1)
        bad = sorted_ids[pos] != ids
        if np.any(bad):
            raise DataError(f"node id {int(ids[bad].flat[0])} not in embedding")
        return self.values[order[pos]]

    def sorted(self):
        order = np.argsort(self.node_ids, kind="stable")
        return EmbeddingMatrix(self.values[order], self.node_ids[order])

    def __repr__(self):
        return f"EmbeddingMatrix(n={self.n}, d={self.d})"


def _parse_lines(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    rows = []
    ncols = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ParseError(f"expected 2 or 3 columns, got {len(parts)}", path, lineno)
            try:
                vals = [int(x) for x in parts]
            except ValueError:
                raise ParseError(f"non-integer field in {line!r}", path, lineno) from None
            if any(x < 0 for x in vals):
                raise ParseError("negative id", path, lineno)
            if ncols is None:
                ncols = len(vals)
            elif len(vals) != ncols:
                raise ParseError("inconsistent column count", path, lineno)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: edge list is empty")
    return np.asarray(rows, dtype=np.int64)


def load_edge_list(path, mode=UNDIRECTED):
    """Load a whitespace-separated edge list.

    A third (day) column is accepted and ignored, giving the graph aggregated
    over all days; use :func:`load_snapshots` for per-day graphs.
    """
    if mode not in MODES:
        raise ValueError(f"unknown graph mode {mode!r}")
    rows = _parse_lines(path)
    return SparseGraph.from_edges(rows[:, 0], rows[:, 1], mode)


def load_snapshots(path):
    """Load a temporal edge list ``u v day`` into per-day directed graphs."""
    rows = _parse_lines(path)
    if rows.shape[1] != 3:
        raise ParseError("temporal edge list needs a day column", Path(path))
    out = {}
    for day in np.unique(rows[:, 2]):
        sel = rows[rows[:, 2] == day]
        out[int(day)] = SparseGraph.from_edges(sel[:, 0], sel[:, 1], BIPARTITE)
    return out


def write_edge_list(g, path):
    e = g.edges()
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in e:
            fh.write(f"{u}\t{v}\n")


def largest_connected_component(g):
    if g.mode != UNDIRECTED:
        raise ValueError("largest_connected_component needs an undirected graph")
    if g.n == 0:
        return g
    _, labels = csgraph.connected_components(g.adjacency, directed=False)
    sizes = np.bincount(labels)
    best = sizes.max()
    # ids are sorted, so the component holding the smallest index among the
    # largest ones is the one with the smallest minimum id
    first = np.full(sizes.size, g.n)
    np.minimum.at(first, labels, np.arange(g.n))
    cands = np.flatnonzero(sizes == best)
    comp = cands[np.argmin(first[cands])]
    if best == g.n:
        return g
    return induced_subgraph(g, g.node_ids[labels == comp])


def induced_subgraph(g, nodes):
    if not isinstance(nodes, np.ndarray):
        nodes = np.fromiter(nodes, dtype=np.int64)
    nodes = np.unique(_as_ids(nodes))
    if nodes.size == 0:
        return SparseGraph.empty(g.mode)
    idx = g.index_of(nodes)
    sub = g.adjacency[idx][:, idx].tocsr()
    sub.sort_indices()
    return SparseGraph(sub, nodes, g.mode)
