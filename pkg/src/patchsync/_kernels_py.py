"""Pure-Python/numpy versions of the hot loops.

Signatures and results match the compiled ``_kernels`` module exactly; this
module is used when the extension is unavailable or disabled.
"""
import numpy as np


def fennel_stream(indptr, indices, assignment, sizes, alpha, gamma, cap, passes):
    """Streaming FENNEL assignment, in place, in node-index order.

    ``assignment[v] < 0`` marks an unassigned node. The first pass places
    every unassigned node; later passes re-place each node after removing it
    from its current cluster. Node ``v`` goes to the cluster maximizing
    ``|N(v) & C| - alpha * gamma * |C|**(gamma - 1)`` among clusters with
    ``|C| < cap``, ties to the lowest index.

    Returns the number of nodes that changed cluster in the last pass.
    """
    n = assignment.shape[0]
    p = sizes.shape[0]
    penalty_coef = alpha * gamma
    expo = gamma - 1.0
    moved = 0
    for _ in range(passes):
        moved = 0
        for v in range(n):
            old = assignment[v]
            if old >= 0:
                sizes[old] -= 1
            nb = assignment[indices[indptr[v]:indptr[v + 1]]]
            counts = np.bincount(nb[nb >= 0], minlength=p).astype(np.float64)
            score = counts - penalty_coef * np.power(sizes.astype(np.float64), expo)
            score[sizes >= cap] = -np.inf
            best = int(np.argmax(score))
            if not np.isfinite(score[best]):
                best = int(np.argmin(sizes))
            assignment[v] = best
            sizes[best] += 1
            if best != old:
                moved += 1
    return moved


def frontier(indptr, indices, nodes, allowed):
    """Sorted unique neighbors ``u`` of ``nodes`` with ``allowed[u]`` set."""
    if len(nodes) == 0:
        return np.zeros(0, dtype=np.int64)
    nodes = np.asarray(nodes, dtype=np.int64)
    starts = indptr[nodes]
    ends = indptr[nodes + 1]
    lengths = ends - starts
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offsets = np.repeat(starts - np.cumsum(lengths) + lengths, lengths) + np.arange(total)
    nb = np.unique(indices[offsets])
    return nb[allowed[nb].astype(bool)].astype(np.int64)
