# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops; see ``_kernels_py`` for the contract."""
import numpy as np
cimport numpy as cnp
from libc.math cimport pow, INFINITY

cnp.import_array()


def fennel_stream(indptr, indices, cnp.int64_t[::1] assignment,
                  cnp.int64_t[::1] sizes, double alpha, double gamma,
                  double cap, int passes):
    cdef const cnp.int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const cnp.int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef Py_ssize_t n = assignment.shape[0]
    cdef Py_ssize_t p = sizes.shape[0]
    cdef double[::1] counts = np.zeros(p, dtype=np.float64)
    cdef cnp.int64_t[::1] touched = np.zeros(p, dtype=np.int64)
    cdef Py_ssize_t v, j, c, ntouched, best, smallest
    cdef cnp.int64_t old, a
    cdef double coef = alpha * gamma
    cdef double expo = gamma - 1.0
    cdef double score, best_score
    cdef int it
    cdef Py_ssize_t moved = 0
    for it in range(passes):
        moved = 0
        for v in range(n):
            old = assignment[v]
            if old >= 0:
                sizes[old] -= 1
            ntouched = 0
            for j in range(ip[v], ip[v + 1]):
                a = assignment[ix[j]]
                if a >= 0:
                    if counts[a] == 0:
                        touched[ntouched] = a
                        ntouched += 1
                    counts[a] += 1.0
            best = -1
            best_score = -INFINITY
            smallest = 0
            for c in range(p):
                if sizes[c] < sizes[smallest]:
                    smallest = c
                if sizes[c] >= cap:
                    continue
                score = counts[c] - coef * pow(<double>sizes[c], expo)
                if best < 0 or score > best_score:
                    best = c
                    best_score = score
            if best < 0:
                best = smallest
            for j in range(ntouched):
                counts[touched[j]] = 0.0
            assignment[v] = best
            sizes[best] += 1
            if best != old:
                moved += 1
    return moved


def frontier(indptr, indices, nodes, allowed):
    cdef const cnp.int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const cnp.int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef const cnp.int64_t[::1] nd = np.ascontiguousarray(nodes, dtype=np.int64)
    cdef const cnp.uint8_t[::1] ok = np.ascontiguousarray(allowed, dtype=np.uint8)
    cdef Py_ssize_t n = ip.shape[0] - 1
    cdef cnp.uint8_t[::1] seen = np.zeros(n, dtype=np.uint8)
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef Py_ssize_t i, j, u, cnt = 0
    for i in range(nd.shape[0]):
        for j in range(ip[nd[i]], ip[nd[i] + 1]):
            u = ix[j]
            if ok[u] and not seen[u]:
                seen[u] = 1
                o[cnt] = u
                cnt += 1
    res = out[:cnt]
    res.sort()
    return res
