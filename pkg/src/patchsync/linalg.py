"""Iterative solvers used by the synchronization and embedding stages.

Both solvers work on matrix-free operators (anything with ``@`` or a plain
callable) and on several right-hand sides or vectors at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, DegenerateError
from .rng import generator


def _as_matvec(op):
    if callable(op) and not hasattr(op, "shape"):
        return op
    return lambda x: op @ x


def cg(op, b, *, rtol=1e-10, maxiter=None, x0=None):
    """Conjugate gradients for a symmetric positive (semi-)definite operator.

    ``b`` may hold several right-hand sides as columns; each column runs its
    own recurrence. For a singular but consistent system started from zero the
    iterates stay in the range of ``op`` and converge to the minimum-norm
    solution.

    Returns ``(x, info)`` where ``info`` has per-column relative residuals and
    the iteration count. Raises :class:`ConvergenceError` when any column
    misses ``rtol`` after ``maxiter`` iterations.
    """
    matvec = _as_matvec(op)
    b = np.asarray(b, dtype=np.float64)
    vector = b.ndim == 1
    B = b[:, None] if vector else b
    n, k = B.shape
    if maxiter is None:
        maxiter = max(10 * n, 100)
    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=np.float64).reshape(n, k)
    bnorm = np.linalg.norm(B, axis=0)
    bnorm[bnorm == 0] = 1.0
    R = B - matvec(X) if x0 is not None else B.copy()
    P = R.copy()
    rr = np.einsum("ij,ij->j", R, R)
    it = 0
    active = np.sqrt(rr) / bnorm > rtol
    while np.any(active) and it < maxiter:
        AP = matvec(P)
        pap = np.einsum("ij,ij->j", P, AP)
        alpha = np.where(active & (pap > 0), rr / np.where(pap > 0, pap, 1.0), 0.0)
        X += P * alpha
        R -= AP * alpha
        rr_new = np.einsum("ij,ij->j", R, R)
        beta = np.where(active, rr_new / np.where(rr > 0, rr, 1.0), 0.0)
        P = R + P * beta
        rr = rr_new
        it += 1
        active = np.sqrt(rr) / bnorm > rtol
    # report the true residual, not the recurrence one
    res = np.linalg.norm(B - matvec(X), axis=0) / bnorm
    if np.any(res > max(rtol, 1e-15) * 10) or np.any(active):
        raise ConvergenceError(
            f"CG did not reach relative residual {rtol:g} in {it} iterations "
            f"(worst {res.max():.3e})",
            residuals=res,
        )
    info = {"iterations": it, "relative_residual": res}
    return (X[:, 0] if vector else X), info


@dataclass
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    basis_size: int
    iterations: int


def _orthonormalize(W, basis, rng, fill=True, drop_tol=1e-10):
    """Orthogonalize the columns of W against ``basis`` and each other.

    Columns that vanish (linearly dependent on the basis) are replaced with
    random directions when ``fill`` is set and the space has room.
    """
    n = W.shape[0]
    orig = np.linalg.norm(W, axis=0)
    has_basis = basis is not None and basis.shape[1] > 0
    for _ in range(2):
        if has_basis:
            W = W - basis @ (basis.T @ W)
    Q, Rf = np.linalg.qr(W)
    # a column is dependent when little of its original length survives the
    # projection; judging by the projected norm would keep roundoff noise
    keep = np.abs(np.diag(Rf)) > drop_tol * np.maximum(orig, 1e-300)
    Q = Q[:, keep]
    if has_basis and Q.shape[1]:
        Q = Q - basis @ (basis.T @ Q)
        Q, _ = np.linalg.qr(Q)
    used = (0 if basis is None else basis.shape[1]) + Q.shape[1]
    missing = W.shape[1] - Q.shape[1]
    if fill and missing and used < n:
        extra = rng.standard_normal((n, min(missing, n - used)))
        full = Q if basis is None else np.hstack([basis, Q])
        for _ in range(2):
            extra = extra - full @ (full.T @ extra)
        eq, er = np.linalg.qr(extra)
        good = np.abs(np.diag(er)) > 1e-8 * np.linalg.norm(extra, axis=0).max(initial=1.0)
        Q = np.hstack([Q, eq[:, good]])
    return Q


def block_lanczos(op, n, k, *, block_size=None, tol=1e-10, max_basis=None,
                  max_iter=100_000, deflate=None, seed=0):
    """Largest-algebraic eigenpairs of a symmetric operator.

    Block Lanczos with full reorthogonalization: every new block is
    orthogonalized twice against the whole stored basis, which also enforces
    the three-term recurrence. Ritz pairs come from a Rayleigh-Ritz step on the
    basis; when the basis reaches ``max_basis`` it is thick-restarted from the
    current best Ritz vectors. A block size at least as large as the largest
    eigenvalue multiplicity among the wanted pairs is required to resolve it;
    the default is ``k``.

    ``deflate`` is an orthonormal ``(n, q)`` matrix of known invariant
    directions to exclude from the search.

    Convergence: every wanted Ritz residual ``||A x - theta x||`` is at most
    ``tol * max(1, |theta|_max)``.
    """
    matvec = _as_matvec(op)
    Z = deflate
    q = 0 if Z is None else Z.shape[1]
    n_eff = n - q
    if k < 1 or k > n_eff:
        raise ValueError(f"cannot compute {k} eigenpairs in a space of dimension {n_eff}")
    b = min(k if block_size is None else max(int(block_size), 1), n_eff)
    if max_basis is None:
        max_basis = max(3 * k + 2 * b, 200)
    max_basis = min(max(max_basis, k + 2 * b), n_eff)
    rng = generator(seed, 0xB10C)

    V = np.empty((n, max_basis))
    AV = np.empty((n, max_basis))
    H = np.empty((max_basis, max_basis))
    m = 0
    iterations = 0
    since_check = 0
    theta = Y = Rk = None
    res = np.full(k, np.inf)
    scale = 1.0

    def basis():
        return V[:, :m] if Z is None else np.hstack([Z, V[:, :m]])

    block = _orthonormalize(rng.standard_normal((n, b)), Z, rng)
    while block.shape[1]:
        nb = block.shape[1]
        W = matvec(block)
        W = W.reshape(n, nb)
        V[:, m:m + nb] = block
        AV[:, m:m + nb] = W
        H[:m + nb, m:m + nb] = V[:, :m + nb].T @ W
        H[m:m + nb, :m] = H[:m, m:m + nb].T
        m += nb
        iterations += 1
        since_check += nb
        if iterations > max_iter:
            raise ConvergenceError(
                f"block Lanczos did not converge in {max_iter} iterations", residuals=res
            )
        full = m + b > max_basis
        if m >= k and (since_check >= max(16, k) or m == n_eff or full):
            since_check = 0
            Hs = 0.5 * (H[:m, :m] + H[:m, :m].T)
            vals, vecs = np.linalg.eigh(Hs)
            order = np.argsort(vals)[::-1]
            theta, Y = vals[order], vecs[:, order]
            Xk = V[:, :m] @ Y[:, :k]
            Rk = AV[:, :m] @ Y[:, :k] - Xk * theta[:k]
            res = np.linalg.norm(Rk, axis=0)
            scale = max(1.0, float(np.abs(theta).max()))
            if np.all(res <= tol * scale) or m == n_eff:
                break
        if full:
            # thick restart: keep the best Ritz vectors, continue from residuals
            keep = min(max(k + b, m // 2), max_basis - b)
            V[:, :keep] = V[:, :m] @ Y[:, :keep]
            AV[:, :keep] = AV[:, :m] @ Y[:, :keep]
            H[:keep, :keep] = np.diag(theta[:keep])
            m = keep
            block = _orthonormalize(Rk[:, res > tol * scale][:, :b], basis(), rng)
            if block.shape[1] < b:
                more = _orthonormalize(rng.standard_normal((n, b - block.shape[1])),
                                       np.hstack([basis(), block]), rng)
                block = np.hstack([block, more])
        else:
            block = _orthonormalize(W, basis(), rng)
        block = block[:, :min(b, max_basis - m)]

    if theta is None:
        raise ConvergenceError("block Lanczos produced no Ritz values")
    if not np.all(res <= tol * scale):
        raise ConvergenceError(
            f"block Lanczos stalled with Ritz residuals up to {res.max():.3e}", residuals=res
        )
    vectors = V[:, :m] @ Y[:, :k]
    return EigenResult(theta[:k].copy(), vectors, res, m, iterations)


def nearest_orthogonal(M, *, min_singular=1e-8):
    """Orthogonal polar factor ``U V^T`` of a square matrix."""
    U, s, Vt = np.linalg.svd(M)
    if s[-1] < min_singular * max(s[0], 1e-300) or s[0] < min_singular:
        raise DegenerateError(f"matrix too close to singular for orthogonal projection (s_min={s[-1]:.3e})")
    return U @ Vt


def fix_signs(*mats):
    """Flip columns so the largest-magnitude entry of the first matrix is positive.

    The same flips are applied to every matrix passed.
    """
    first = mats[0]
    idx = np.argmax(np.abs(first), axis=0)
    signs = np.sign(first[idx, np.arange(first.shape[1])])
    signs[signs == 0] = 1.0
    out = tuple(m * signs for m in mats)
    return out if len(out) > 1 else out[0]


def principal_angles(A, B):
    """Principal angles (radians) between the column spans of A and B."""
    return scipy.linalg.subspace_angles(A, B)
