"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

The jitted path is used whenever numba imports cleanly; set the environment
variable ``ZSLKIT_DISABLE_NUMBA=1`` before import to force the numpy fallback.
Both paths compute the same quantities (agreement is covered by tests);
within one process the selected backend is fixed, so runs are deterministic.
"""

import os

import numpy as np

_DISABLED = os.environ.get("ZSLKIT_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

if not _DISABLED:
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _HAVE_NUMBA = False
else:
    _HAVE_NUMBA = False


def backend() -> str:
    """Name of the active kernel backend: 'numba' or 'numpy'."""
    return "numba" if _HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure-numpy implementations (always available; the fallback path)
# ---------------------------------------------------------------------------


def pairwise_sq_dists_np(X):
    """All-pairs squared Euclidean distances, N x N, zero diagonal."""
    sq = np.einsum("ij,ij->i", X, X)
    d = sq[:, None] - 2.0 * (X @ X.T) + sq[None, :]
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def batch_hard_np(dists, codes):
    """Per anchor: index of the farthest same-class and nearest other-class row.

    Returns (pos, neg) int64 arrays; -1 marks anchors with no positive or no
    negative available. Ties resolve to the lowest index.
    """
    n = dists.shape[0]
    pos = np.full(n, -1, dtype=np.int64)
    neg = np.full(n, -1, dtype=np.int64)
    same = codes[:, None] == codes[None, :]
    np.fill_diagonal(same, False)
    diff = ~(codes[:, None] == codes[None, :])
    for i in range(n):
        if same[i].any():
            pos[i] = int(np.argmax(np.where(same[i], dists[i], -np.inf)))
        if diff[i].any():
            neg[i] = int(np.argmin(np.where(diff[i], dists[i], np.inf)))
    return pos, neg


def lasso_cd_np(X, y, alpha, tol, max_sweeps):
    """Cyclic coordinate descent for (1/(2N))||Xw - y||^2 + alpha*||w||_1.

    X and y are expected pre-centered. Returns (w, sweeps, converged); a sweep
    converges when the largest coordinate change is below tol.
    """
    n, d = X.shape
    col_sq = np.einsum("ij,ij->j", X, X) / n
    w = np.zeros(d)
    r = y.astype(np.float64).copy()
    sweeps = 0
    converged = False
    for s in range(max_sweeps):
        sweeps = s + 1
        max_delta = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            wj = w[j]
            rho = (X[:, j] @ r) / n + col_sq[j] * wj
            mag = abs(rho) - alpha
            wn = 0.0 if mag <= 0.0 else np.sign(rho) * mag / col_sq[j]
            if wn != wj:
                r += X[:, j] * (wj - wn)
                w[j] = wn
                delta = abs(wn - wj)
                if delta > max_delta:
                    max_delta = delta
        if max_delta < tol:
            converged = True
            break
    return w, sweeps, converged


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _pairwise_sq_dists_nb(X):
        n, k = X.shape
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for t in range(k):
                    diff = X[i, t] - X[j, t]
                    acc += diff * diff
                out[i, j] = acc
                out[j, i] = acc
        return out

    @njit(cache=True)
    def _batch_hard_nb(dists, codes):
        n = dists.shape[0]
        pos = np.full(n, -1, dtype=np.int64)
        neg = np.full(n, -1, dtype=np.int64)
        for i in range(n):
            best_pos = -1.0
            best_neg = np.inf
            for j in range(n):
                if j == i:
                    continue
                if codes[j] == codes[i]:
                    if dists[i, j] > best_pos:
                        best_pos = dists[i, j]
                        pos[i] = j
                else:
                    if dists[i, j] < best_neg:
                        best_neg = dists[i, j]
                        neg[i] = j
        return pos, neg

    @njit(cache=True)
    def _lasso_cd_nb(X, y, alpha, tol, max_sweeps):
        n, d = X.shape
        col_sq = np.zeros(d)
        for j in range(d):
            acc = 0.0
            for i in range(n):
                acc += X[i, j] * X[i, j]
            col_sq[j] = acc / n
        w = np.zeros(d)
        r = y.copy()
        sweeps = 0
        converged = False
        for s in range(max_sweeps):
            sweeps = s + 1
            max_delta = 0.0
            for j in range(d):
                if col_sq[j] == 0.0:
                    continue
                wj = w[j]
                dot = 0.0
                for i in range(n):
                    dot += X[i, j] * r[i]
                rho = dot / n + col_sq[j] * wj
                mag = abs(rho) - alpha
                if mag <= 0.0:
                    wn = 0.0
                elif rho > 0.0:
                    wn = mag / col_sq[j]
                else:
                    wn = -mag / col_sq[j]
                if wn != wj:
                    for i in range(n):
                        r[i] += X[i, j] * (wj - wn)
                    w[j] = wn
                    delta = abs(wn - wj)
                    if delta > max_delta:
                        max_delta = delta
            if max_delta < tol:
                converged = True
                break
        return w, sweeps, converged


# ---------------------------------------------------------------------------
# dispatchers
# ---------------------------------------------------------------------------


def pairwise_sq_dists(X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if _HAVE_NUMBA:
        return _pairwise_sq_dists_nb(X)
    return pairwise_sq_dists_np(X)


def batch_hard_indices(dists, codes):
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    if _HAVE_NUMBA:
        return _batch_hard_nb(np.ascontiguousarray(dists), codes)
    return batch_hard_np(dists, codes)


def lasso_cd(X, y, alpha, tol=1e-8, max_sweeps=10_000):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if _HAVE_NUMBA:
        return _lasso_cd_nb(X, y, float(alpha), float(tol), int(max_sweeps))
    return lasso_cd_np(X, y, float(alpha), float(tol), int(max_sweeps))
