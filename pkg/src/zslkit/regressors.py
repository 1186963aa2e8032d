"""Semantic-classifier panel members: ridge with leave-one-out alpha selection,
Lasso by cyclic coordinate descent, and Bayesian ridge by evidence maximization.

Each fit maps visual features (N x d) to attribute vectors (N x K), handling
the K outputs column-independently. Inputs are centered internally and the
intercept is fit explicitly.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels

DEFAULT_ALPHA_GRID = (0.1, 0.5, 1.0, 5.0, 10.0)
LASSO_ALPHA = 0.001
LASSO_TOL = 1e-8
LASSO_MAX_SWEEPS = 10_000
BAYES_MAX_ITER = 300
BAYES_TOL = 1e-3


@dataclass
class LinearAttributeMap:
    """Affine feature-to-attribute map with fit provenance."""

    weights: np.ndarray
    intercept: np.ndarray
    method: str
    hyper: dict = field(default_factory=dict)
    converged: bool = True

    def predict(self, X):
        return predict_attributes(self, X)


def _as_2d(Y):
    Y = np.asarray(Y, dtype=np.float64)
    return Y[:, None] if Y.ndim == 1 else Y


def fit_ridge_cv(X, Y, alpha_grid=DEFAULT_ALPHA_GRID):
    """Closed-form ridge with the alpha picked by exact leave-one-out error.

    The LOO residuals come from the hat-diagonal identity e_i / (1 - h_ii),
    which equals refitting without sample i; the intercept is unpenalized.
    Ties on the LOO score go to the earliest grid entry.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = _as_2d(Y)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if len(alpha_grid) == 0 or any(a <= 0 for a in alpha_grid):
        raise ValueError("alpha grid must be nonempty and positive")
    n, d = X.shape
    Z = np.hstack([X, np.ones((n, 1))])
    penalty = np.eye(d + 1)
    penalty[d, d] = 0.0
    ZtZ = Z.T @ Z
    ZtY = Z.T @ Y

    scores = []
    solutions = []
    for alpha in alpha_grid:
        M = ZtZ + alpha * penalty
        coefs = np.linalg.solve(M, ZtY)
        T = np.linalg.solve(M, Z.T)
        h = np.einsum("ij,ji->i", Z, T)
        resid = Y - Z @ coefs
        with np.errstate(divide="ignore", invalid="ignore"):
            loo = resid / (1.0 - h)[:, None]
        scores.append(float(np.mean(loo**2)))
        solutions.append(coefs)
    best = int(np.argmin(scores))
    coefs = solutions[best]
    return LinearAttributeMap(
        weights=coefs[:d].copy(),
        intercept=coefs[d].copy(),
        method="ridge-cv",
        hyper={"alpha": float(alpha_grid[best]),
               "grid": [float(a) for a in alpha_grid],
               "loo_scores": scores},
    )


def fit_lasso(X, Y, alpha=LASSO_ALPHA):
    """L1-penalized least squares, (1/(2N))||Xw - y||^2 + alpha*||w||_1.

    Cyclic coordinate descent with soft thresholding per output column, on
    centered data; the convergence flag is False if any column hit the sweep
    cap before the 1e-8 coordinate-change tolerance.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    X = np.asarray(X, dtype=np.float64)
    Y = _as_2d(Y)
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    W = np.empty((X.shape[1], Y.shape[1]))
    sweeps = []
    converged = True
    for k in range(Y.shape[1]):
        w, n_sweeps, ok = kernels.lasso_cd(
            Xc, Y[:, k] - y_mean[k], alpha, LASSO_TOL, LASSO_MAX_SWEEPS
        )
        W[:, k] = w
        sweeps.append(int(n_sweeps))
        converged = converged and bool(ok)
    intercept = y_mean - x_mean @ W
    return LinearAttributeMap(
        weights=W,
        intercept=intercept,
        method="lasso",
        hyper={"alpha": float(alpha), "sweeps": sweeps},
        converged=converged,
    )


def _bayes_column(Xc, s, Vt, Uty, y, n, init):
    """Evidence maximization for one centered output column.

    Precisions: lam (weights), beta (noise). The returned weights are the
    posterior mean evaluated at the returned precisions, so a refit started
    from them reproduces the weights exactly.
    """
    eigen = s * s
    y_var = float(y @ y) / max(n, 1)
    if y_var == 0.0:
        return np.zeros(Vt.shape[1]), 1.0, 1.0, 0

    def posterior(lam, beta):
        shrink = s * beta / (lam + beta * eigen)
        return Vt.T @ (shrink * Uty)

    lam, beta = (1.0, 1.0 / y_var) if init is None else init
    mu = posterior(lam, beta)
    iters = 0
    for it in range(BAYES_MAX_ITER):
        iters = it + 1
        mu = posterior(lam, beta)
        gam = float(np.sum(beta * eigen / (lam + beta * eigen)))
        resid = y - Xc @ mu
        rss = float(resid @ resid)
        mu_sq = float(mu @ mu)
        if rss <= 1e-14 * n * y_var or mu_sq == 0.0:
            break
        lam_new = gam / mu_sq
        beta_new = (n - gam) / rss
        if abs(lam_new - lam) + abs(beta_new - beta) < BAYES_TOL:
            break
        lam, beta = lam_new, beta_new
    else:
        mu = posterior(lam, beta)
    return mu, lam, beta, iters


def fit_bayes_ridge(X, Y, init_precisions=None):
    """Bayesian ridge with uninformative hyperpriors, per output column.

    Alternates the posterior mean with MacKay updates of the weight and noise
    precisions until the summed precision change drops below 1e-3 or 300
    iterations pass (always terminates).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = _as_2d(Y)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    n, d = X.shape
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    UtY = U.T @ (Y - y_mean)

    W = np.empty((d, Y.shape[1]))
    precisions = []
    iterations = []
    for k in range(Y.shape[1]):
        init = None if init_precisions is None else tuple(init_precisions[k])
        mu, lam, beta, iters = _bayes_column(
            Xc, s, Vt, UtY[:, k], Y[:, k] - y_mean[k], n, init
        )
        W[:, k] = mu
        precisions.append((float(lam), float(beta)))
        iterations.append(iters)
    intercept = y_mean - x_mean @ W
    return LinearAttributeMap(
        weights=W,
        intercept=intercept,
        method="bayes-ridge",
        hyper={"precisions": precisions, "iterations": iterations},
    )


def predict_attributes(amap, X):
    """Affine prediction X @ W + intercept, N x K."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != amap.weights.shape[0]:
        raise ValueError(
            f"feature dim {X.shape[1]} does not match fitted dim "
            f"{amap.weights.shape[0]}"
        )
    return X @ amap.weights + amap.intercept
