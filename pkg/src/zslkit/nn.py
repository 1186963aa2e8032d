"""Dense trainable-network core: MLPs with explicit gradients, the three
training losses, the Adam optimizer, and a finite-difference gradient checker.

Everything operates on float64 numpy arrays. Forward and backward passes are
deterministic functions of inputs and parameters.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class DegenerateBatchError(ValueError):
    """Raised when a batch admits no (anchor, positive, negative) triple."""


def glorot_uniform(rng, fan_in, fan_out):
    """Scale-stable uniform init in +-sqrt(6/(fan_in+fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Mlp:
    """Fully connected stack: ReLU on hidden layers, identity on the output.

    ``layer_dims`` lists input, hidden..., output sizes. Weights are stored as
    (fan_in, fan_out) matrices so a batch forward is ``X @ W + b``.
    """

    def __init__(self, layer_dims, rng=None):
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if any(d < 1 for d in layer_dims):
            raise ValueError("layer dims must be positive")
        self.layer_dims = list(layer_dims)
        if rng is None:
            rng = np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            self.weights.append(glorot_uniform(rng, fan_in, fan_out))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self):
        return len(self.weights)

    def forward(self, X):
        return self.forward_cache(X)[0]

    def forward_cache(self, X):
        """Returns (activations, preactivations), one entry per layer.

        Hidden activations are ReLU(preact); the last activation is the raw
        output. The attention head consumes the intermediate activations.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.layer_dims[0]:
            raise ValueError(
                f"input has {X.shape[-1] if X.ndim == 2 else '?'} columns, "
                f"expected {self.layer_dims[0]}"
            )
        acts, pres = [], []
        a = X
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            pres.append(z)
            a = z if i == self.n_layers - 1 else np.maximum(z, 0.0)
            acts.append(a)
        return acts, pres


def mlp_forward(net, X):
    """All per-layer activations of ``net`` on batch ``X`` (output last)."""
    return net.forward(X)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _label_codes(labels):
    labels = np.asarray(labels)
    _, codes = np.unique(labels, return_inverse=True)
    return codes.astype(np.int64)


def loss_triplet(latents, labels, margin=1.0):
    """Batch-hard triplet loss on squared Euclidean distances.

    Per anchor the farthest same-class row is the positive and the nearest
    other-class row the negative; the hinge is
    ``[d2(a,p) - d2(a,n) + margin]_+`` averaged over anchors that have both.
    Returns (loss, gradient w.r.t. latents).
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    latents = np.asarray(latents, dtype=np.float64)
    codes = _label_codes(labels)
    if latents.shape[0] != codes.shape[0]:
        raise ValueError("latents and labels disagree on batch size")
    dists = kernels.pairwise_sq_dists(latents)
    pos, neg = kernels.batch_hard_indices(dists, codes)
    valid = (pos >= 0) & (neg >= 0)
    if not valid.any():
        raise DegenerateBatchError("degenerate batch: no valid triplet")
    anchors = np.nonzero(valid)[0]
    p = pos[anchors]
    n = neg[anchors]
    hinge = dists[anchors, p] - dists[anchors, n] + margin
    active = hinge > 0
    loss = float(np.sum(np.maximum(hinge, 0.0)) / anchors.size)

    grad = np.zeros_like(latents)
    if active.any():
        a_act = anchors[active]
        p_act = p[active]
        n_act = n[active]
        scale = 2.0 / anchors.size
        xa, xp, xn = latents[a_act], latents[p_act], latents[n_act]
        np.add.at(grad, a_act, scale * (xn - xp))
        np.add.at(grad, p_act, -scale * (xa - xp))
        np.add.at(grad, n_act, scale * (xa - xn))
    return loss, grad


def attention_scores(sem_pred, attention, attr_rows):
    """Per-class scores ``sem_pred_i^T diag(attention_i) a_y``, N x C."""
    return (sem_pred * attention) @ attr_rows.T


def softmax_xent_from_scores(scores, label_idx):
    """Mean negative log-softmax of the true-class score; returns (loss, dscores)."""
    n = scores.shape[0]
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    logp = shifted - logz
    loss = float(-np.mean(logp[np.arange(n), label_idx]))
    dscores = np.exp(logp)
    dscores[np.arange(n), label_idx] -= 1.0
    dscores /= n
    return loss, dscores


def loss_attention(sem_pred, attention, seen_attributes, labels):
    """Attention-reweighted softmax cross-entropy over the seen classes.

    ``labels`` index rows of ``seen_attributes``. Returns
    (loss, grad wrt sem_pred, grad wrt attention).
    """
    sem_pred = np.asarray(sem_pred, dtype=np.float64)
    attention = np.asarray(attention, dtype=np.float64)
    seen_attributes = np.asarray(seen_attributes, dtype=np.float64)
    if sem_pred.shape != attention.shape:
        raise ValueError("sem_pred and attention shapes differ")
    if seen_attributes.shape[1] != sem_pred.shape[1]:
        raise ValueError("attribute dimension mismatch")
    label_idx = np.asarray(labels, dtype=np.int64)
    if label_idx.min() < 0 or label_idx.max() >= seen_attributes.shape[0]:
        raise ValueError("label outside the seen-class set")
    scores = attention_scores(sem_pred, attention, seen_attributes)
    loss, dscores = softmax_xent_from_scores(scores, label_idx)
    common = dscores @ seen_attributes
    return loss, common * attention, common * sem_pred


def loss_bce(logits, target_attributes):
    """Element-mean binary cross entropy of sigmoid(logits) against targets.

    Stable for |logit| up to ~700 via the softplus form. Returns
    (loss, grad wrt logits).
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(target_attributes, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ValueError("logits and targets shapes differ")
    if targets.min() < 0.0 or targets.max() > 1.0:
        raise ValueError("targets must lie in [0, 1]")
    # softplus(z) = max(z, 0) + log1p(exp(-|z|))
    softplus = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
    per_elem = softplus - targets * logits
    loss = float(np.mean(per_elem))
    sig = 1.0 / (1.0 + np.exp(-np.clip(logits, -700, 700)))
    grad = (sig - targets) / logits.size
    return loss, grad


def combined_loss(lat_loss, att_loss, bce_loss, beta1, beta2):
    """Weighted total: triplet + beta1*attention + beta2*embedding-BCE."""
    if beta1 < 0 or beta2 < 0:
        raise ValueError("loss weights must be nonnegative")
    return float(lat_loss + beta1 * att_loss + beta2 * bce_loss)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moment accumulators; one (m, v) pair per parameter array."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        state = cls(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place; returns (params, state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state disagree in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(f, point, step=1e-5, floor=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``f(x)`` must return (scalar value, gradient array) at the flat vector
    ``x``. The relative error per coordinate is |a - n| / max(|a|, |n|, floor).
    """
    point = np.asarray(point, dtype=np.float64)
    _, analytic = f(point)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.empty_like(analytic)
    for i in range(point.size):
        hi = point.copy()
        lo = point.copy()
        hi[i] += step
        lo[i] -= step
        numeric[i] = (f(hi)[0] - f(lo)[0]) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
