"""The semantic-feedback zero-shot network: a shared trunk feeding an augmented
attribute/latent head, an attribute-attention head, and a semantic embedding
head whose output is fed back to adjust the latents.

Training couples three losses (batch-hard triplet on the adjusted latents,
attention-reweighted softmax over seen classes, BCE of the embedding head
against class attributes) through a hand-written backward pass and Adam.
"""

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nn
from .attribute_space import (
    cosine_matrix,
    latent_prototypes_seen,
    latent_prototypes_unseen,
    ridge_correlation,
)
from .dataset_io import ValidationError, normalize_attributes
from .nn import DegenerateBatchError, Mlp

MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Model file is unreadable, truncated, or of an unsupported version."""


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    seed: int = 7
    lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    margin: float = 1.0
    attention_weight: float = 1.0  # weight of the attention loss
    embed_weight: float = 0.1      # weight of the embedding BCE loss
    gamma: float = 0.01            # feedback degree
    warmup_epochs: int = 5         # feedback gate opens at this epoch
    hidden1: int = 256
    hidden2: int = 128
    embed_hidden: int = 128
    ridge_lambda: float = 1.0
    attention_on_adjusted: bool = True
    adjusted_prototypes: bool = True

    def validate(self):
        if min(self.epochs, self.batch_size, self.hidden1, self.hidden2,
               self.embed_hidden) < 1:
            raise ValidationError("epochs, batch size and widths must be >= 1")
        if self.lr <= 0 or self.margin <= 0 or self.ridge_lambda <= 0:
            raise ValidationError("lr, margin and ridge lambda must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValidationError("Adam betas must lie in (0, 1)")
        if self.attention_weight < 0 or self.embed_weight < 0:
            raise ValidationError("loss weights must be nonnegative")
        if self.gamma < 0:
            raise ValidationError("feedback degree must be nonnegative")
        # warmup == epochs is legal: the feedback gate simply never opens
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValidationError("warmup must lie in [0, epochs]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)


@dataclass
class ForwardResult:
    """Named tensors of a full forward pass (N x h1/h2/K/K/K/K)."""

    h1: np.ndarray
    h2: np.ndarray
    sem_pred: np.ndarray
    latent: np.ndarray
    attention: np.ndarray
    embed: np.ndarray


@dataclass
class _Cache(ForwardResult):
    z1: np.ndarray = None
    se_z1: np.ndarray = None
    se_h: np.ndarray = None
    embed_logits: np.ndarray = None
    latent_adj: np.ndarray = None
    att_in: np.ndarray = None
    gamma_eff: float = 0.0
    X: np.ndarray = None


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def apply_feedback(latent, embed, gamma):
    """Pull latents toward the embedding output: latent + gamma*(embed - latent)."""
    latent = np.asarray(latent, dtype=np.float64)
    embed = np.asarray(embed, dtype=np.float64)
    if latent.shape != embed.shape:
        raise ValueError("latent and embed shapes differ")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if gamma == 0.0:
        return latent
    return latent + gamma * (embed - latent)


class SemanticFeedbackNetwork:
    """Trunk (d -> h1 -> h2) plus three heads; parameters in a fixed order."""

    def __init__(self, feature_dim, attr_dim, config=None, seed=None):
        config = config or TrainConfig()
        config.validate()
        self.config = config
        self.feature_dim = int(feature_dim)
        self.attr_dim = int(attr_dim)
        self.seed = config.seed if seed is None else int(seed)
        rng = np.random.default_rng([self.seed, 0])
        h1, h2, eh, k = (config.hidden1, config.hidden2, config.embed_hidden,
                         self.attr_dim)
        self.trunk = Mlp([self.feature_dim, h1, h2], rng)
        self.aug_w = nn.glorot_uniform(rng, h2, 2 * k)
        self.aug_b = np.zeros(2 * k)
        self.att_w = nn.glorot_uniform(rng, h1 + h2 + k, k)
        self.att_b = np.zeros(k)
        self.sem_embed = Mlp([h2, eh, k], rng)

    # parameter order: trunk, augmented head, attention head, embedding head
    def param_list(self):
        return [
            self.trunk.weights[0], self.trunk.biases[0],
            self.trunk.weights[1], self.trunk.biases[1],
            self.aug_w, self.aug_b,
            self.att_w, self.att_b,
            self.sem_embed.weights[0], self.sem_embed.biases[0],
            self.sem_embed.weights[1], self.sem_embed.biases[1],
        ]

    def _forward(self, X, gate_open=True):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.feature_dim:
            raise ValueError(
                f"input has {X.shape[-1] if X.ndim == 2 else '?'} columns, "
                f"expected {self.feature_dim}"
            )
        k = self.attr_dim
        acts, pres = self.trunk.forward_cache(X)
        h1, h2 = acts
        aug = h2 @ self.aug_w + self.aug_b
        sem_pred = aug[:, :k]
        latent = aug[:, k:]
        se_acts, se_pres = self.sem_embed.forward_cache(h2)
        se_h, embed_logits = se_acts
        embed = _sigmoid(embed_logits)
        gamma_eff = self.config.gamma if gate_open else 0.0
        latent_adj = apply_feedback(latent, embed, gamma_eff)
        att_sigma = latent_adj if self.config.attention_on_adjusted else latent
        att_in = np.hstack([h1, h2, att_sigma])
        attention = _softmax_rows(att_in @ self.att_w + self.att_b)
        return _Cache(
            h1=h1, h2=h2, sem_pred=sem_pred, latent=latent,
            attention=attention, embed=embed, z1=pres[0], se_z1=se_pres[0],
            se_h=se_h, embed_logits=embed_logits, latent_adj=latent_adj,
            att_in=att_in, gamma_eff=gamma_eff, X=X,
        )

    def forward_full(self, X):
        """The six public tensors; attention rows sum to 1, embed in (0, 1)."""
        c = self._forward(X, gate_open=True)
        return ForwardResult(c.h1, c.h2, c.sem_pred, c.latent, c.attention,
                             c.embed)

    def trunk_features(self, X):
        """Deep feature view (h2) consumed by the classifier panel."""
        return self.trunk.forward(X)[-1]

    def _loss_and_grads(self, X, label_idx, seen_attr_rows, target_rows,
                        gate_open):
        """Forward + backward for one batch; returns losses and ordered grads."""
        cfg = self.config
        k = self.attr_dim
        h1_dim, h2_dim = cfg.hidden1, cfg.hidden2
        c = self._forward(X, gate_open)

        l_lat, d_latent_adj = nn.loss_triplet(c.latent_adj, label_idx,
                                              cfg.margin)
        l_att, g_sem, g_attn = nn.loss_attention(c.sem_pred, c.attention,
                                                 seen_attr_rows, label_idx)
        l_bce, g_bce = nn.loss_bce(c.embed_logits, target_rows)
        total = nn.combined_loss(l_lat, l_att, l_bce, cfg.attention_weight,
                                 cfg.embed_weight)

        d_latent_adj = d_latent_adj.copy()
        d_sem = cfg.attention_weight * g_sem
        d_attn = cfg.attention_weight * g_attn
        d_embed_logits = cfg.embed_weight * g_bce

        # attention head (softmax over att_in @ att_w + att_b)
        inner = (d_attn * c.attention).sum(axis=1, keepdims=True)
        d_att_logits = c.attention * (d_attn - inner)
        g_att_w = c.att_in.T @ d_att_logits
        g_att_b = d_att_logits.sum(axis=0)
        d_att_in = d_att_logits @ self.att_w.T
        d_h1 = d_att_in[:, :h1_dim].copy()
        d_h2 = d_att_in[:, h1_dim:h1_dim + h2_dim].copy()
        d_att_sigma = d_att_in[:, h1_dim + h2_dim:]
        if cfg.attention_on_adjusted:
            d_latent_adj += d_att_sigma
            d_latent = np.zeros_like(d_latent_adj)
        else:
            d_latent = d_att_sigma.copy()

        # feedback interpolation latent_adj = (1-g)*latent + g*embed
        g = c.gamma_eff
        d_latent += (1.0 - g) * d_latent_adj
        d_embed = g * d_latent_adj
        d_embed_logits = d_embed_logits + d_embed * c.embed * (1.0 - c.embed)

        # embedding head (h2 -> relu -> logits)
        g_se_w1 = None
        se_w1, se_w2 = self.sem_embed.weights
        g_se_w2 = c.se_h.T @ d_embed_logits
        g_se_b2 = d_embed_logits.sum(axis=0)
        d_se_h = d_embed_logits @ se_w2.T
        d_se_z1 = d_se_h * (c.se_z1 > 0)
        g_se_w1 = c.h2.T @ d_se_z1
        g_se_b1 = d_se_z1.sum(axis=0)
        d_h2 += d_se_z1 @ se_w1.T

        # augmented head [sem_pred ; latent]
        d_aug = np.hstack([d_sem, d_latent])
        g_aug_w = c.h2.T @ d_aug
        g_aug_b = d_aug.sum(axis=0)
        d_h2 += d_aug @ self.aug_w.T

        # trunk (layer 2 identity, layer 1 ReLU)
        w1, w2 = self.trunk.weights
        g_w2 = c.h1.T @ d_h2
        g_b2 = d_h2.sum(axis=0)
        d_h1 += d_h2 @ w2.T
        d_z1 = d_h1 * (c.z1 > 0)
        g_w1 = c.X.T @ d_z1
        g_b1 = d_z1.sum(axis=0)

        grads = [g_w1, g_b1, g_w2, g_b2, g_aug_w, g_aug_b, g_att_w, g_att_b,
                 g_se_w1, g_se_b1, g_se_w2, g_se_b2]
        return l_lat, l_att, l_bce, total, grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _seen_class_order(table, split):
    seen = [c for c in table.class_names if c in set(split.seen)]
    unseen = [c for c in table.class_names if c in set(split.unseen)]
    return seen, unseen


def _encode_labels(labels, class_order):
    index = {name: i for i, name in enumerate(class_order)}
    codes = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        if lab not in index:
            raise ValidationError(f"label {lab!r} is not a seen class")
        codes[i] = index[lab]
    return codes


def train(model, dataset, table, split, config=None):
    """Train in place on seen-class data; returns the per-epoch history.

    Each epoch: seeded shuffle, mini-batches, forward, the three losses on the
    (warmup-gated) adjusted latents, combined backward, Adam. Batches without a
    valid triplet are skipped and counted. Deterministic given the seed.
    """
    config = config or model.config
    config.validate()
    if any(lab is None for lab in dataset.labels):
        raise ValidationError("training data must be fully labeled")
    table_n = normalize_attributes(table)
    seen, _ = _seen_class_order(table_n, split)
    codes = _encode_labels(dataset.labels, seen)
    seen_rows = np.array([table_n.row(c) for c in seen])
    target_rows = seen_rows[codes]
    if target_rows.min() < 0.0 or target_rows.max() > 1.0:
        raise ValidationError(
            "normalized attributes fall outside [0, 1]; the embedding head "
            "needs binary or nonnegative attribute tables"
        )

    params = model.param_list()
    state = nn.AdamState.for_params(params, lr=config.lr,
                                    beta1=config.adam_beta1,
                                    beta2=config.adam_beta2)
    shuffle_rng = np.random.default_rng([model.seed, 1])
    X = dataset.features
    n = X.shape[0]
    history = []
    for epoch in range(config.epochs):
        gate_open = epoch >= config.warmup_epochs
        order = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        batches = 0
        skipped = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                l_lat, l_att, l_bce, total, grads = model._loss_and_grads(
                    X[idx], codes[idx], seen_rows, target_rows[idx], gate_open
                )
            except DegenerateBatchError:
                skipped += 1
                continue
            nn.adam_step(params, grads, state)
            sums += (l_lat, l_att, l_bce, total)
            batches += 1
        means = sums / batches if batches else sums
        history.append({
            "epoch": epoch,
            "loss_triplet": float(means[0]),
            "loss_attention": float(means[1]),
            "loss_bce": float(means[2]),
            "loss_total": float(means[3]),
            "skipped_batches": skipped,
        })
    return history


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def predict_over_classes(model, X, class_names, attr_rows, protos,
                         mode="latent"):
    """Score queries against an arbitrary class set.

    latent mode: cosine of adjusted latents against the class prototypes;
    combined mode adds the cosine of the attribute-head prediction against the
    class attribute rows. Returns (names, score matrix in class order).
    """
    if mode not in ("latent", "combined"):
        raise ValueError(f"unknown mode {mode!r}")
    cache = model._forward(X, gate_open=True)
    scores = cosine_matrix(cache.latent_adj, protos.vectors)
    if mode == "combined":
        scores = scores + cosine_matrix(cache.sem_pred, attr_rows)
    winners = np.argmax(scores, axis=1)
    return [class_names[i] for i in winners], scores


def unseen_prototypes(model, seen_dataset, table, split,
                      adjusted=None):
    """Latent prototypes of the unseen classes via correlation transfer."""
    table_n = normalize_attributes(table)
    seen, unseen = _seen_class_order(table_n, split)
    if not unseen:
        raise ValidationError("split names no unseen classes")
    cache = model._forward(seen_dataset.features, gate_open=True)
    if adjusted is None:
        adjusted = model.config.adjusted_prototypes
    latents = cache.latent_adj if adjusted else cache.latent
    protos_seen = latent_prototypes_seen(latents, np.asarray(seen_dataset.labels),
                                         seen)
    a_seen = np.array([table_n.row(c) for c in seen])
    a_unseen = np.array([table_n.row(c) for c in unseen])
    corr = ridge_correlation(a_seen, a_unseen, model.config.ridge_lambda,
                             seen_classes=seen, unseen_classes=unseen)
    return latent_prototypes_unseen(corr, protos_seen), a_unseen


def predict_batch(model, X, table, split, seen_dataset, mode="latent",
                  adjusted_prototypes=None):
    """Classify rows of X among the unseen classes.

    Seen-class data is required to build the latent prototypes that anchor the
    transfer. Returns (predicted names, per-class score matrix).
    """
    if seen_dataset is None or seen_dataset.n == 0:
        raise ValidationError("seen-class data is required to build prototypes")
    protos, a_unseen = unseen_prototypes(model, seen_dataset, table, split,
                                         adjusted=adjusted_prototypes)
    return predict_over_classes(model, X, list(protos.class_names), a_unseen,
                                protos, mode=mode)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_LAYER_NAMES = ("trunk.0", "trunk.1", "aug", "att", "embed.0", "embed.1")


def _named_layers(model):
    return [
        ("trunk.0", model.trunk.weights[0], model.trunk.biases[0]),
        ("trunk.1", model.trunk.weights[1], model.trunk.biases[1]),
        ("aug", model.aug_w, model.aug_b),
        ("att", model.att_w, model.att_b),
        ("embed.0", model.sem_embed.weights[0], model.sem_embed.biases[0]),
        ("embed.1", model.sem_embed.weights[1], model.sem_embed.biases[1]),
    ]


def save_model(model, path):
    """Write the model as JSON; floats round-trip exactly."""
    layers = []
    for name, w, b in _named_layers(model):
        layers.append({
            "name": name,
            "rows": int(w.shape[0]),
            "cols": int(w.shape[1]),
            "weights": [float(x) for x in w.ravel()],
            "bias": [float(x) for x in b],
        })
    payload = {
        "version": MODEL_FORMAT_VERSION,
        "seed": model.seed,
        "feature_dim": model.feature_dim,
        "attr_dim": model.attr_dim,
        "config": model.config.to_dict(),
        "layers": layers,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path):
    """Read a model file; rejects version mismatches and truncated files."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"unreadable model file: {exc}") from None
    if not isinstance(payload, dict):
        raise ModelFormatError("model file is not a JSON object")
    version = payload.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {version!r} "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    try:
        config = TrainConfig.from_dict(payload["config"])
        model = SemanticFeedbackNetwork(payload["feature_dim"],
                                        payload["attr_dim"], config,
                                        seed=payload["seed"])
        layers = {entry["name"]: entry for entry in payload["layers"]}
        for name, w, b in _named_layers(model):
            entry = layers[name]
            data = np.array(entry["weights"], dtype=np.float64)
            if entry["rows"] != w.shape[0] or entry["cols"] != w.shape[1] \
                    or data.size != w.size or len(entry["bias"]) != b.size:
                raise ModelFormatError(f"layer {name!r} has the wrong shape")
            w[...] = data.reshape(w.shape)
            b[...] = np.array(entry["bias"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {exc}") from None
    return model
