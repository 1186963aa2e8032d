"""Ensemble co-training: virtual-feature synthesis at transferred class
statistics, an 8-predictor panel (2 networks + 3 regressors x 2 feature
views), best-5 selection on held-out seen data, and threshold voting over
the unlabeled unseen pool.
"""

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attribute_space import (
    cosine_matrix,
    latent_prototypes_seen,
    latent_prototypes_unseen,
    ridge_correlation,
)
from .dataset_io import (
    FeatureDataset,
    SplitSpec,
    ValidationError,
    normalize_attributes,
    subset,
)
from .network import (
    SemanticFeedbackNetwork,
    TrainConfig,
    _seen_class_order,
    predict_over_classes,
    train,
)
from .regressors import fit_bayes_ridge, fit_lasso, fit_ridge_cv


@dataclass
class ClassFeatureStats:
    """Per-class feature mean and population standard deviation."""

    class_names: tuple
    means: np.ndarray  # C x d
    stds: np.ndarray   # C x d


@dataclass
class VirtualFeatureSet:
    """Synthetic per-class samples drawn at transferred statistics."""

    class_names: tuple
    features: dict          # name -> n x d array
    prototypes: np.ndarray  # C x d
    stds: np.ndarray        # C x d
    seed: int

    def stacked(self):
        X = np.vstack([self.features[c] for c in self.class_names])
        labels = [c for c in self.class_names
                  for _ in range(len(self.features[c]))]
        return X, labels


@dataclass
class PseudoLabel:
    sample_id: str
    assigned: str
    votes: int
    iteration: int
    per_predictor: dict  # predictor id -> predicted class


@dataclass
class PseudoLabelSet:
    entries: dict = field(default_factory=dict)  # sample id -> PseudoLabel

    def __len__(self):
        return len(self.entries)

    def census(self):
        counts = {}
        for entry in self.entries.values():
            counts[entry.assigned] = counts.get(entry.assigned, 0) + 1
        return counts


@dataclass
class EctConfig:
    n_virtual: int = 100
    max_iterations: int = 5
    vote_threshold_high: int = 4
    vote_threshold_low: int = 3
    rule_switch_iteration: int = 4  # from here on, always the low threshold
    panel_keep: int = 5
    seed: int = 7
    arch_primary: tuple = (256, 128)
    arch_secondary: tuple = (128, 64)
    validation_fraction: float = 0.2
    ridge_lambda: float = 1.0
    network_mode: str = "latent"

    def validate(self):
        if self.n_virtual < 1 or self.max_iterations < 1:
            raise ValidationError("n_virtual and max_iterations must be >= 1")
        if self.panel_keep != 5:
            raise ValidationError("voting rules are defined for a 5-predictor panel")
        if not (self.vote_threshold_low <= self.vote_threshold_high
                <= self.panel_keep):
            raise ValidationError("thresholds must be <= kept panel size")
        if not 1 <= self.rule_switch_iteration <= self.max_iterations:
            raise ValidationError("rule switch must fall inside the schedule")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValidationError("validation fraction must be in (0, 1)")
        if self.network_mode not in ("latent", "combined"):
            raise ValidationError("network mode must be 'latent' or 'combined'")


# ---------------------------------------------------------------------------
# statistics and virtual features
# ---------------------------------------------------------------------------


def class_feature_stats(features, labels, class_names=None):
    """Per-class mean and population std; every class needs >= 2 samples."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if class_names is None:
        class_names = [str(c) for c in np.unique(labels)]
    means = np.empty((len(class_names), features.shape[1]))
    stds = np.empty_like(means)
    for i, name in enumerate(class_names):
        block = features[labels == name]
        if block.shape[0] < 2:
            raise ValidationError(
                f"class {name!r} has {block.shape[0]} samples; need >= 2"
            )
        means[i] = block.mean(axis=0)
        stds[i] = block.std(axis=0)
    return ClassFeatureStats(tuple(class_names), means, stds)


def transfer_stats(corr, stats):
    """Carry seen-class stats to unseen classes through the correlation rows.

    Transferred stds are clamped at zero (coefficients may be negative).
    """
    if tuple(corr.seen_classes) != tuple(stats.class_names):
        raise ValidationError("correlation columns do not align with stats")
    means = corr.coefficients @ stats.means
    stds = np.maximum(corr.coefficients @ stats.stds, 0.0)
    return ClassFeatureStats(tuple(corr.unseen_classes), means, stds)


def synth_virtual_features(stats, n_per_class, seed):
    """Diagonal-Gaussian draws at each class's (mean, std); seeded."""
    if n_per_class < 1:
        raise ValidationError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    features = {}
    for i, name in enumerate(stats.class_names):
        features[name] = rng.normal(stats.means[i], stats.stds[i],
                                    size=(n_per_class, stats.means.shape[1]))
    return VirtualFeatureSet(tuple(stats.class_names), features,
                             stats.means.copy(), stats.stds.copy(), int(seed))


# ---------------------------------------------------------------------------
# predictor panel
# ---------------------------------------------------------------------------


@dataclass
class ClassContext:
    """Candidate classes with their attribute rows and per-view prototypes."""

    class_names: list
    attr_rows: np.ndarray
    protos_by_view: dict  # view id (1|2) -> PrototypeSet


@dataclass
class PanelPredictor:
    pid: str
    kind: str  # "network" | "regressor"
    view: int  # 1 | 2
    model: SemanticFeedbackNetwork
    amap: object = None
    mode: str = "latent"

    def predict(self, X, ctx):
        if self.kind == "network":
            names, _ = predict_over_classes(
                self.model, X, ctx.class_names, ctx.attr_rows,
                ctx.protos_by_view[self.view], mode=self.mode,
            )
            return names
        feats = self.model.trunk_features(X)
        attr_pred = self.amap.predict(feats)
        scores = cosine_matrix(attr_pred, ctx.attr_rows)
        return [ctx.class_names[i] for i in np.argmax(scores, axis=1)]


def build_panel(model_primary, model_secondary, virtual_primary,
                virtual_secondary, table, mode="latent"):
    """Two network predictors plus {lasso, ridge-cv, bayes} per feature view.

    The regressors are fit on the virtual features of their view against the
    (normalized) attribute rows of the virtual classes. Panel order is fixed
    and used for tie-breaking downstream.
    """
    table_n = normalize_attributes(table)
    panel = [
        PanelPredictor("net@1", "network", 1, model_primary, mode=mode),
        PanelPredictor("net@2", "network", 2, model_secondary, mode=mode),
    ]
    fits = (("lasso", fit_lasso), ("ridge", fit_ridge_cv),
            ("bayes", fit_bayes_ridge))
    for view, (model, virtual) in enumerate(
            [(model_primary, virtual_primary),
             (model_secondary, virtual_secondary)], start=1):
        X, labels = virtual.stacked()
        Y = np.array([table_n.row(lab) for lab in labels])
        for tag, fit in fits:
            panel.append(PanelPredictor(f"{tag}@{view}", "regressor", view,
                                        model, amap=fit(X, Y)))
    return panel


def score_predictors(panel, X_val, y_val, ctx):
    """Mean per-class top-1 of each predictor on held-out labeled data."""
    if len(y_val) == 0:
        raise ValidationError("empty validation split")
    y_val = np.asarray(y_val)
    classes = [c for c in ctx.class_names if (y_val == c).any()]
    scores = []
    for predictor in panel:
        pred = np.asarray(predictor.predict(X_val, ctx))
        per_class = [float(np.mean(pred[y_val == c] == c)) for c in classes]
        scores.append(float(np.mean(per_class)))
    return scores


def select_best_predictors(panel, X_val, y_val, ctx, keep=5):
    """Retain the top-``keep`` predictors; ties keep the earlier panel entry."""
    scores = score_predictors(panel, X_val, y_val, ctx)
    order = sorted(range(len(panel)), key=lambda i: (-scores[i], i))
    retained = sorted(order[:keep])
    return [panel[i] for i in retained], scores


# ---------------------------------------------------------------------------
# voting
# ---------------------------------------------------------------------------


def vote_label(votes, threshold):
    """The single class reaching the threshold, else None (unreliable)."""
    if len(votes) != 5:
        raise ValueError("expected exactly 5 votes")
    counts = {}
    for v in votes:
        counts[v] = counts.get(v, 0) + 1
    winners = [c for c, n in counts.items() if n >= threshold]
    if len(winners) != 1:
        return None
    return winners[0]


def choose_threshold(reliable_count_at_high, n_unseen_samples, high=4, low=3):
    """High threshold only while it keeps a strict majority reliable."""
    return high if reliable_count_at_high > n_unseen_samples / 2 else low


# ---------------------------------------------------------------------------
# the iteration schedule
# ---------------------------------------------------------------------------


@dataclass
class EctResult:
    primary: SemanticFeedbackNetwork
    secondary: SemanticFeedbackNetwork
    pseudo: PseudoLabelSet
    history: list
    manifest: dict
    unseen_predictions: dict = field(default_factory=dict)  # id -> class
    unseen_scores: dict = field(default_factory=dict)       # id -> best score


def _stratified_holdout(dataset, fraction, seed):
    """Seeded per-class carve; keeps >= 2 training samples per class."""
    labels = np.asarray(dataset.labels)
    rng = np.random.default_rng([seed, 17])
    val_mask = np.zeros(dataset.n, dtype=bool)
    for name in sorted(set(dataset.labels)):
        idx = np.nonzero(labels == name)[0]
        order = rng.permutation(idx.size)
        n_hold = min(int(round(fraction * idx.size)), max(idx.size - 2, 0))
        n_hold = max(n_hold, 1) if idx.size > 2 else n_hold
        val_mask[idx[order[:n_hold]]] = True
    if not val_mask.any():
        raise ValidationError("holdout is empty; need more seen samples")
    return subset(dataset, ~val_mask), subset(dataset, val_mask)


def _train_pair(train_ds, table, split, train_config, ect_config):
    models = []
    for rank, (h1, h2) in enumerate([ect_config.arch_primary,
                                     ect_config.arch_secondary]):
        cfg = replace(train_config, hidden1=h1, hidden2=h2, embed_hidden=h2,
                      seed=train_config.seed + rank)
        model = SemanticFeedbackNetwork(train_ds.dim, table.dim, cfg)
        train(model, train_ds, table, split, cfg)
        models.append(model)
    return models


def _class_contexts(models, seen_train, table, split, pseudo_ds=None):
    """Seen and unseen ClassContexts with per-view latent prototypes.

    Unseen prototypes come from correlation transfer; once a class carries
    pseudo-labeled training samples (``pseudo_ds``), its prototype is the
    direct latent mean of those samples instead (retraining relocates the
    latent clusters, which the transfer cannot follow).
    """
    table_n = normalize_attributes(table)
    seen, unseen = _seen_class_order(table_n, split)
    a_seen = np.array([table_n.row(c) for c in seen])
    labels = np.asarray(seen_train.labels)
    seen_protos = {}
    unseen_protos = {}
    if unseen:
        a_unseen = np.array([table_n.row(c) for c in unseen])
    for view, model in enumerate(models, start=1):
        cache = model._forward(seen_train.features, gate_open=True)
        latents = cache.latent_adj if model.config.adjusted_prototypes \
            else cache.latent
        protos = latent_prototypes_seen(latents, labels, seen)
        seen_protos[view] = protos
        if unseen:
            corr = ridge_correlation(a_seen, a_unseen, model.config.ridge_lambda,
                                     seen_classes=seen, unseen_classes=unseen)
            transferred = latent_prototypes_unseen(corr, protos)
            if pseudo_ds is not None and pseudo_ds.n > 0:
                p_cache = model._forward(pseudo_ds.features, gate_open=True)
                p_latents = p_cache.latent_adj \
                    if model.config.adjusted_prototypes else p_cache.latent
                p_labels = np.asarray(pseudo_ds.labels)
                for i, name in enumerate(unseen):
                    mask = p_labels == name
                    if mask.any():
                        transferred.vectors[i] = p_latents[mask].mean(axis=0)
            unseen_protos[view] = transferred
    seen_ctx = ClassContext(list(seen), a_seen, seen_protos)
    unseen_ctx = ClassContext(list(unseen), a_unseen, unseen_protos) \
        if unseen else None
    return seen_ctx, unseen_ctx


def _network_panel(models, mode):
    return [
        PanelPredictor("net@1", "network", 1, models[0], mode=mode),
        PanelPredictor("net@2", "network", 2, models[1], mode=mode),
    ]


def _augmented_split(split, pseudo):
    """Pseudo-labeled unseen classes join the trainable label set."""
    extra = tuple(c for c in pseudo.census() if c not in split.seen)
    remaining = tuple(c for c in split.unseen if c not in extra)
    return SplitSpec(split.seen + extra, remaining)


def _pseudo_accuracy(entries, truth):
    hits = [truth[sid] == e.assigned for sid, e in entries.items()
            if sid in truth]
    return float(np.mean(hits)) if hits else None


def run_ect(seen_dataset, unseen_dataset, table, split, ect_config=None,
            train_config=None, true_unseen_labels=None):
    """The full co-training schedule; deterministic given the config seeds.

    ``unseen_dataset`` is the unlabeled pool. ``true_unseen_labels`` (id ->
    class) is a test-harness hook that adds pseudo-label accuracy and voting
    precision to the history; it never influences the run. Returns an
    EctResult whose ``primary`` model scored best on the seen holdout.
    """
    ect_config = ect_config or EctConfig()
    train_config = train_config or TrainConfig()
    ect_config.validate()
    train_config.validate()
    table_n = normalize_attributes(table)
    seen_names, unseen_names = _seen_class_order(table_n, split)
    a_seen = np.array([table_n.row(c) for c in seen_names])
    a_unseen = np.array([table_n.row(c) for c in unseen_names])

    # one seeded carve of the seen data: networks train on the rest, the
    # holdout ranks predictors and designates the primary model
    seen_train, seen_val = _stratified_holdout(
        seen_dataset, ect_config.validation_fraction, ect_config.seed)
    X_val = seen_val.features
    y_val = list(seen_val.labels)

    history = []
    pseudo = PseudoLabelSet()
    pseudo_ds = None  # pseudo-labeled samples the current models trained on
    models = _train_pair(seen_train, table, split, train_config, ect_config)

    degenerate = unseen_dataset is None or unseen_dataset.n == 0
    if not degenerate:
        X_unseen = unseen_dataset.features
        ids_unseen = list(unseen_dataset.sample_ids)

        for iteration in range(1, ect_config.max_iterations + 1):
            # virtual features per view: transferred statistics cold-start,
            # direct pseudo-cluster statistics once a class has samples
            virtuals = []
            for view, model in enumerate(models, start=1):
                feats = model.trunk_features(seen_train.features)
                stats = class_feature_stats(
                    feats, np.asarray(seen_train.labels), seen_names)
                corr = ridge_correlation(
                    a_seen, a_unseen, ect_config.ridge_lambda,
                    seen_classes=seen_names, unseen_classes=unseen_names)
                unseen_stats = transfer_stats(corr, stats)
                if pseudo_ds is not None and pseudo_ds.n > 0:
                    p_feats = model.trunk_features(pseudo_ds.features)
                    p_labels = np.asarray(pseudo_ds.labels)
                    for i, name in enumerate(unseen_names):
                        mask = p_labels == name
                        if mask.sum() >= 2:
                            unseen_stats.means[i] = p_feats[mask].mean(axis=0)
                            unseen_stats.stds[i] = p_feats[mask].std(axis=0)
                virtuals.append(synth_virtual_features(
                    unseen_stats, ect_config.n_virtual,
                    seed=ect_config.seed * 1000 + iteration * 10 + view))

            panel = build_panel(models[0], models[1], virtuals[0], virtuals[1],
                                table, mode=ect_config.network_mode)
            seen_ctx, unseen_ctx = _class_contexts(models, seen_train, table,
                                                   split, pseudo_ds=pseudo_ds)
            retained, scores = select_best_predictors(
                panel, X_val, y_val, seen_ctx, keep=ect_config.panel_keep)

            votes = {p.pid: p.predict(X_unseen, unseen_ctx) for p in retained}
            vote_rows = list(zip(*[votes[p.pid] for p in retained]))

            labels_high = [vote_label(row, ect_config.vote_threshold_high)
                           for row in vote_rows]
            labels_low = [vote_label(row, ect_config.vote_threshold_low)
                          for row in vote_rows]
            reliable_high = sum(lab is not None for lab in labels_high)
            if iteration >= ect_config.rule_switch_iteration:
                threshold = ect_config.vote_threshold_low
            else:
                threshold = choose_threshold(
                    reliable_high, len(vote_rows),
                    high=ect_config.vote_threshold_high,
                    low=ect_config.vote_threshold_low)
            assigned = labels_high \
                if threshold == ect_config.vote_threshold_high else labels_low

            # rebuild the pseudo set from this iteration's verdicts
            pseudo = PseudoLabelSet()
            for sid, row, lab in zip(ids_unseen, vote_rows, assigned):
                if lab is None:
                    continue
                pseudo.entries[sid] = PseudoLabel(
                    sample_id=sid, assigned=lab, votes=row.count(lab),
                    iteration=iteration,
                    per_predictor={p.pid: v for p, v in zip(retained, row)},
                )

            record = {
                "iteration": iteration,
                "threshold": threshold,
                "reliable_at_high": reliable_high,
                "reliable_at_low": sum(lab is not None for lab in labels_low),
                "assigned": len(pseudo),
                "predictor_scores": {p.pid: s for p, s in zip(panel, scores)},
                "retained": [p.pid for p in retained],
                "pseudo_census": pseudo.census(),
            }
            if true_unseen_labels is not None:
                truth = true_unseen_labels
                record["pseudo_accuracy"] = _pseudo_accuracy(pseudo.entries,
                                                             truth)
                for tag, labs in (("high", labels_high), ("low", labels_low)):
                    hits = [truth[sid] == lab
                            for sid, lab in zip(ids_unseen, labs)
                            if lab is not None and sid in truth]
                    record[f"precision_at_{tag}"] = (
                        float(np.mean(hits)) if hits else None)
            history.append(record)

            # grow the training set and retrain the pair
            if len(pseudo):
                keep = [i for i, sid in enumerate(ids_unseen)
                        if sid in pseudo.entries]
                pseudo_ds = FeatureDataset(
                    tuple(ids_unseen[i] for i in keep),
                    X_unseen[keep],
                    tuple(pseudo.entries[ids_unseen[i]].assigned
                          for i in keep),
                )
                d_train = FeatureDataset(
                    seen_train.sample_ids + pseudo_ds.sample_ids,
                    np.vstack([seen_train.features, pseudo_ds.features]),
                    seen_train.labels + pseudo_ds.labels,
                )
                train_split = _augmented_split(split, pseudo)
            else:
                pseudo_ds = None
                d_train, train_split = seen_train, split
            models = _train_pair(d_train, table, train_split, train_config,
                                 ect_config)

    seen_ctx, unseen_ctx = _class_contexts(models, seen_train, table, split,
                                           pseudo_ds=pseudo_ds)
    net_scores = score_predictors(
        _network_panel(models, ect_config.network_mode), X_val, y_val, seen_ctx)
    if net_scores[1] > net_scores[0]:
        primary, secondary = models[1], models[0]
        primary_view = 2
    else:
        primary, secondary = models[0], models[1]
        primary_view = 1

    # the transductive output: the primary model's final verdict on the pool,
    # using prototypes informed by the pseudo-labeled samples it trained on
    unseen_predictions = {}
    unseen_scores = {}
    if not degenerate and unseen_ctx is not None:
        names, scores = predict_over_classes(
            primary, X_unseen, unseen_ctx.class_names, unseen_ctx.attr_rows,
            unseen_ctx.protos_by_view[primary_view],
            mode=ect_config.network_mode)
        unseen_predictions = dict(zip(ids_unseen, names))
        unseen_scores = dict(zip(ids_unseen,
                                 (float(s) for s in scores.max(axis=1))))

    manifest = {
        "ect_config": asdict(ect_config),
        "train_config": train_config.to_dict(),
        "degenerate_no_unseen": degenerate,
        "network_holdout_scores": {"net@1": net_scores[0],
                                   "net@2": net_scores[1]},
        "primary": "net@1" if primary is models[0] else "net@2",
        "iterations": history,
        "final_pseudo_count": len(pseudo),
        "final_pseudo_census": pseudo.census(),
        "final_prediction_census": _census(unseen_predictions),
    }
    return EctResult(primary, secondary, pseudo, history, manifest,
                     unseen_predictions, unseen_scores)


def _census(predictions):
    counts = {}
    for name in predictions.values():
        counts[name] = counts.get(name, 0) + 1
    return counts
