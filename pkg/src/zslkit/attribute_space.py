"""Attribute-correlation transfer, latent prototypes, and the two zero-shot
prediction rules (latent-space and dual-space)."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


@dataclass
class CorrelationMatrix:
    """Ridge coefficients expressing each unseen class in terms of seen ones.

    Row u of ``coefficients`` (U x S) reconstructs the unseen attribute row
    from the seen attribute rows with ridge-optimal residual.
    """

    coefficients: np.ndarray
    lam: float
    seen_classes: tuple
    unseen_classes: tuple


@dataclass
class PrototypeSet:
    """One vector per class; ``kind`` is 'latent' or 'visual'."""

    class_names: tuple
    vectors: np.ndarray
    kind: str = "latent"


def ridge_correlation(seen_attrs, unseen_attrs, lam=1.0, *, seen_classes=None,
                      unseen_classes=None):
    """Solve (G + lam*I) beta_u = A_seen a_u^T for every unseen row.

    G is the S x S Gram of the seen attribute rows; one Cholesky factorization
    is shared across all unseen classes. lam = 0 is accepted only when the
    Gram is well conditioned enough to factor.
    """
    A_s = np.asarray(seen_attrs, dtype=np.float64)
    A_u = np.asarray(unseen_attrs, dtype=np.float64)
    if A_s.ndim != 2 or A_u.ndim != 2 or A_s.shape[1] != A_u.shape[1]:
        raise ValueError("seen/unseen attribute dimensions disagree")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    gram = A_s @ A_s.T
    system = gram + lam * np.eye(A_s.shape[0])
    try:
        factor = cho_factor(system, lower=True)
    except LinAlgError as exc:
        raise ValueError(
            "seen-attribute Gram is singular; use lambda > 0"
        ) from exc
    coeff = cho_solve(factor, A_s @ A_u.T).T
    seen_classes = tuple(seen_classes) if seen_classes is not None \
        else tuple(range(A_s.shape[0]))
    unseen_classes = tuple(unseen_classes) if unseen_classes is not None \
        else tuple(range(A_u.shape[0]))
    return CorrelationMatrix(coeff, float(lam), seen_classes, unseen_classes)


def latent_prototypes_seen(latents, labels, class_names=None):
    """Per-class arithmetic mean of latent rows.

    ``class_names`` fixes the prototype order (defaults to sorted unique
    labels); every named class must have at least one sample.
    """
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    if class_names is None:
        class_names = [str(c) for c in np.unique(labels)]
    vectors = np.empty((len(class_names), latents.shape[1]))
    for i, name in enumerate(class_names):
        mask = labels == name
        if not mask.any():
            raise ValueError(f"class {name!r} has no samples")
        vectors[i] = latents[mask].mean(axis=0)
    return PrototypeSet(tuple(class_names), vectors, kind="latent")


def latent_prototypes_unseen(corr, seen_protos):
    """Transfer seen prototypes to unseen classes through the correlation rows."""
    if tuple(corr.seen_classes) != tuple(seen_protos.class_names):
        raise ValueError("correlation columns do not align with seen prototypes")
    vectors = corr.coefficients @ seen_protos.vectors
    return PrototypeSet(tuple(corr.unseen_classes), vectors, kind=seen_protos.kind)


def cosine_similarity(u, v):
    """Cosine of the angle between two nonzero vectors, in [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_matrix(queries, rows):
    """Cosine similarities of every query against every row, N x C."""
    Q = np.asarray(queries, dtype=np.float64)
    R = np.asarray(rows, dtype=np.float64)
    qn = np.linalg.norm(Q, axis=1)
    rn = np.linalg.norm(R, axis=1)
    if np.any(qn == 0.0):
        raise ValueError("cosine similarity undefined for a zero query vector")
    if np.any(rn == 0.0):
        raise ValueError("cosine similarity undefined for a zero prototype")
    return np.clip((Q / qn[:, None]) @ (R / rn[:, None]).T, -1.0, 1.0)


def predict_latent(latent, unseen_protos):
    """Nearest unseen prototype by cosine; ties go to the earliest class."""
    sims = cosine_matrix(np.asarray(latent)[None, :], unseen_protos.vectors)[0]
    return unseen_protos.class_names[int(np.argmax(sims))]


def predict_combined(sem_pred, latent_adj, unseen_attrs, unseen_protos):
    """Dual-space rule: attribute-space plus latent-space cosine, summed."""
    unseen_attrs = np.asarray(unseen_attrs, dtype=np.float64)
    if unseen_attrs.shape[0] != len(unseen_protos.class_names):
        raise ValueError("attribute rows do not align with unseen prototypes")
    s_attr = cosine_matrix(np.asarray(sem_pred)[None, :], unseen_attrs)[0]
    s_lat = cosine_matrix(np.asarray(latent_adj)[None, :], unseen_protos.vectors)[0]
    return unseen_protos.class_names[int(np.argmax(s_attr + s_lat))]
