"""Classification and alignment losses with analytic gradients.

Every loss returns a :class:`LossOutput` holding the scalar value and the
gradients with respect to whichever inputs the caller is expected to update.
All functions are pure; none mutate their arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import (
    ContractViolationError,
    DegenerateEmbeddingError,
    DimensionError,
    EmptyBatchError,
    EmptyRelatedSetError,
    MappingError,
    NumericError,
)
from .numerics import Array, MlpParams, as_matrix, mlp_backward, mlp_forward

# Column norms may drift this far from 1 before arcmax refuses the weights.
# Loose enough that finite-difference probes (step 1e-5) stay evaluable.
_UNIT_NORM_TOL = 1e-4

PREFACTOR_MODES = ("as_written", "mean")


@dataclass(frozen=True)
class ArcmaxConfig:
    """Hypersphere radius ``s`` and additive angular margin ``m`` (radians)."""

    s: float = 20.0
    m: float = 0.1

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("s must be positive")
        if not 0.0 <= self.m < np.pi:
            raise ValueError("m must lie in [0, pi)")


@dataclass
class LossOutput:
    """Scalar loss plus named gradients.

    ``grads`` maps an input name ("embeddings", "classifier", "logits",
    "encoder", "critic") to either an array or a per-layer list of (dW, db)
    pairs. Everything is validated finite on construction.
    """

    value: float
    grads: dict

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise NumericError("loss value is non-finite")
        for name, g in self.grads.items():
            for arr in _iter_arrays(g):
                if not np.all(np.isfinite(arr)):
                    raise NumericError(f"gradient {name!r} contains non-finite entries")


def _iter_arrays(g):
    if isinstance(g, np.ndarray):
        yield g
    else:
        for item in g:
            if isinstance(item, np.ndarray):
                yield item
            else:
                yield from item


def _check_labels(labels, num_classes: int) -> Array:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise DimensionError("labels must be 1-D")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return y.astype(np.intp)


def _unit_rows(embeddings: Array) -> tuple[Array, Array]:
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(norms < 1e-15):
        bad = int(np.argmin(norms))
        raise DegenerateEmbeddingError(f"embedding row {bad} has zero norm")
    return embeddings / norms[:, None], norms


def _require_unit_columns(w: Array):
    norms = np.linalg.norm(w, axis=0)
    if np.any(np.abs(norms - 1.0) > _UNIT_NORM_TOL):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise ContractViolationError(
            f"classifier column {bad} has norm {norms[bad]:.6f}; normalize_columns first"
        )


def _log_softmax(logits: Array) -> tuple[Array, Array]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    return shifted - np.log(total), exp / total


def arcmax_loss(embeddings, labels, w, cfg: ArcmaxConfig) -> LossOutput:
    """Additive-angular-margin cross-entropy over scaled cosine logits.

    The true-class logit is s*cos(phi_y + m), every other logit s*cos(phi_j),
    with cos(phi_j) = w_j.z / |z| and unit-norm columns w_j. Gradients flow
    to the embeddings and to the (normalized) classifier columns; callers
    re-normalize after applying an update.
    """
    z = as_matrix(embeddings, "embeddings")
    w = as_matrix(w, "classifier weights")
    if z.shape[0] == 0:
        raise EmptyBatchError("arcmax_loss needs at least one example")
    if z.shape[1] != w.shape[0]:
        raise DimensionError(f"embeddings have dim {z.shape[1]}, classifier expects {w.shape[0]}")
    _require_unit_columns(w)
    n, k = z.shape[0], w.shape[1]
    y = _check_labels(labels, k)

    u, norms = _unit_rows(z)
    cos = u @ w  # (n, k) cosines
    rows = np.arange(n)
    cos_y = np.clip(cos[rows, y], -1.0, 1.0)
    sin_y = np.sqrt(np.maximum(0.0, 1.0 - cos_y * cos_y))
    cos_m, sin_m = np.cos(cfg.m), np.sin(cfg.m)

    logits = cfg.s * cos
    logits[rows, y] = cfg.s * (cos_y * cos_m - sin_y * sin_m)

    log_p, p = _log_softmax(logits)
    value = float(-log_p[rows, y].mean())

    # dL/dlogits, then chain through dlogit/dcos. For the true class the
    # margin contributes cos_m + cos_y*sin_m/sin_y; the singular factor is
    # dropped where sin_y underflows (cosine clamped at +-1).
    dlogits = p.copy()
    dlogits[rows, y] -= 1.0
    dlogits /= n
    margin_factor = np.full(n, cos_m)
    safe = sin_y > 1e-8
    margin_factor[safe] += cos_y[safe] * sin_m / sin_y[safe]
    dcos = cfg.s * dlogits
    dcos[rows, y] = cfg.s * dlogits[rows, y] * margin_factor

    grad_w = u.T @ dcos
    # d cos_j / d z = (w_j - cos_j * u) / |z|
    proj = (dcos * cos).sum(axis=1)
    grad_z = (dcos @ w.T - proj[:, None] * u) / norms[:, None]
    return LossOutput(value, {"embeddings": grad_z, "classifier": grad_w})


def cosmax_loss(embeddings, labels, w, s: float) -> LossOutput:
    """Margin-free cosine cross-entropy: arcmax with m = 0."""
    return arcmax_loss(embeddings, labels, w, ArcmaxConfig(s=s, m=0.0))


def softmax_loss(logits, labels) -> LossOutput:
    """Mean cross-entropy on raw (unnormalized) logits."""
    x = as_matrix(logits, "logits")
    if x.shape[0] == 0:
        raise EmptyBatchError("softmax_loss needs at least one example")
    y = _check_labels(labels, x.shape[1])
    log_p, p = _log_softmax(x)
    rows = np.arange(x.shape[0])
    value = float(-log_p[rows, y].mean())
    grad = p.copy()
    grad[rows, y] -= 1.0
    grad /= x.shape[0]
    return LossOutput(value, {"logits": grad})


def class_centroids(embeddings, labels, class_ids=None) -> dict[int, Array]:
    """Mean embedding per class.

    When ``class_ids`` is given, every requested class must have at least one
    row; otherwise the classes present in ``labels`` are used.
    """
    z = as_matrix(embeddings, "embeddings")
    y = np.asarray(labels)
    if y.shape != (z.shape[0],):
        raise DimensionError("labels must have one entry per embedding row")
    if class_ids is None:
        class_ids = sorted(int(c) for c in np.unique(y)) if y.size else []
    out = {}
    for cid in class_ids:
        mask = y == cid
        if not mask.any():
            raise EmptyRelatedSetError(f"class {cid} has no related embeddings")
        out[int(cid)] = z[mask].mean(axis=0)
    return out


def centroid_alignment_loss(embeddings, labels, centroids: Mapping[int, Array],
                            prefactor_mode: str = "as_written",
                            n_related: int | None = None) -> LossOutput:
    """Softmax pull of each embedding toward its own class centroid.

    Per sample: -log( exp(-|z - mu_y|^2) / sum_k exp(-|z - mu_k|^2) ), summed
    and scaled by 1/(N * n_related) ("as_written") or 1/N ("mean"). Centroids
    are constants here; gradients flow to the embeddings only.
    """
    z = as_matrix(embeddings, "embeddings")
    if z.shape[0] == 0:
        raise EmptyBatchError("centroid_alignment_loss needs at least one example")
    if prefactor_mode not in PREFACTOR_MODES:
        raise ValueError(f"prefactor_mode must be one of {PREFACTOR_MODES}")
    if prefactor_mode == "as_written":
        if n_related is None or n_related <= 0:
            raise ValueError("as_written mode needs the related-set size n_related")
        prefactor = 1.0 / (z.shape[0] * n_related)
    else:
        prefactor = 1.0 / z.shape[0]

    class_ids = sorted(int(c) for c in centroids)
    index_of = {cid: i for i, cid in enumerate(class_ids)}
    y = np.asarray(labels)
    if y.shape != (z.shape[0],):
        raise DimensionError("labels must have one entry per embedding row")
    missing = sorted(set(int(c) for c in np.unique(y)) - set(class_ids))
    if missing:
        raise MappingError(f"no centroid for class ids {missing}")
    col = np.array([index_of[int(c)] for c in y], dtype=np.intp)

    mu = np.stack([np.asarray(centroids[cid], dtype=np.float64) for cid in class_ids])
    if mu.shape[1] != z.shape[1]:
        raise DimensionError("centroid dimension does not match embeddings")
    diff = z[:, None, :] - mu[None, :, :]  # (n, k, d)
    sq = (diff * diff).sum(axis=2)
    log_q, q = _log_softmax(-sq)
    rows = np.arange(z.shape[0])
    value = float(prefactor * -log_q[rows, col].sum())

    coeff = q.copy()
    coeff[rows, col] -= 1.0
    # d(-|z-mu_k|^2)/dz = -2 (z - mu_k)
    grad_z = prefactor * (-2.0) * (coeff[:, :, None] * diff).sum(axis=1)
    return LossOutput(value, {"embeddings": grad_z})


def one_hot(labels, num_classes: int) -> Array:
    y = _check_labels(labels, num_classes)
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def critic_forward(embeddings, label_onehot, critic: MlpParams) -> Array:
    """Score [embedding ; one-hot label] rows with the critic; returns (n,)."""
    z = as_matrix(embeddings, "embeddings")
    oh = as_matrix(label_onehot, "one-hot labels")
    if z.shape[0] != oh.shape[0]:
        raise DimensionError("embeddings and one-hot labels disagree on batch size")
    if z.shape[1] + oh.shape[1] != critic.input_dim:
        raise DimensionError(
            f"critic expects {critic.input_dim} inputs, got "
            f"{z.shape[1]} embedding dims + {oh.shape[1]} one-hot dims"
        )
    if critic.output_dim != 1:
        raise DimensionError("critic must emit a single score")
    return mlp_forward(np.hstack([z, oh]), critic)[:, 0]


def critic_loss(novel_x, novel_y, related_x, related_y, encoder: MlpParams,
                critic: MlpParams, num_classes: int) -> LossOutput:
    """Score gap the critic maximizes: mean over related minus mean over novel.

    Labels of both batches live in the novel id space [0, num_classes). The
    caller performs gradient *ascent* on the returned critic gradients.
    """
    xn = as_matrix(novel_x, "novel batch")
    xr = as_matrix(related_x, "related batch")
    if xn.shape[0] == 0 or xr.shape[0] == 0:
        raise EmptyBatchError("critic_loss needs nonempty novel and related batches")
    zn = mlp_forward(xn, encoder)
    zr = mlp_forward(xr, encoder)
    inn = np.hstack([zn, one_hot(novel_y, num_classes)])
    inr = np.hstack([zr, one_hot(related_y, num_classes)])
    if inn.shape[1] != critic.input_dim:
        raise DimensionError(
            f"critic expects {critic.input_dim} inputs, got {inn.shape[1]}"
        )
    sr = mlp_forward(inr, critic)[:, 0]
    sn = mlp_forward(inn, critic)[:, 0]
    value = float(sr.mean() - sn.mean())

    up_r = np.full((inr.shape[0], 1), 1.0 / inr.shape[0])
    up_n = np.full((inn.shape[0], 1), -1.0 / inn.shape[0])
    gr, _ = mlp_backward(inr, critic, up_r)
    gn, _ = mlp_backward(inn, critic, up_n)
    grads = [(a[0] + b[0], a[1] + b[1]) for a, b in zip(gr, gn)]
    return LossOutput(value, {"critic": grads})


def adversarial_encoder_loss(novel_x, novel_y, encoder: MlpParams, critic: MlpParams,
                             num_classes: int, prefactor_mode: str = "as_written") -> LossOutput:
    """Critic score of the novel batch, differentiated through the encoder.

    Scaled by 1/num_classes ("as_written") or 1/batch ("mean"); the critic is
    treated as fixed. The caller performs gradient descent on the encoder.
    """
    xn = as_matrix(novel_x, "novel batch")
    if xn.shape[0] == 0:
        raise EmptyBatchError("adversarial_encoder_loss needs a nonempty batch")
    if prefactor_mode not in PREFACTOR_MODES:
        raise ValueError(f"prefactor_mode must be one of {PREFACTOR_MODES}")
    prefactor = (1.0 / num_classes) if prefactor_mode == "as_written" else (1.0 / xn.shape[0])

    zn = mlp_forward(xn, encoder)
    oh = one_hot(novel_y, num_classes)
    scores = critic_forward(zn, oh, critic)
    value = float(prefactor * scores.sum())

    upstream = np.full((xn.shape[0], 1), prefactor)
    _, d_input = mlp_backward(np.hstack([zn, oh]), critic, upstream)
    d_embed = d_input[:, : zn.shape[1]]
    enc_grads, _ = mlp_backward(xn, encoder, d_embed)
    return LossOutput(value, {"encoder": enc_grads})


def clip_params(params: MlpParams, c: float) -> MlpParams:
    """Clamp every critic parameter into [-c, c]."""
    if c <= 0:
        raise ValueError("clip bound must be positive")
    layers = [(np.clip(w, -c, c), np.clip(b, -c, c)) for w, b in params.layers]
    return MlpParams(layers, params.activation)
