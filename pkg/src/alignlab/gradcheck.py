"""Finite-difference verification of every analytic loss gradient.

For each loss, 20 seeded random points are drawn; the analytic gradients are
compared against central finite differences of the same scalar function. The
reported figure per loss is the worst scale-normalized error
max|analytic - numeric| / max(magnitudes) over all points and blocks.
"""

from __future__ import annotations

import numpy as np

from .losses import (
    ArcmaxConfig,
    adversarial_encoder_loss,
    arcmax_loss,
    centroid_alignment_loss,
    class_centroids,
    cosmax_loss,
    critic_loss,
    softmax_loss,
)
from .numerics import Array, MlpParams, finite_diff_grad, init_mlp, normalize_columns

LOSS_NAMES = ("softmax", "cosmax", "arcmax", "centroid_alignment", "critic", "adversarial_encoder")

FD_STEP = 1e-5
TOLERANCE = 1e-4
POINTS_PER_LOSS = 20

# stable stream codes so each loss sees its own rng family
_CODES = {name: i for i, name in enumerate(LOSS_NAMES)}


def relative_error(analytic: list[Array], numeric: list[Array]) -> float:
    """Worst per-block max|a - f| normalized by the larger entry magnitude."""
    worst = 0.0
    for a, f in zip(analytic, numeric):
        scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(f).max(initial=0.0)), 1e-20)
        worst = max(worst, float(np.abs(a - f).max()) / scale)
    return worst


def _corruption(arrays: list[Array]) -> list[Array]:
    return [a + 1e-2 for a in arrays]


def _check_softmax(rng: np.random.Generator, corrupt: bool) -> float:
    logits = rng.normal(size=(6, 5)) * 2.0
    labels = rng.integers(0, 5, size=6)
    out = softmax_loss(logits, labels)
    analytic = [out.grads["logits"]]
    if corrupt:
        analytic = _corruption(analytic)
    numeric = finite_diff_grad(lambda p: softmax_loss(p[0], labels).value, [logits], FD_STEP)
    return relative_error(analytic, numeric)


def _cosine_case(rng: np.random.Generator):
    z = rng.normal(size=(6, 7))
    w = normalize_columns(rng.normal(size=(7, 5)))
    labels = rng.integers(0, 5, size=6)
    return z, w, labels


def _check_margin(rng: np.random.Generator, cfg: ArcmaxConfig, corrupt: bool) -> float:
    z, w, labels = _cosine_case(rng)
    out = arcmax_loss(z, labels, w, cfg)
    analytic = [out.grads["embeddings"], out.grads["classifier"]]
    if corrupt:
        analytic = _corruption(analytic)
    numeric = finite_diff_grad(
        lambda p: arcmax_loss(p[0], labels, p[1], cfg).value, [z, w], FD_STEP)
    return relative_error(analytic, numeric)


def _check_cosmax(rng: np.random.Generator, corrupt: bool) -> float:
    z, w, labels = _cosine_case(rng)
    out = cosmax_loss(z, labels, w, s=5.0)
    analytic = [out.grads["embeddings"], out.grads["classifier"]]
    if corrupt:
        analytic = _corruption(analytic)
    numeric = finite_diff_grad(
        lambda p: cosmax_loss(p[0], labels, p[1], s=5.0).value, [z, w], FD_STEP)
    return relative_error(analytic, numeric)


def _check_centroid_alignment(rng: np.random.Generator, corrupt: bool) -> float:
    z = rng.normal(size=(8, 6))
    labels = rng.integers(0, 4, size=8)
    centroids = class_centroids(rng.normal(size=(12, 6)), rng.integers(0, 4, size=12),
                                class_ids=range(4))
    out = centroid_alignment_loss(z, labels, centroids, "as_written", n_related=17)
    analytic = [out.grads["embeddings"]]
    if corrupt:
        analytic = _corruption(analytic)
    numeric = finite_diff_grad(
        lambda p: centroid_alignment_loss(p[0], labels, centroids, "as_written",
                                          n_related=17).value,
        [z], FD_STEP)
    return relative_error(analytic, numeric)


def _adversarial_case(rng: np.random.Generator):
    encoder = init_mlp([5, 8, 4], "tanh", rng)
    critic = init_mlp([4 + 3, 6, 1], "tanh", rng)
    novel_x = rng.normal(size=(5, 5))
    novel_y = rng.integers(0, 3, size=5)
    related_x = rng.normal(size=(7, 5))
    related_y = rng.integers(0, 3, size=7)
    return encoder, critic, novel_x, novel_y, related_x, related_y


def _check_critic(rng: np.random.Generator, corrupt: bool) -> float:
    encoder, critic, nx, ny, rx, ry = _adversarial_case(rng)
    out = critic_loss(nx, ny, rx, ry, encoder, critic, 3)
    analytic = [g for pair in out.grads["critic"] for g in pair]
    if corrupt:
        analytic = _corruption(analytic)
    numeric = finite_diff_grad(
        lambda p: critic_loss(nx, ny, rx, ry, encoder, critic.with_arrays(p), 3).value,
        critic.arrays(), FD_STEP)
    return relative_error(analytic, numeric)


def _check_adversarial_encoder(rng: np.random.Generator, corrupt: bool) -> float:
    encoder, critic, nx, ny, _, _ = _adversarial_case(rng)
    out = adversarial_encoder_loss(nx, ny, encoder, critic, 3, "as_written")
    analytic = [g for pair in out.grads["encoder"] for g in pair]
    if corrupt:
        analytic = _corruption(analytic)
    numeric = finite_diff_grad(
        lambda p: adversarial_encoder_loss(nx, ny, encoder.with_arrays(p), critic, 3,
                                           "as_written").value,
        encoder.arrays(), FD_STEP)
    return relative_error(analytic, numeric)


_CHECKS = {
    "softmax": _check_softmax,
    "cosmax": _check_cosmax,
    "arcmax": lambda rng, corrupt: _check_margin(rng, ArcmaxConfig(s=5.0, m=0.3), corrupt),
    "centroid_alignment": _check_centroid_alignment,
    "critic": _check_critic,
    "adversarial_encoder": _check_adversarial_encoder,
}


def run_gradcheck(seed: int = 0, corrupt: str | None = None,
                  points: int = POINTS_PER_LOSS) -> dict[str, float]:
    """Max relative error per loss over ``points`` seeded random cases.

    ``corrupt`` names a loss whose analytic gradients are deliberately
    perturbed (negative-control hook for the exit-code tests).
    """
    if corrupt is not None and corrupt not in LOSS_NAMES:
        raise ValueError(f"unknown loss {corrupt!r}")
    report = {}
    for name in LOSS_NAMES:
        check = _CHECKS[name]
        worst = 0.0
        for k in range(points):
            rng = np.random.default_rng([seed, _CODES[name], k])
            worst = max(worst, check(rng, corrupt == name))
        report[name] = worst
    return report


def gradcheck_passed(report: dict[str, float], tolerance: float = TOLERANCE) -> bool:
    return all(err < tolerance for err in report.values())
