"""Stage orchestration: pre-training with episodic early stopping, baseline
fine-tuning, centroid alignment, and adversarial alignment.

All stages are seed-deterministic. Randomness comes from generators derived
from (seed, stream, ...) tuples, never from ambient entropy. Model state is
passed by value: every stage copies its input and returns a new state.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .episodes import (
    EvalResult,
    LabeledDataset,
    LabeledSplit,
    evaluate,
    nearest_centroid_classify,
    sample_episode,
)
from .errors import DivergenceError, InsufficientBaseClassesError, NumericError
from .losses import (
    ArcmaxConfig,
    PREFACTOR_MODES,
    adversarial_encoder_loss,
    arcmax_loss,
    class_centroids,
    centroid_alignment_loss,
    clip_params,
    critic_loss,
)
from .numerics import (
    AdamState,
    Array,
    MlpParams,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
    normalize_columns,
)
from .related_base import (
    RelatedBaseMap,
    compute_similarity,
    extract_related,
    select_related,
)

VARIANTS = ("baseline", "no_alignment", "centroid", "adversarial")

PAPER_CRITIC_WIDTH = 1024

# rng stream tags: (seed, stream, ...) feeds np.random.default_rng
_STREAM_INIT = 0
_STREAM_SHUFFLE = 1
_STREAM_VAL = 2


@dataclass(frozen=True)
class ModelConfig:
    """Encoder topology and critic width."""

    hidden_sizes: tuple[int, ...] = (64,)
    embed_dim: int = 32
    activation: str = "tanh"
    critic_width: int = 64

    def encoder_sizes(self, input_dim: int) -> list[int]:
        return [input_dim, *self.hidden_sizes, self.embed_dim]


@dataclass(frozen=True)
class EvalConfig:
    """Episode geometry and count for test-time evaluation."""

    n_way: int = 5
    k_shot: int = 5
    q_queries: int = 15
    episodes: int = 100


@dataclass(frozen=True)
class TrainConfig:
    """Learning rates, margins, and loop budgets for every stage."""

    lr_classifier: float = 1e-3
    lr_centroid: float = 1e-3
    lr_adversarial: float = 1e-5
    lr_critic: float = 1e-3
    batch_size: int = 64
    pretrain_s: float = 20.0
    pretrain_m: float = 0.1
    finetune_s: float = 5.0
    finetune_m: float = 0.1
    window: int = 50
    patience: int = 1
    max_pretrain_epochs: int = 120
    val_episodes: int = 50
    val_n_way: int = 5
    val_k_shot: int = 5
    val_q_queries: int = 15
    b_related: int = 10
    n_critic: int = 5
    clip: float = 0.01
    align_iterations: int = 100
    finetune_steps: int = 100
    centroid_prefactor: str = "as_written"
    adversarial_prefactor: str = "as_written"
    allow_shared_related: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("lr_classifier", "lr_centroid", "lr_adversarial", "lr_critic"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.window < 2:
            raise ValueError("window must be at least 2")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.n_critic < 1:
            raise ValueError("n_critic must be at least 1")
        if self.align_iterations < 0 or self.finetune_steps < 0:
            raise ValueError("iteration budgets cannot be negative")
        if self.clip <= 0:
            raise ValueError("clip bound must be positive")
        if self.centroid_prefactor not in PREFACTOR_MODES:
            raise ValueError(f"centroid_prefactor must be one of {PREFACTOR_MODES}")
        if self.adversarial_prefactor not in PREFACTOR_MODES:
            raise ValueError(f"adversarial_prefactor must be one of {PREFACTOR_MODES}")


@dataclass
class ModelState:
    """Encoder parameters, classifier columns, and (optionally) a critic."""

    encoder: MlpParams
    classifier: Array
    critic: MlpParams | None = None

    def copy(self) -> "ModelState":
        return ModelState(
            self.encoder.copy(),
            self.classifier.copy(),
            None if self.critic is None else self.critic.copy(),
        )


@dataclass
class EarlyStopTrace:
    """What the sliding-window rule saw and what it picked. Epochs are 1-based."""

    accuracies: list[float]
    window: int
    window_means: list[float]
    stop_epoch: int
    stopped_early: bool
    best_epoch: int
    best_accuracy: float
    train_losses: list[float]
    snapshots: dict[int, ModelState] = field(default_factory=dict, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "accuracies": self.accuracies,
            "window": self.window,
            "window_means": self.window_means,
            "stop_epoch": self.stop_epoch,
            "stopped_early": self.stopped_early,
            "best_epoch": self.best_epoch,
            "best_accuracy": self.best_accuracy,
            "train_losses": self.train_losses,
        }


def sliding_window_means(accuracies, window: int) -> list[float]:
    """Mean of each full trailing window; empty until ``window`` epochs exist."""
    if len(accuracies) < window:
        return []
    return [float(np.mean(accuracies[i - window + 1 : i + 1]))
            for i in range(window - 1, len(accuracies))]


def should_stop(window_means, patience: int) -> bool:
    """True once the window mean strictly decreased ``patience`` times in a row."""
    if len(window_means) < patience + 1:
        return False
    tail = window_means[-(patience + 1):]
    return all(b < a for a, b in zip(tail, tail[1:]))


def best_in_final_window(accuracies, window: int) -> int:
    """1-based epoch of the highest accuracy among the last ``window`` epochs.

    Ties resolve to the earliest epoch.
    """
    start = max(0, len(accuracies) - window)
    tail = accuracies[start:]
    return start + int(np.argmax(tail)) + 1


def init_classifier(embed_dim: int, n_classes: int, rng: np.random.Generator) -> Array:
    """Seeded uniform init followed by column normalization."""
    a = np.sqrt(6.0 / (embed_dim + n_classes))
    return normalize_columns(rng.uniform(-a, a, size=(embed_dim, n_classes)))


def _flatten_layer_grads(grads) -> list[Array]:
    return [g for pair in grads for g in pair]


def _episodic_validation(encoder: MlpParams, validation: LabeledSplit,
                         cfg: TrainConfig, epoch: int) -> float:
    accs = []
    for i in range(cfg.val_episodes):
        rng = np.random.default_rng([cfg.seed, _STREAM_VAL, epoch, i])
        ep = sample_episode(validation, cfg.val_n_way, cfg.val_k_shot, cfg.val_q_queries, rng)
        sup = mlp_forward(ep.support_features, encoder)
        qry = mlp_forward(ep.query_features, encoder)
        preds = nearest_centroid_classify(sup, ep.support_labels, qry)
        accs.append(float(np.mean(preds == ep.query_labels)))
    return float(np.mean(accs))


def pretrain(base: LabeledSplit, validation: LabeledSplit, model_cfg: ModelConfig,
             cfg: TrainConfig) -> tuple[ModelState, EarlyStopTrace]:
    """Minibatch angular-margin training on the base split with episodic early stopping.

    Each epoch shuffles the base set, applies Adam updates to the encoder and
    classifier (columns re-normalized after every step), then measures
    nearest-centroid accuracy on validation episodes. Training stops when the
    sliding-window mean of those accuracies strictly decreases ``patience``
    epochs in a row, and the best in-window model is returned.
    """
    init_rng = np.random.default_rng([cfg.seed, _STREAM_INIT])
    encoder = init_mlp(model_cfg.encoder_sizes(base.dim), model_cfg.activation, init_rng)
    base_ids = base.class_ids()
    col_of = {cid: i for i, cid in enumerate(base_ids)}
    labels = np.array([col_of[int(c)] for c in base.labels], dtype=np.intp)
    w = init_classifier(model_cfg.embed_dim, len(base_ids), init_rng)

    adam = AdamState.for_params(encoder.arrays() + [w], cfg.lr_classifier)
    arc = ArcmaxConfig(cfg.pretrain_s, cfg.pretrain_m)

    accuracies: list[float] = []
    train_losses: list[float] = []
    snapshots: deque[tuple[int, ModelState]] = deque(maxlen=cfg.window)
    stopped_early = False
    epoch = 0
    for epoch in range(1, cfg.max_pretrain_epochs + 1):
        order = np.random.default_rng([cfg.seed, _STREAM_SHUFFLE, epoch]).permutation(len(labels))
        batch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = base.features[idx], labels[idx]
            try:
                emb = mlp_forward(xb, encoder)
                out = arcmax_loss(emb, yb, w, arc)
                enc_grads, _ = mlp_backward(xb, encoder, out.grads["embeddings"])
                params, adam = adam_step(
                    encoder.arrays() + [w],
                    _flatten_layer_grads(enc_grads) + [out.grads["classifier"]],
                    adam,
                )
            except NumericError as exc:
                raise DivergenceError("pretrain", epoch) from exc
            encoder = encoder.with_arrays(params[:-1])
            w = normalize_columns(params[-1])
            batch_losses.append(out.value)
        train_losses.append(float(np.mean(batch_losses)))
        accuracies.append(_episodic_validation(encoder, validation, cfg, epoch))
        snapshots.append((epoch, ModelState(encoder.copy(), w.copy())))
        if should_stop(sliding_window_means(accuracies, cfg.window), cfg.patience):
            stopped_early = True
            break

    best_epoch = best_in_final_window(accuracies, cfg.window)
    snapshot_map = {e: m for e, m in snapshots}
    trace = EarlyStopTrace(
        accuracies=accuracies,
        window=cfg.window,
        window_means=sliding_window_means(accuracies, cfg.window),
        stop_epoch=epoch,
        stopped_early=stopped_early,
        best_epoch=best_epoch,
        best_accuracy=accuracies[best_epoch - 1],
        train_losses=train_losses,
        snapshots=snapshot_map,
    )
    return snapshot_map[best_epoch].copy(), trace


def finetune_baseline(model: ModelState, support_x, support_y, cfg: TrainConfig,
                      rng: np.random.Generator, n_classes: int | None = None) -> ModelState:
    """Train a fresh novel-way classifier on the support set; encoder frozen."""
    support_y = np.asarray(support_y, dtype=np.intp)
    if support_y.size == 0:
        raise ValueError("support set is empty")
    if n_classes is None:
        n_classes = int(support_y.max()) + 1
    emb = mlp_forward(support_x, model.encoder)  # theta frozen, embed once
    w = init_classifier(model.encoder.output_dim, n_classes, rng)
    adam = AdamState.for_params([w], cfg.lr_classifier)
    arc = ArcmaxConfig(cfg.finetune_s, cfg.finetune_m)
    for step in range(1, cfg.finetune_steps + 1):
        try:
            out = arcmax_loss(emb, support_y, w, arc)
            (w_new,), adam = adam_step([w], [out.grads["classifier"]], adam)
        except NumericError as exc:
            raise DivergenceError("finetune", step) from exc
        w = normalize_columns(w_new)
    return ModelState(model.encoder.copy(), w)


class _EpochSampler:
    """Without-replacement batches; reshuffles whenever a pass is exhausted."""

    def __init__(self, count: int, batch_size: int, rng: np.random.Generator):
        self._count = count
        self._batch = min(batch_size, count)
        self._rng = rng
        self._order = rng.permutation(count)
        self._pos = 0

    def next(self) -> Array:
        if self._pos + self._batch > self._count:
            self._order = self._rng.permutation(self._count)
            self._pos = 0
        out = self._order[self._pos : self._pos + self._batch]
        self._pos += self._batch
        return out


def _sgd_encoder(encoder: MlpParams, grads, lr: float) -> MlpParams:
    flat = _flatten_layer_grads(grads)
    return encoder.with_arrays([a - lr * g for a, g in zip(encoder.arrays(), flat)])


def _classification_updates(encoder: MlpParams, w: Array, novel_x, novel_y,
                            rb_x, rb_y, cfg: TrainConfig) -> tuple[MlpParams, Array, dict]:
    """The shared tail of both alignment loops.

    Classifier step on the related batch, then one evaluation on the novel
    batch from which both the classifier and the encoder are stepped. Columns
    re-normalize after every classifier update.
    """
    arc = ArcmaxConfig(cfg.finetune_s, cfg.finetune_m)
    emb_rb = mlp_forward(rb_x, encoder)
    out_rb = arcmax_loss(emb_rb, rb_y, w, arc)
    w = normalize_columns(w - cfg.lr_classifier * out_rb.grads["classifier"])

    emb_n = mlp_forward(novel_x, encoder)
    out_n = arcmax_loss(emb_n, novel_y, w, arc)
    enc_grads, _ = mlp_backward(novel_x, encoder, out_n.grads["embeddings"])
    w = normalize_columns(w - cfg.lr_classifier * out_n.grads["classifier"])
    encoder = _sgd_encoder(encoder, enc_grads, cfg.lr_classifier)
    return encoder, w, {"clf_related": out_rb.value, "clf_novel": out_n.value}


def mean_centroid_distance(encoder: MlpParams, support_x, support_y,
                           related_x, related_y) -> float:
    """Mean distance from support embeddings to their class's related centroid."""
    centroids = class_centroids(mlp_forward(related_x, encoder), related_y)
    emb = mlp_forward(support_x, encoder)
    mu = np.stack([centroids[int(c)] for c in np.asarray(support_y)])
    return float(np.linalg.norm(emb - mu, axis=1).mean())


def align_centroid(model: ModelState, support_x, support_y, related_x, related_y,
                   cfg: TrainConfig, rng: np.random.Generator,
                   centroid_step: bool = True,
                   on_iteration: Callable[[int, dict], None] | None = None) -> ModelState:
    """Centroid alignment loop (``centroid_step=False`` gives the no-alignment control).

    Per iteration: sample a novel batch (with replacement; the support is
    tiny) and a related batch (without replacement per pass); pull the novel
    batch toward the related-class centroids; then apply the classification
    updates. Centroids are recomputed from the full related set every
    iteration and treated as constants within it.
    """
    model = model.copy()
    encoder, w = model.encoder, model.classifier
    support_x = np.asarray(support_x, dtype=np.float64)
    support_y = np.asarray(support_y, dtype=np.intp)
    related_x = np.asarray(related_x, dtype=np.float64)
    related_y = np.asarray(related_y, dtype=np.intp)
    rb_sampler = _EpochSampler(len(related_x), cfg.batch_size, rng)

    if on_iteration is not None:
        on_iteration(0, {
            "stage": "centroid" if centroid_step else "no_alignment",
            "centroid_distance": mean_centroid_distance(encoder, support_x, support_y,
                                                        related_x, related_y),
        })
    for it in range(1, cfg.align_iterations + 1):
        novel_idx = rng.integers(0, len(support_x), size=cfg.batch_size)
        nb_x, nb_y = support_x[novel_idx], support_y[novel_idx]
        rb_idx = rb_sampler.next()
        rb_x, rb_y = related_x[rb_idx], related_y[rb_idx]
        try:
            info = {"stage": "centroid" if centroid_step else "no_alignment", "iteration": it}
            if centroid_step:
                centroids = class_centroids(mlp_forward(related_x, encoder), related_y)
                emb_nb = mlp_forward(nb_x, encoder)
                ca = centroid_alignment_loss(emb_nb, nb_y, centroids,
                                             cfg.centroid_prefactor, n_related=len(related_x))
                enc_grads, _ = mlp_backward(nb_x, encoder, ca.grads["embeddings"])
                encoder = _sgd_encoder(encoder, enc_grads, cfg.lr_centroid)
                info["loss_ca"] = ca.value
            encoder, w, clf_losses = _classification_updates(
                encoder, w, nb_x, nb_y, rb_x, rb_y, cfg)
            info.update(clf_losses)
        except NumericError as exc:
            raise DivergenceError("centroid alignment", it) from exc
        if on_iteration is not None:
            info["centroid_distance"] = mean_centroid_distance(
                encoder, support_x, support_y, related_x, related_y)
            on_iteration(it, info)
    return ModelState(encoder, w, model.critic)


def align_adversarial(model: ModelState, support_x, support_y, related_x, related_y,
                      cfg: TrainConfig, rng: np.random.Generator,
                      model_cfg: ModelConfig,
                      on_iteration: Callable[[int, dict], None] | None = None) -> ModelState:
    """Adversarial alignment with a freshly initialized, weight-clipped critic.

    Per iteration: ``n_critic`` ascent steps on the critic score gap (each
    followed by clipping to [-clip, clip]), one descent step of the encoder
    against the critic, then the shared classification updates.
    """
    model = model.copy()
    encoder, w = model.encoder, model.classifier
    support_x = np.asarray(support_x, dtype=np.float64)
    support_y = np.asarray(support_y, dtype=np.intp)
    related_x = np.asarray(related_x, dtype=np.float64)
    related_y = np.asarray(related_y, dtype=np.intp)
    n_classes = w.shape[1]
    if cfg.align_iterations == 0:
        return model

    critic = init_mlp([model_cfg.embed_dim + n_classes, model_cfg.critic_width, 1],
                      model_cfg.activation, rng)
    rb_sampler = _EpochSampler(len(related_x), cfg.batch_size, rng)
    for it in range(1, cfg.align_iterations + 1):
        novel_idx = rng.integers(0, len(support_x), size=cfg.batch_size)
        nb_x, nb_y = support_x[novel_idx], support_y[novel_idx]
        rb_idx = rb_sampler.next()
        rb_x, rb_y = related_x[rb_idx], related_y[rb_idx]
        try:
            for _ in range(cfg.n_critic):
                ch = critic_loss(nb_x, nb_y, rb_x, rb_y, encoder, critic, n_classes)
                ascended = [a + cfg.lr_critic * g
                            for a, g in zip(critic.arrays(),
                                            _flatten_layer_grads(ch.grads["critic"]))]
                critic = clip_params(critic.with_arrays(ascended), cfg.clip)
            aa = adversarial_encoder_loss(nb_x, nb_y, encoder, critic, n_classes,
                                          cfg.adversarial_prefactor)
            encoder = _sgd_encoder(encoder, aa.grads["encoder"], cfg.lr_adversarial)
            encoder, w, clf_losses = _classification_updates(
                encoder, w, nb_x, nb_y, rb_x, rb_y, cfg)
        except NumericError as exc:
            raise DivergenceError("adversarial alignment", it) from exc
        if on_iteration is not None:
            info = {"stage": "adversarial", "iteration": it,
                    "loss_critic": ch.value, "loss_aa": aa.value,
                    "critic_max_abs": max(float(np.abs(a).max()) for a in critic.arrays())}
            info.update(clf_losses)
            on_iteration(it, info)
    return ModelState(encoder, w, critic)


def substitute_related(rbmap: RelatedBaseMap, all_base_ids, count: int,
                       rng: np.random.Generator) -> RelatedBaseMap:
    """Replace ``count`` of each novel class's related bases with random ones.

    Replacements are drawn from base classes not currently selected anywhere,
    so the lists stay disjoint; freed classes rejoin the pool.
    """
    b = rbmap.num_related_per_class
    if not 0 <= count <= b:
        raise ValueError(f"count must lie in [0, {b}]")
    if count == 0:
        return RelatedBaseMap({k: list(v) for k, v in rbmap.related.items()})
    selected = {bid for bases in rbmap.related.values() for bid in bases}
    pool = sorted(set(int(i) for i in all_base_ids) - selected)
    if not pool:
        raise InsufficientBaseClassesError("no unselected base classes to substitute from")
    related = {k: list(v) for k, v in rbmap.related.items()}
    for novel in sorted(related):
        positions = sorted(rng.choice(b, size=count, replace=False))
        for pos in positions:
            pick = int(pool[rng.integers(0, len(pool))])
            pool.remove(pick)
            pool.append(related[novel][pos])
            pool.sort()
            related[novel][pos] = pick
    return RelatedBaseMap(related)


@dataclass
class ExperimentResult:
    """Metrics record for one variant run."""

    variant: str
    seed: int
    n_way: int
    k_shot: int
    q_queries: int
    episode_count: int
    mean: float
    ci: float
    failed_episodes: int
    accuracies: list[float]
    early_stop: dict
    stage_losses: dict
    episode_records: list[dict]
    config_hash: str = ""
    embedding_snapshot: dict | None = field(default=None, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "n_way": self.n_way,
            "k_shot": self.k_shot,
            "q_queries": self.q_queries,
            "episodes": self.episode_count,
            "mean": self.mean,
            "ci": self.ci,
            "failed_episodes": self.failed_episodes,
            "accuracies": self.accuracies,
            "early_stop": self.early_stop,
            "stage_losses": self.stage_losses,
            "config_hash": self.config_hash,
        }


def run_experiment(dataset: LabeledDataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
                   eval_cfg: EvalConfig, variant: str, wrong_related: int = 0,
                   pretrained: tuple[ModelState, EarlyStopTrace] | None = None,
                   config_hash: str = "", capture_embeddings: bool = False) -> ExperimentResult:
    """Pre-train once, then adapt and evaluate per novel episode.

    Every episode re-runs fine-tuning and (for non-baseline variants)
    related-base detection on the fine-tuned classifier, followed by the
    variant's alignment loop. ``wrong_related`` substitutes that many of each
    novel class's detected bases with random ones (sensitivity harness).
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if pretrained is None:
        pretrained = pretrain(dataset.base, dataset.validation, model_cfg, train_cfg)
    model, trace = pretrained

    base = dataset.base
    stage_losses: dict = {
        "pretrain_train_loss": trace.train_losses,
        "pretrain_val_accuracy": trace.accuracies,
        "alignment_episode0": [],
    }
    snapshot: dict = {}
    episode_index = {"current": -1}

    def episode_fn(episode, rng):
        episode_index["current"] += 1
        first = episode_index["current"] == 0
        current = finetune_baseline(model, episode.support_features, episode.support_labels,
                                    train_cfg, rng, n_classes=episode.n_way)
        if variant != "baseline":
            sim = compute_similarity(base.features, base.labels,
                                     current.encoder, current.classifier)
            rbmap = select_related(sim, train_cfg.b_related, train_cfg.allow_shared_related)
            if wrong_related:
                rbmap = substitute_related(rbmap, base.class_ids(), wrong_related, rng)
            rel_x, rel_y = extract_related(base.features, base.labels, rbmap)
            collect = None
            if first:
                collect = lambda it, info: stage_losses["alignment_episode0"].append(info)
                if capture_embeddings:
                    snapshot["before"] = _embedding_snapshot(current, episode, rel_x, rel_y)
            if variant == "centroid":
                current = align_centroid(current, episode.support_features, episode.support_labels,
                                         rel_x, rel_y, train_cfg, rng, on_iteration=collect)
            elif variant == "no_alignment":
                current = align_centroid(current, episode.support_features, episode.support_labels,
                                         rel_x, rel_y, train_cfg, rng, centroid_step=False,
                                         on_iteration=collect)
            else:
                current = align_adversarial(current, episode.support_features,
                                            episode.support_labels, rel_x, rel_y,
                                            train_cfg, rng, model_cfg, on_iteration=collect)
            if first and capture_embeddings:
                snapshot["after"] = _embedding_snapshot(current, episode, rel_x, rel_y)
        scores = mlp_forward(episode.query_features, current.encoder) @ current.classifier
        return np.argmax(scores, axis=1)

    episode_records: list[dict] = []
    result: EvalResult = evaluate(
        episode_fn, dataset.novel, eval_cfg.n_way, eval_cfg.k_shot, eval_cfg.q_queries,
        eval_cfg.episodes, train_cfg.seed, record_hook=episode_records.append)

    return ExperimentResult(
        variant=variant,
        seed=train_cfg.seed,
        n_way=eval_cfg.n_way,
        k_shot=eval_cfg.k_shot,
        q_queries=eval_cfg.q_queries,
        episode_count=eval_cfg.episodes,
        mean=result.mean,
        ci=result.ci,
        failed_episodes=result.failed_episodes,
        accuracies=result.accuracies,
        early_stop=trace.to_json_dict(),
        stage_losses=stage_losses,
        episode_records=episode_records,
        config_hash=config_hash,
        embedding_snapshot=snapshot or None,
    )


def _embedding_snapshot(model: ModelState, episode, rel_x, rel_y) -> dict:
    return {
        "novel": mlp_forward(episode.support_features, model.encoder),
        "novel_labels": np.asarray(episode.support_labels).copy(),
        "related": mlp_forward(rel_x, model.encoder),
        "related_labels": np.asarray(rel_y).copy(),
    }


def sensitivity_curve(dataset: LabeledDataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
                      eval_cfg: EvalConfig, counts, seeds,
                      pretrained: tuple[ModelState, EarlyStopTrace] | None = None,
                      variant: str = "centroid") -> dict[int, list[float]]:
    """Mean accuracy per substitution count, one entry per evaluation seed.

    The pre-trained model is shared; seeds vary the episode streams so runs
    are paired across counts.
    """
    if pretrained is None:
        pretrained = pretrain(dataset.base, dataset.validation, model_cfg, train_cfg)
    out: dict[int, list[float]] = {int(c): [] for c in counts}
    for seed in seeds:
        cfg = replace(train_cfg, seed=int(seed))
        for c in counts:
            res = run_experiment(dataset, model_cfg, cfg, eval_cfg, variant,
                                 wrong_related=int(c), pretrained=pretrained)
            out[int(c)].append(res.mean)
    return out
