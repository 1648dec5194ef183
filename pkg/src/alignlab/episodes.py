"""Datasets, synthetic generation with planted relatedness, and episodic evaluation.

A dataset is three labeled splits (base / validation / novel) with disjoint
class id ranges. The synthetic generator places each novel class center at
the mean of its planted base class centers plus a small offset, so ground
truth for related-base detection is known exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, SamplingError, SyntheticSpecError
from .numerics import Array, as_matrix

SPLIT_NAMES = ("base", "validation", "novel")


@dataclass
class LabeledSplit:
    """Feature rows with integer class labels for one split."""

    features: Array
    labels: Array

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionError("labels must have one entry per feature row")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_ids(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels))

    def examples_of(self, class_id: int) -> Array:
        return self.features[self.labels == class_id]


@dataclass
class LabeledDataset:
    """Base / validation / novel splits with disjoint class rosters."""

    base: LabeledSplit
    validation: LabeledSplit
    novel: LabeledSplit

    def __post_init__(self):
        rosters = [set(s.class_ids()) for s in (self.base, self.validation, self.novel)]
        for i in range(len(rosters)):
            for j in range(i + 1, len(rosters)):
                overlap = rosters[i] & rosters[j]
                if overlap:
                    raise ValueError(f"splits share class ids {sorted(overlap)}")

    def split(self, name: str) -> LabeledSplit:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class SyntheticSpec:
    """Geometry of the planted Gaussian-mixture dataset.

    Each novel class center is the mean of ``relatives_per_novel`` distinct
    base class centers plus ``offset_scale`` of Gaussian offset; clusters have
    isotropic spread ``cluster_sigma``. Validation classes are independent
    clusters drawn like base centers.
    """

    dim: int = 16
    base_classes: int = 20
    novel_classes: int = 5
    relatives_per_novel: int = 3
    cluster_sigma: float = 0.5
    offset_scale: float = 0.25
    center_scale: float = 1.0
    base_examples: int = 60
    novel_examples: int = 30
    validation_classes: int = 5
    validation_examples: int = 30
    seed: int = 0

    def __post_init__(self):
        if min(self.dim, self.base_classes, self.novel_classes,
               self.relatives_per_novel, self.base_examples,
               self.novel_examples, self.validation_classes,
               self.validation_examples) <= 0:
            raise SyntheticSpecError("all counts must be positive")
        if self.cluster_sigma <= 0:
            raise SyntheticSpecError("cluster_sigma must be positive")
        if self.relatives_per_novel * self.novel_classes > self.base_classes:
            raise SyntheticSpecError(
                "disjoint planting needs relatives_per_novel * novel_classes "
                f"<= base_classes ({self.relatives_per_novel} * {self.novel_classes} "
                f"> {self.base_classes})"
            )


def generate_synthetic(spec: SyntheticSpec) -> tuple[LabeledDataset, dict[int, list[int]]]:
    """Build the planted dataset; returns it with the novel-to-base ground truth."""
    rng = np.random.default_rng(spec.seed)
    base_centers = rng.normal(size=(spec.base_classes, spec.dim)) * spec.center_scale

    perm = rng.permutation(spec.base_classes)
    planted = {}
    novel_centers = np.zeros((spec.novel_classes, spec.dim))
    val_start = spec.base_classes
    novel_start = spec.base_classes + spec.validation_classes
    for j in range(spec.novel_classes):
        picks = sorted(int(p) for p in perm[j * spec.relatives_per_novel:(j + 1) * spec.relatives_per_novel])
        planted[novel_start + j] = picks
        offset = rng.normal(size=spec.dim) * spec.offset_scale
        novel_centers[j] = base_centers[picks].mean(axis=0) + offset

    val_centers = rng.normal(size=(spec.validation_classes, spec.dim)) * spec.center_scale

    def sample_split(centers, counts, first_id):
        feats, labs = [], []
        for c, center in enumerate(centers):
            feats.append(center + rng.normal(size=(counts, spec.dim)) * spec.cluster_sigma)
            labs.append(np.full(counts, first_id + c, dtype=np.intp))
        return LabeledSplit(np.vstack(feats), np.concatenate(labs))

    dataset = LabeledDataset(
        base=sample_split(base_centers, spec.base_examples, 0),
        validation=sample_split(val_centers, spec.validation_examples, val_start),
        novel=sample_split(novel_centers, spec.novel_examples, novel_start),
    )
    return dataset, planted


@dataclass
class Episode:
    """One N-way k-shot task with a disjoint query set.

    Labels are remapped to [0, N): original class ids sorted ascending take
    episode ids 0..N-1. ``support_indices``/``query_indices`` point into the
    source split.
    """

    n_way: int
    k_shot: int
    q_queries: int
    support_features: Array
    support_labels: Array
    query_features: Array
    query_labels: Array
    class_map: dict[int, int]
    support_indices: Array
    query_indices: Array

    def __post_init__(self):
        if set(self.support_indices) & set(self.query_indices):
            raise SamplingError("support and query sets overlap")
        if len(self.class_map) != self.n_way:
            raise SamplingError("episode must contain exactly n_way classes")
        for ep_id in range(self.n_way):
            if int((self.support_labels == ep_id).sum()) != self.k_shot:
                raise SamplingError(f"episode class {ep_id} lacks {self.k_shot} support examples")
            if int((self.query_labels == ep_id).sum()) != self.q_queries:
                raise SamplingError(f"episode class {ep_id} lacks {self.q_queries} query examples")


def sample_episode(split: LabeledSplit, n_way: int, k_shot: int, q_queries: int,
                   rng: np.random.Generator) -> Episode:
    """Draw an episode without replacement from one split."""
    class_ids = split.class_ids()
    if len(class_ids) < n_way:
        raise SamplingError(f"split has {len(class_ids)} classes, episode needs {n_way}")
    chosen = sorted(int(c) for c in rng.choice(class_ids, size=n_way, replace=False))
    class_map = {orig: ep for ep, orig in enumerate(chosen)}

    sup_idx, qry_idx, sup_lab, qry_lab = [], [], [], []
    for orig in chosen:
        pool = np.flatnonzero(split.labels == orig)
        if pool.size < k_shot + q_queries:
            raise SamplingError(
                f"class {orig} has {pool.size} examples, episode needs {k_shot + q_queries}"
            )
        picks = rng.choice(pool, size=k_shot + q_queries, replace=False)
        sup_idx.append(picks[:k_shot])
        qry_idx.append(picks[k_shot:])
        sup_lab.append(np.full(k_shot, class_map[orig], dtype=np.intp))
        qry_lab.append(np.full(q_queries, class_map[orig], dtype=np.intp))

    sup_idx = np.concatenate(sup_idx)
    qry_idx = np.concatenate(qry_idx)
    return Episode(
        n_way=n_way,
        k_shot=k_shot,
        q_queries=q_queries,
        support_features=split.features[sup_idx],
        support_labels=np.concatenate(sup_lab),
        query_features=split.features[qry_idx],
        query_labels=np.concatenate(qry_lab),
        class_map=class_map,
        support_indices=sup_idx,
        query_indices=qry_idx,
    )


def nearest_centroid_classify(support_embeddings, support_labels, query_embeddings) -> Array:
    """Assign each query to the nearest support-class centroid (ties: lowest id)."""
    sup = as_matrix(support_embeddings, "support embeddings")
    qry = as_matrix(query_embeddings, "query embeddings")
    labels = np.asarray(support_labels)
    class_ids = sorted(int(c) for c in np.unique(labels))
    centroids = np.stack([sup[labels == c].mean(axis=0) for c in class_ids])
    diff = qry[:, None, :] - centroids[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    picks = np.argmin(d2, axis=1)  # first minimum = lowest class id
    return np.array([class_ids[p] for p in picks], dtype=np.intp)


def confidence_interval_95(values) -> float:
    """1.96 * sample standard deviation / sqrt(n)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0 if v.size == 1 else float("nan")
    return float(1.96 * v.std(ddof=1) / np.sqrt(v.size))


@dataclass
class EvalResult:
    """Aggregate episodic accuracy with a 95% confidence interval."""

    mean: float
    ci: float
    accuracies: list[float]
    failed_episodes: int

    def to_json_dict(self) -> dict:
        return {
            "mean": self.mean,
            "ci": self.ci,
            "episodes": len(self.accuracies),
            "failed_episodes": self.failed_episodes,
        }


def episode_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent per-episode generator derived from (seed, index, stream)."""
    return np.random.default_rng([seed, index, stream])


def evaluate(episode_fn, split: LabeledSplit, n_way: int, k_shot: int, q_queries: int,
             episode_count: int, seed: int, record_hook=None) -> EvalResult:
    """Run ``episode_count`` episodes and aggregate query accuracy.

    ``episode_fn(episode, rng)`` returns predicted query labels; raising
    :class:`~alignlab.errors.DivergenceError` marks the episode failed, which
    excludes it from the mean but keeps it counted.
    """
    from .errors import DivergenceError

    if episode_count < 2:
        raise ValueError("need at least 2 episodes for a confidence interval")
    accuracies = []
    failed = 0
    for e in range(episode_count):
        episode = sample_episode(split, n_way, k_shot, q_queries, episode_rng(seed, e, 0))
        try:
            preds = episode_fn(episode, episode_rng(seed, e, 1))
        except DivergenceError:
            failed += 1
            if record_hook is not None:
                record_hook({"episode": e, "failed": True})
            continue
        acc = float(np.mean(np.asarray(preds) == episode.query_labels))
        accuracies.append(acc)
        if record_hook is not None:
            record_hook({"episode": e, "failed": False, "accuracy": acc})
    return EvalResult(
        mean=float(np.mean(accuracies)) if accuracies else float("nan"),
        ci=confidence_interval_95(accuracies),
        accuracies=accuracies,
        failed_episodes=failed,
    )


def save_dataset_csv(path, dataset: LabeledDataset) -> None:
    """Write all splits to one CSV: d feature columns, then label, then split."""
    dim = dataset.base.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dim)] + ["label", "split"])
        for name in SPLIT_NAMES:
            split = dataset.split(name)
            for row, label in zip(split.features, split.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label), name])


def load_dataset_csv(path) -> LabeledDataset:
    """Read a dataset written in the ``save_dataset_csv`` column layout."""
    buckets: dict[str, tuple[list, list]] = {name: ([], []) for name in SPLIT_NAMES}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-2:] != ["label", "split"]:
            raise ValueError(f"{path}: expected feature columns followed by 'label','split'")
        dim = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 2:
                raise ValueError(f"{path}:{lineno}: expected {dim + 2} columns, got {len(row)}")
            name = row[-1]
            if name not in buckets:
                raise ValueError(f"{path}:{lineno}: unknown split {name!r}")
            feats, labs = buckets[name]
            feats.append([float(v) for v in row[:dim]])
            labs.append(int(row[-2]))
    splits = {}
    for name, (feats, labs) in buckets.items():
        if not feats:
            raise ValueError(f"{path}: split {name!r} has no rows")
        splits[name] = LabeledSplit(np.array(feats), np.array(labs))
    return LabeledDataset(splits["base"], splits["validation"], splits["novel"])


def write_jsonl(path, records) -> None:
    """Append one JSON document per record."""
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
