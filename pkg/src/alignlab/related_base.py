"""Base-to-novel similarity scoring and related-base selection.

The similarity matrix rows are per-base-class histograms of argmax novel
predictions, so each row sums to one by construction. Selection keeps, per
novel class, the highest-scoring base classes, resolving contention greedily
so the resulting label map stays single-valued.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    EmptyClassError,
    InsufficientBaseClassesError,
    MappingError,
)
from .numerics import Array, MlpParams, as_matrix, mlp_forward


@dataclass
class SimilarityMatrix:
    """Row-stochastic (K_base x K_novel) matrix of classification ratios."""

    matrix: Array
    base_class_ids: list[int]

    def __post_init__(self):
        m = as_matrix(self.matrix, "similarity matrix")
        if m.shape[0] != len(self.base_class_ids):
            raise DimensionError("one row per base class required")
        if m.size and (m.min() < 0.0 or m.max() > 1.0):
            raise ValueError("similarity entries must lie in [0, 1]")
        row_sums = m.sum(axis=1)
        if m.shape[1] and np.any(np.abs(row_sums - 1.0) > 1e-9):
            bad = int(np.argmax(np.abs(row_sums - 1.0)))
            raise ValueError(f"row {bad} sums to {row_sums[bad]!r}, expected 1")
        self.matrix = m

    @property
    def num_novel(self) -> int:
        return self.matrix.shape[1]


def compute_similarity(features, labels, encoder: MlpParams, classifier: Array,
                       base_class_ids: list[int] | None = None) -> SimilarityMatrix:
    """Fraction of each base class argmax-classified into each novel class.

    ``classifier`` is the K_novel-column weight matrix fine-tuned on the novel
    support with the encoder frozen. Argmax ties resolve to the lowest novel
    index.
    """
    x = as_matrix(features, "base features")
    y = np.asarray(labels)
    w = as_matrix(classifier, "classifier weights")
    if base_class_ids is None:
        base_class_ids = sorted(int(c) for c in np.unique(y))
    scores = mlp_forward(x, encoder) @ w
    preds = np.argmax(scores, axis=1)
    k_novel = w.shape[1]
    rows = []
    for cid in base_class_ids:
        mask = y == cid
        count = int(mask.sum())
        if count == 0:
            raise EmptyClassError(f"base class {cid} has no examples")
        rows.append(np.bincount(preds[mask], minlength=k_novel) / count)
    return SimilarityMatrix(np.stack(rows), list(base_class_ids))


@dataclass
class RelatedBaseMap:
    """Per-novel-class related base ids plus the base-to-novel label map g."""

    related: dict[int, list[int]]
    mapping: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.related.values()}
        if len(lengths) > 1:
            raise ValueError("every novel class must have the same number of related bases")
        if not self.mapping:
            self.mapping = {}
            for novel, bases in self.related.items():
                for b in bases:
                    self.mapping.setdefault(int(b), int(novel))

    @property
    def num_related_per_class(self) -> int:
        return next(iter(map(len, self.related.values())), 0)

    def all_base_ids(self) -> list[int]:
        return sorted({b for bases in self.related.values() for b in bases})

    def to_json(self) -> str:
        doc = {
            "related": {str(k): list(map(int, v)) for k, v in sorted(self.related.items())},
            "mapping": {str(k): int(v) for k, v in sorted(self.mapping.items())},
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RelatedBaseMap":
        doc = json.loads(text)
        related = {int(k): [int(b) for b in v] for k, v in doc["related"].items()}
        mapping = {int(k): int(v) for k, v in doc.get("mapping", {}).items()}
        return cls(related, mapping)


def select_related(sim: SimilarityMatrix, b: int, allow_shared: bool = False) -> RelatedBaseMap:
    """Pick the ``b`` highest-scoring base classes for each novel class.

    By default lists are kept pairwise disjoint: candidate (base, novel)
    pairs are taken in order of descending score, so a base class contested
    by several novel classes goes to the one that scores it highest and the
    others fall back to their next-best unselected class. Ties break toward
    the lowest base index, then the lowest novel index. ``allow_shared``
    disables the resolution (ablation mode); g then maps each base class to
    its highest-scoring selector.
    """
    if b <= 0:
        raise ValueError("b must be positive")
    m = sim.matrix
    k_base, k_novel = m.shape
    if b > k_base:
        raise InsufficientBaseClassesError(f"b={b} exceeds {k_base} base classes")

    if allow_shared:
        related: dict[int, list[int]] = {}
        mapping: dict[int, int] = {}
        best_score: dict[int, float] = {}
        for j in range(k_novel):
            # stable sort on (-score, base index)
            order = sorted(range(k_base), key=lambda i: (-m[i, j], i))[:b]
            related[j] = [int(sim.base_class_ids[i]) for i in order]
            for i in order:
                base_id = int(sim.base_class_ids[i])
                score = float(m[i, j])
                if base_id not in mapping or score > best_score[base_id]:
                    mapping[base_id] = j
                    best_score[base_id] = score
        return RelatedBaseMap(related, mapping)

    if b * k_novel > k_base:
        raise InsufficientBaseClassesError(
            f"disjoint selection of {b} bases for {k_novel} novel classes "
            f"needs {b * k_novel} base classes, only {k_base} available"
        )
    candidates = sorted(
        ((i, j) for i in range(k_base) for j in range(k_novel)),
        key=lambda ij: (-m[ij[0], ij[1]], ij[0], ij[1]),
    )
    related = {j: [] for j in range(k_novel)}
    taken: set[int] = set()
    for i, j in candidates:
        if i in taken or len(related[j]) >= b:
            continue
        related[j].append(int(sim.base_class_ids[i]))
        taken.add(i)
    return RelatedBaseMap(related)


def relabel_related(features, labels, rbmap: RelatedBaseMap) -> tuple[Array, Array]:
    """Replace base labels with g(label); features pass through untouched."""
    x = as_matrix(features, "related features")
    y = np.asarray(labels)
    if y.shape != (x.shape[0],):
        raise DimensionError("labels must have one entry per feature row")
    new_labels = np.empty_like(y)
    for i, lab in enumerate(y):
        key = int(lab)
        if key not in rbmap.mapping:
            raise MappingError(f"base class {key} is not in the related-base map")
        new_labels[i] = rbmap.mapping[key]
    return x, new_labels


def extract_related(features, labels, rbmap: RelatedBaseMap) -> tuple[Array, Array]:
    """Gather all examples of the selected base classes, relabeled via g."""
    x = as_matrix(features, "base features")
    y = np.asarray(labels)
    mask = np.isin(y, rbmap.all_base_ids())
    return relabel_related(x[mask], y[mask], rbmap)
