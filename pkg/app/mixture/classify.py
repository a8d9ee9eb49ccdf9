import logging
from collections.abc import Sequence, Set
from fractions import Fraction

import numpy as np

from app.core.errors import InvalidArgumentError
from app.mixture.em import e_step
from app.schemas import (
    NOISE_LABEL,
    BreakdownVerdict,
    ClusterVerdict,
    Dataset,
    FitResult,
    MixtureParams,
    Partition,
)

logger = logging.getLogger(__name__)

BREAKDOWN_SIMILARITY = Fraction(2, 3)


def classify(params: MixtureParams, data: Dataset) -> Partition:
    """
    Label each point by its largest posterior weight. Components are labelled
    1..s in canonical order and win ties by lowest index; the noise column
    (label 0) only wins when strictly larger than every component.
    """
    resp = e_step(params, data)
    components = resp.components
    labels = np.argmax(components, axis=1) + 1
    if resp.noise is not None:
        labels = np.where(resp.noise > components.max(axis=1), NOISE_LABEL, labels)
    return Partition(labels=tuple(int(label) for label in labels))


def gamma(c: Set[int], d: Set[int]) -> Fraction:
    """Similarity 2|C & D| / (|C| + |D|): 0 only for disjoint, 1 only for equal sets"""
    if not c or not d:
        raise InvalidArgumentError("Similarity needs two nonempty sets")
    return Fraction(2 * len(c & d), len(c) + len(d))


def best_match(c: Set[int], partition: Partition) -> tuple[Fraction, int | None]:
    best: tuple[Fraction, int | None] = (Fraction(0), None)
    for label, cluster in partition.component_clusters.items():
        similarity = gamma(c, cluster)
        if similarity > best[0]:
            best = (similarity, label)
    return best


def gamma_star(c: Set[int], partition: Partition) -> Fraction:
    """Similarity of C to its most similar (non-noise) cluster of the partition"""
    if not partition.labels:
        raise InvalidArgumentError("Partition is empty")
    return best_match(c, partition)[0]


def induced_partition(
    fit_on_augmented: FitResult,
    augmented: Dataset,
    original: int | Sequence[int],
) -> Partition:
    """
    Classification of the augmented data restricted to the original points,
    given either their count (originals first) or their positions.
    """
    positions = range(original) if isinstance(original, int) else original
    labels = classify(fit_on_augmented.params, augmented).labels
    return Partition(labels=tuple(labels[p] for p in positions))


def classification_breakdown_check(
    original: Partition, restricted: Partition
) -> BreakdownVerdict:
    """Each original cluster breaks down when its best similarity is <= 2/3"""
    if len(original.labels) != len(restricted.labels):
        raise InvalidArgumentError("Partitions live on different index sets")
    verdicts = []
    for label, cluster in original.component_clusters.items():
        similarity, match = best_match(cluster, restricted)
        verdicts.append(
            ClusterVerdict(
                label=label,
                size=len(cluster),
                gamma_star=similarity,
                best_match=match,
                broke=similarity <= BREAKDOWN_SIMILARITY,
            )
        )
    verdict = BreakdownVerdict(clusters=tuple(verdicts))
    logger.debug(f"Classification breakdown of {verdict.broken_count} clusters")
    return verdict
