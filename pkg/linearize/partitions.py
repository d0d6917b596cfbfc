"""
Set partitions and subset enumeration for mixed derivatives.

A multi-index such as ``(1, 2)`` or ``(1, 1, 3)`` is treated as a set of
positions; every sub-derivative is addressed by the sorted labels of the
positions it contains.
"""

from itertools import combinations
from typing import Iterator, List, Sequence, Tuple

Labels = Tuple[int, ...]


def normalize(labels: Sequence[int]) -> Labels:
    return tuple(sorted(int(label) for label in labels))


def set_partitions(items: Sequence) -> Iterator[List[Tuple]]:
    """All partitions of ``items`` into nonempty blocks (positions kept distinct)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partition in set_partitions(rest):
        yield [(first,)] + partition
        for i, block in enumerate(partition):
            yield partition[:i] + [(first,) + block] + partition[i + 1 :]


def proper_subsets(positions: Sequence[int]) -> Iterator[Tuple[Tuple, Tuple]]:
    """Pairs ``(A, S minus A)`` for every proper nonempty subset ``A``."""
    positions = tuple(positions)
    for size in range(1, len(positions)):
        for subset in combinations(positions, size):
            rest = tuple(p for p in positions if p not in subset)
            yield subset, rest


def labels_of(labels: Labels, positions: Sequence[int]) -> Labels:
    return normalize(labels[p] for p in positions)
