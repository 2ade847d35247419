"""Labeled index sequences and their combinatorics.

Everything downstream works with finite sequences of variable indices in
which the same index may repeat.  To keep subsequences of repeated indices
unambiguous, each occurrence carries a distinct integer label; collapsing
(sort by label, drop labels) recovers the plain index sequence.  This module
provides the sequence type plus the four primitive operations the rest of
the package is built on: merging, cancelling one occurrence, enumerating
labeled subsequences, and enumerating set partitions of the label set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Iterator

from .errors import GuardError

Index = Hashable

#: enumeration guards: subsets are 2**n, partitions are Bell(n)
SUBSET_GUARD = 20
PARTITION_GUARD = 12


def _sort_token(index: Index) -> tuple[str, str]:
    # total order over heterogeneous index types; only determinism matters
    return (type(index).__name__, repr(index))


def canonical_key(indices: Iterable[Index]) -> tuple[Index, ...]:
    """Order-free canonical form of an index collection (a sorted multiset).

    Used as the memoization/table key for moments and cumulants, which are
    invariant under permutation of their argument sequence.
    """
    return tuple(sorted(indices, key=_sort_token))


@dataclass(frozen=True)
class LabeledSeq:
    """A finite sequence of variable indices with distinct positional labels.

    ``elements`` is a tuple of ``(label, index)`` pairs held sorted by label.
    Labels are positive integers and need not be contiguous: subsequences
    keep the labels of their parent, so a labeled subsequence of a labeled
    subsequence still refers to the original positions.
    """

    elements: tuple[tuple[int, Index], ...]

    def __post_init__(self) -> None:
        elems = tuple(sorted(self.elements, key=lambda e: e[0]))
        labels = [label for label, _ in elems]
        if any(not isinstance(label, int) or label < 1 for label in labels):
            raise ValueError(f"labels must be positive integers, got {labels}")
        if len(set(labels)) != len(labels):
            raise ValueError(f"labels must be distinct, got {labels}")
        object.__setattr__(self, "elements", elems)

    @classmethod
    def from_indices(cls, indices: Iterable[Index]) -> "LabeledSeq":
        """Label a plain index sequence 1..n in order."""
        return cls(tuple((pos, idx) for pos, idx in enumerate(indices, start=1)))

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(label for label, _ in self.elements)

    def indices(self) -> tuple[Index, ...]:
        """Collapse to the plain index sequence (sorted by label)."""
        return tuple(idx for _, idx in self.elements)

    def key(self) -> tuple[Index, ...]:
        """Canonical multiset key of the collapsed sequence."""
        return canonical_key(self.indices())

    def index_at(self, label: int) -> Index:
        for lab, idx in self.elements:
            if lab == label:
                return idx
        raise KeyError(f"label {label} not in sequence")

    def restrict(self, labels: Iterable[int]) -> "LabeledSeq":
        """The labeled subsequence with the given labels (which must exist)."""
        keep = set(labels)
        missing = keep - set(self.labels)
        if missing:
            raise KeyError(f"labels {sorted(missing)} not in sequence")
        return LabeledSeq(tuple(e for e in self.elements if e[0] in keep))

    def without(self, labels: Iterable[int]) -> "LabeledSeq":
        """The labeled subsequence with the given labels removed."""
        drop = set(labels)
        return LabeledSeq(tuple(e for e in self.elements if e[0] not in drop))

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self) -> Iterator[tuple[int, Index]]:
        return iter(self.elements)

    def __bool__(self) -> bool:
        return bool(self.elements)


EMPTY = LabeledSeq(())


def merge(a: LabeledSeq, b: LabeledSeq) -> LabeledSeq:
    """Concatenate two sequences under fresh labels 1..len(a)+len(b).

    The first ``len(a)`` labels collapse to ``a``'s index sequence and the
    rest to ``b``'s, so cross-sequence label collisions cannot happen.
    """
    return LabeledSeq.from_indices(a.indices() + b.indices())


def cancel(a: LabeledSeq, label: int) -> LabeledSeq:
    """Remove the occurrence with the given label; no-op if absent."""
    return LabeledSeq(tuple(e for e in a.elements if e[0] != label))


def subsets(
    a: LabeledSeq, *, nonempty: bool = False, proper: bool = False
) -> Iterator[LabeledSeq]:
    """All labeled subsequences of ``a``, by bitmask over label rank.

    Bit ``i`` of the mask selects the ``i``-th smallest label; masks run
    0 .. 2**n - 1, so the order is deterministic.  Labels are preserved.
    """
    n = len(a)
    if n > SUBSET_GUARD:
        raise GuardError(f"subset enumeration guard: {n} > {SUBSET_GUARD}")
    elems = a.elements
    last = 1 << n
    for mask in range(last):
        if nonempty and mask == 0:
            continue
        if proper and mask == last - 1:
            continue
        yield LabeledSeq(tuple(elems[i] for i in range(n) if mask >> i & 1))


@dataclass(frozen=True)
class Partition:
    """A set partition of a label set into disjoint nonempty blocks.

    Blocks are ordered by smallest member, which coincides with the order
    of first appearance in the restricted-growth-string enumeration.
    """

    blocks: tuple[frozenset[int], ...]

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for block in self.blocks:
            if not block:
                raise ValueError("empty block in partition")
            if seen & block:
                raise ValueError("overlapping blocks in partition")
            seen |= block
        ordered = tuple(sorted(self.blocks, key=min))
        object.__setattr__(self, "blocks", ordered)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[frozenset[int]]:
        return iter(self.blocks)


def partitions_of(labels: Iterable[int]) -> Iterator[Partition]:
    """Set partitions of a label collection, in restricted-growth-string order.

    The RGS for sorted labels (l_1, ..., l_n) assigns l_1 block 0 and each
    subsequent label a block id at most one beyond the current maximum;
    strings are emitted lexicographically.  The empty collection yields
    exactly the empty partition.
    """
    labs = sorted(set(labels))
    n = len(labs)
    if n > PARTITION_GUARD:
        raise GuardError(f"partition enumeration guard: {n} > {PARTITION_GUARD}")
    if n == 0:
        yield Partition(())
        return

    rgs = [0] * n

    def walk(pos: int, maxval: int) -> Iterator[Partition]:
        if pos == n:
            nblocks = maxval + 1
            members: list[list[int]] = [[] for _ in range(nblocks)]
            for i, b in enumerate(rgs):
                members[b].append(labs[i])
            yield Partition(tuple(frozenset(m) for m in members))
            return
        for b in range(maxval + 2):
            rgs[pos] = b
            yield from walk(pos + 1, max(maxval, b))

    yield from walk(1, 0)


def partitions(a: LabeledSeq) -> Iterator[Partition]:
    """Set partitions of ``a``'s label set (see :func:`partitions_of`)."""
    return partitions_of(a.labels)


def bell_number(n: int) -> int:
    """Number of set partitions of an n-set, via the Bell triangle."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for value in row:
            nxt.append(nxt[-1] + value)
        row = nxt
    return row[0]
