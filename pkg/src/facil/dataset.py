"""Demonstration datasets over a factor space.

A dataset is a multiset of demonstrations keyed by composition; only the
per-composition counts matter to every consumer in this package.  Updates are
value-semantic: adding a batch returns a new snapshot and leaves the input
untouched, so iteration histories can hold per-iteration datasets cheaply.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .spaces import Composition, FactorSpace, format_composition, parse_composition


@dataclass(frozen=True)
class DemoBatch:
    """A block of identical demonstrations at one composition."""

    composition: Composition
    count: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "composition", tuple(int(v) for v in self.composition))
        object.__setattr__(self, "count", int(self.count))
        if self.count < 1:
            raise ValueError(f"batch count must be >= 1, got {self.count}")


@dataclass(frozen=True)
class Dataset:
    space: FactorSpace
    counts: Mapping[Composition, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean: dict[Composition, int] = {}
        for c, n in self.counts.items():
            c = self.space.validate(c)
            n = int(n)
            if n < 0:
                raise ValueError(f"negative count {n} at {c}")
            if n > 0:
                clean[c] = n
        object.__setattr__(self, "counts", MappingProxyType(clean))

    @classmethod
    def empty(cls, space: FactorSpace) -> "Dataset":
        return cls(space, {})

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def support(self) -> frozenset[Composition]:
        return frozenset(self.counts)

    def count_at(self, c: Composition) -> int:
        return self.counts.get(self.space.validate(c), 0)

    def count_array(self) -> np.ndarray:
        """Counts as a flat row-major integer array over the space."""
        out = np.zeros(self.space.cardinality, dtype=np.int64)
        for c, n in self.counts.items():
            out[self.space.encode(c)] = n
        return out


def add_demos(dataset: Dataset, batch: DemoBatch) -> Dataset:
    """Return a new dataset with the batch merged in."""
    c = dataset.space.validate(batch.composition)
    counts = dict(dataset.counts)
    counts[c] = counts.get(c, 0) + batch.count
    return Dataset(dataset.space, counts)


def add_many(dataset: Dataset, batches: Iterable[DemoBatch]) -> Dataset:
    for batch in batches:
        dataset = add_demos(dataset, batch)
    return dataset


def support_and_ratios(
    dataset: Dataset,
) -> tuple[frozenset[Composition], dict[Composition, float]]:
    """The support f(D) and each support composition's share of the total.

    Ratios are ordered by ascending linear index and sum to 1 within 1e-12.
    Requesting ratios of an empty dataset is an error; the support of an
    empty dataset is the empty set.
    """
    support = dataset.support
    if not support:
        raise ValueError("empty dataset has no ratios")
    total = dataset.total
    ordered = sorted(support, key=dataset.space.encode)
    ratios = {c: dataset.counts[c] / total for c in ordered}
    return support, ratios


def marginal_counts(dataset: Dataset, dim: int) -> np.ndarray:
    """Demo counts aggregated per level of one dimension."""
    if not 0 <= dim < dataset.space.ndim:
        raise ValueError(f"dimension {dim} out of range for {dataset.space.ndim} dims")
    out = np.zeros(dataset.space.shape[dim], dtype=np.int64)
    for c, n in dataset.counts.items():
        out[c[dim]] += n
    return out


CSV_HEADER = ["composition_indices", "count"]


def dataset_to_csv(dataset: Dataset) -> str:
    """CSV with one row per support composition, ascending linear index."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for c in sorted(dataset.counts, key=dataset.space.encode):
        writer.writerow([format_composition(c), dataset.counts[c]])
    return buf.getvalue()


def dataset_from_csv(space: FactorSpace, text: str) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_HEADER:
        raise ValueError(f"unexpected dataset CSV header {header!r}")
    counts: dict[Composition, int] = {}
    for row in reader:
        if not row:
            continue
        c = parse_composition(row[0])
        counts[c] = counts.get(c, 0) + int(row[1])
    return Dataset(space, counts)


def dataset_to_json(dataset: Dataset) -> str:
    doc = {
        "space": json.loads(dataset.space.to_json()),
        "counts": {
            format_composition(c): dataset.counts[c]
            for c in sorted(dataset.counts, key=dataset.space.encode)
        },
    }
    return json.dumps(doc)


def dataset_from_json(text: str) -> Dataset:
    doc = json.loads(text)
    space = FactorSpace.from_json(json.dumps(doc["space"]))
    counts = {parse_composition(key): int(n) for key, n in doc["counts"].items()}
    return Dataset(space, counts)
