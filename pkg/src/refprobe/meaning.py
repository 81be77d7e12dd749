"""Truth-conditional meaning tables over a fixed sample of alternative worlds.

A table stacks the denotation of a form (or the thresholded decoder output
for a message) on every world of the sample. Two tables are only comparable
when built on the same sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from . import logic
from .errors import DimensionError
from .net import ModelParams, decode_features
from .scene import DEFAULT_SCHEMA, MAX_WORLD_SIZE, AttributeSchema, World, as_rng, generate_world, world_features

DEFAULT_SAMPLE_SIZE = 30


@dataclass(frozen=True, eq=False)
class WorldSample:
    worlds: tuple[World, ...]
    seed: int | None = None
    source: str = "generated"

    def __post_init__(self):
        object.__setattr__(self, "worlds", tuple(self.worlds))
        if not self.worlds:
            raise ValueError("a world sample needs at least one world")

    @property
    def schema(self) -> AttributeSchema:
        return self.worlds[0].schema

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([len(w) for w in self.worlds])

    @cached_property
    def codes(self) -> np.ndarray:
        return np.concatenate([w.codes for w in self.worlds])

    @cached_property
    def features(self) -> np.ndarray:
        return world_features(self.codes, self.schema)

    @cached_property
    def universe_index(self) -> np.ndarray:
        return self.schema.flat_index(self.codes)

    def __len__(self) -> int:
        return len(self.worlds)


def make_sample(rng_seed, schema: AttributeSchema = DEFAULT_SCHEMA, k: int = DEFAULT_SAMPLE_SIZE,
                size_min: int = 1, size_max: int = MAX_WORLD_SIZE) -> WorldSample:
    if k < 1:
        raise ValueError("sample size k must be >= 1")
    rng = as_rng(rng_seed)
    worlds = [generate_world(rng, schema, size_min, size_max) for _ in range(k)]
    return WorldSample(tuple(worlds), seed=rng_seed if isinstance(rng_seed, int) else None)


def sample_from_dataset(dataset: Sequence, k: int, rng_seed: int) -> WorldSample:
    """Draw ``k`` distinct worlds from the scenes of an existing dataset."""
    if not 1 <= k <= len(dataset):
        raise ValueError(f"cannot draw {k} worlds from a dataset of {len(dataset)}")
    idx = np.sort(np.random.default_rng(rng_seed).choice(len(dataset), size=k, replace=False))
    worlds = [_world_of(dataset[i]) for i in idx]
    return WorldSample(tuple(worlds), seed=rng_seed, source="dataset")


def _world_of(item) -> World:
    if isinstance(item, World):
        return item
    scene = getattr(item, "scene", item)
    return scene.world


class MeaningTable:
    """Ragged boolean table: one row per sampled world."""

    __slots__ = ("flat", "lengths")

    def __init__(self, flat, lengths):
        self.flat = np.asarray(flat, dtype=bool)
        self.lengths = np.asarray(lengths, dtype=np.int64)
        if self.flat.shape != (int(self.lengths.sum()),):
            raise DimensionError("table entries do not match row lengths")

    @classmethod
    def from_rows(cls, rows: Sequence) -> "MeaningTable":
        rows = [np.asarray(r, dtype=bool) for r in rows]
        return cls(np.concatenate(rows), [len(r) for r in rows])

    @property
    def rows(self) -> list[np.ndarray]:
        return np.split(self.flat, np.cumsum(self.lengths)[:-1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, MeaningTable):
            return NotImplemented
        return np.array_equal(self.lengths, other.lengths) and np.array_equal(self.flat, other.flat)

    __hash__ = None

    def __invert__(self) -> "MeaningTable":
        return MeaningTable(~self.flat, self.lengths)

    def to_text(self) -> str:
        return "".join("".join("1" if x else "0" for x in row) + "\n" for row in self.rows)

    @classmethod
    def from_text(cls, text: str) -> "MeaningTable":
        return cls.from_rows([[c == "1" for c in line] for line in text.splitlines()])

    def __repr__(self) -> str:
        return f"MeaningTable({len(self.lengths)} rows, {len(self.flat)} entries)"


def table_of_form(e: logic.LogicalForm, sample: WorldSample) -> MeaningTable:
    """``rep(e)``: the denotation of ``e`` on every sampled world."""
    truth = logic.predicate(e, sample.schema)
    return MeaningTable(truth[sample.universe_index], sample.lengths)


def decisions(params: ModelParams, messages: np.ndarray, sample: WorldSample) -> np.ndarray:
    """Thresholded decoder decisions ``(m, n_entries)`` for a stack of messages."""
    messages = np.atleast_2d(np.asarray(messages, dtype=np.float64))
    return decode_features(params, messages, sample.features) > 0.5


def table_of_message(params: ModelParams, f: np.ndarray, sample: WorldSample) -> MeaningTable:
    """``rep(f)``: decoder decisions with probability strictly above 0.5."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1:
        raise DimensionError("table_of_message takes a single message vector")
    return MeaningTable(decisions(params, f, sample)[0], sample.lengths)


class Agreement(NamedTuple):
    objects: float
    worlds: float
    tables: float


def agreement(pred: MeaningTable, ref: MeaningTable) -> Agreement:
    """Fraction of matching entries, of fully matching rows, and whether everything matches."""
    if not np.array_equal(pred.lengths, ref.lengths):
        raise DimensionError("tables have different shapes")
    a = batch_agreement(pred.flat[None], ref.flat[None], pred.lengths)
    return Agreement(*(float(x[0]) for x in a))


def batch_agreement(pred: np.ndarray, ref: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, ...]:
    """Per-item agreement levels for stacks of flat tables sharing ``lengths``.

    Returns three arrays (objects, worlds, tables) of length ``m``.
    """
    pred, ref = np.atleast_2d(pred), np.atleast_2d(ref)
    if pred.shape != ref.shape or pred.shape[1] != int(np.sum(lengths)):
        raise DimensionError(f"table stacks of shape {pred.shape} and {ref.shape} do not match")
    match = pred == ref
    objects = match.mean(axis=1)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    mismatches = np.add.reduceat(~match, starts, axis=1)
    worlds = (mismatches == 0).mean(axis=1)
    tables = (mismatches == 0).all(axis=1).astype(np.float64)
    return objects, worlds, tables


def mean_agreement(pred: np.ndarray, ref: np.ndarray, lengths: np.ndarray) -> Agreement:
    if len(pred) == 0:
        raise ValueError("no items to compare")
    return Agreement(*(float(x.mean()) for x in batch_agreement(pred, ref, lengths)))
