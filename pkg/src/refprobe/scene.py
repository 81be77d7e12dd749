"""Attribute schemas, objects, worlds and game scenes.

A world is stored as an integer code matrix of shape ``(n_objects,
n_attributes)`` whose entries index into the schema vocabularies. The
``Object`` view with value names is built on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import logic
from .errors import BoundsError, DatasetError, GenerationError, ParseError, SchemaError

MAX_WORLD_SIZE = 20


def as_rng(seed) -> np.random.Generator:
    """Accept an integer seed or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        attrs = tuple((str(name), tuple(str(v) for v in values)) for name, values in self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if not attrs:
            raise SchemaError("schema needs at least one attribute")
        names = [name for name, _ in attrs]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate attribute names in {names}")
        for name, values in attrs:
            if name in logic.OPERATORS:
                raise SchemaError(f"attribute name {name!r} collides with an operator")
            if len(values) < 2:
                raise SchemaError(f"attribute {name!r} needs at least 2 values")
            if len(set(values)) != len(values):
                raise SchemaError(f"duplicate values in attribute {name!r}")

    @classmethod
    def from_dict(cls, mapping: dict[str, Sequence[str]]) -> "AttributeSchema":
        return cls(tuple((name, tuple(values)) for name, values in mapping.items()))

    def to_dict(self) -> dict[str, list[str]]:
        return {name: list(values) for name, values in self.attributes}

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.attributes)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(values) for _, values in self.attributes)

    @property
    def feature_dim(self) -> int:
        return sum(self.sizes)

    @property
    def universe_size(self) -> int:
        return int(np.prod(self.sizes))

    @cached_property
    def _lookup(self) -> dict[str, tuple[int, dict[str, int]]]:
        return {
            name: (i, {v: j for j, v in enumerate(values)})
            for i, (name, values) in enumerate(self.attributes)
        }

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)

    def attribute_index(self, name: str) -> int:
        try:
            return self._lookup[name][0]
        except KeyError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    def value_index(self, name: str, value: str) -> tuple[int, int]:
        i = self.attribute_index(name)
        try:
            return i, self._lookup[name][1][value]
        except KeyError:
            raise SchemaError(f"unknown value {value!r} for attribute {name!r}") from None

    @cached_property
    def universe_codes(self) -> np.ndarray:
        """Every possible object, row-major (last attribute varies fastest)."""
        grids = np.indices(self.sizes).reshape(len(self.sizes), -1)
        codes = grids.T.astype(np.int64)
        codes.setflags(write=False)
        return codes

    def flat_index(self, codes: np.ndarray) -> np.ndarray:
        """Position of each code row within ``universe_codes``."""
        return np.ravel_multi_index(tuple(np.asarray(codes).T), self.sizes)


DEFAULT_SCHEMA = AttributeSchema(
    (
        ("color", ("green", "tan", "red", "blue")),
        ("shape", ("triangle", "arch", "cube", "sphere", "ring")),
    )
)


@dataclass(frozen=True)
class Object:
    values: tuple[str, ...]

    def as_dict(self, schema: AttributeSchema) -> dict[str, str]:
        return dict(zip(schema.names, self.values))


class World:
    """An ordered list of objects under a schema; the order is the presentation order."""

    __slots__ = ("schema", "codes")

    def __init__(self, schema: AttributeSchema, codes):
        codes = np.array(codes, dtype=np.int64).reshape(-1, len(schema.sizes))
        if not 1 <= len(codes) <= MAX_WORLD_SIZE:
            raise BoundsError(f"world size {len(codes)} outside [1, {MAX_WORLD_SIZE}]")
        if np.any(codes < 0) or np.any(codes >= np.array(schema.sizes)):
            raise SchemaError("object code outside schema vocabulary")
        codes.setflags(write=False)
        self.schema = schema
        self.codes = codes

    @classmethod
    def from_objects(cls, schema: AttributeSchema, objects: Iterable) -> "World":
        rows = []
        for obj in objects:
            if isinstance(obj, dict):
                if set(obj) != set(schema.names):
                    raise SchemaError(f"object attributes {sorted(obj)} != schema {sorted(schema.names)}")
                values = [obj[name] for name in schema.names]
            else:
                values = list(obj.values if isinstance(obj, Object) else obj)
                if len(values) != len(schema.names):
                    raise SchemaError("object needs exactly one value per attribute")
            rows.append([schema.value_index(name, v)[1] for name, v in zip(schema.names, values)])
        return cls(schema, rows)

    @property
    def objects(self) -> list[Object]:
        vocab = [values for _, values in self.schema.attributes]
        return [Object(tuple(vocab[a][c] for a, c in enumerate(row))) for row in self.codes]

    def __len__(self) -> int:
        return len(self.codes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, World):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(self.codes, other.codes)

    __hash__ = None

    def permuted(self, order: Sequence[int]) -> "World":
        return World(self.schema, self.codes[np.asarray(order)])

    def __repr__(self) -> str:
        objs = ", ".join(" ".join(o.values) for o in self.objects)
        return f"World([{objs}])"


@dataclass(frozen=True, eq=False)
class Scene:
    world: World
    target: np.ndarray

    def __post_init__(self):
        target = np.array(self.target, dtype=bool).ravel()
        if len(target) != len(self.world):
            raise BoundsError(f"target mask length {len(target)} != world size {len(self.world)}")
        if not target.any():
            raise BoundsError("target set is empty")
        target.setflags(write=False)
        object.__setattr__(self, "target", target)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return self.world == other.world and np.array_equal(self.target, other.target)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AnnotatedScene:
    scene: Scene
    forms: tuple = ()
    denotations: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "forms", tuple(self.forms))
        dens = tuple(logic.evaluate(e, self.scene.world) for e in self.forms)
        object.__setattr__(self, "denotations", dens)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotatedScene):
            return NotImplemented
        return self.scene == other.scene and self.forms == other.forms

    __hash__ = None


def _check_bounds(size_min: int, size_max: int) -> None:
    if not 1 <= size_min <= size_max <= MAX_WORLD_SIZE:
        raise BoundsError(f"need 1 <= size_min <= size_max <= {MAX_WORLD_SIZE}, got [{size_min}, {size_max}]")


def generate_world(rng_seed, schema: AttributeSchema = DEFAULT_SCHEMA, size_min: int = 1,
                   size_max: int = MAX_WORLD_SIZE) -> World:
    _check_bounds(size_min, size_max)
    rng = as_rng(rng_seed)
    n = int(rng.integers(size_min, size_max + 1))
    codes = rng.integers(0, schema.sizes, size=(n, len(schema.sizes)))
    return World(schema, codes)


def generate_scene(rng_seed, schema: AttributeSchema = DEFAULT_SCHEMA, size_min: int = 1,
                   size_max: int = MAX_WORLD_SIZE, sampler: logic.FormSampler | None = None,
                   retry_budget: int = 100) -> tuple[Scene, logic.LogicalForm]:
    """Draw a world, then sample forms until one picks out a non-empty target.

    ``retry_budget`` counts resamples after the first attempt.
    """
    _check_bounds(size_min, size_max)
    sampler = sampler or logic.FormSampler()
    if sampler.max_size < 1:
        raise ValueError("form sampler max_size must be >= 1")
    rng = as_rng(rng_seed)
    world = generate_world(rng, schema, size_min, size_max)
    for _ in range(retry_budget + 1):
        form = sampler.sample(rng, schema)
        mask = logic.evaluate(form, world)
        if mask.any():
            return Scene(world, mask), form
    raise GenerationError(f"no form with a non-empty denotation after {retry_budget} retries")


def simulate_annotations(rng_seed, form, schema: AttributeSchema, n: int = 3,
                         paraphrase_prob: float = 0.4, noise_prob: float = 0.15) -> tuple:
    """Stand-in for a pool of human annotators describing the same target.

    Each annotator copies ``form``, rewrites it into an equivalent paraphrase,
    or (with ``noise_prob``) misnames one attribute value. The first annotator
    always reproduces ``form`` so the pool stays anchored on it.
    """
    rng = as_rng(rng_seed)
    out = [form]
    for _ in range(n - 1):
        u = rng.random()
        if u < noise_prob:
            out.append(logic.perturb(form, rng, schema))
        elif u < noise_prob + paraphrase_prob:
            out.append(logic.paraphrase(form, rng))
        else:
            out.append(form)
    return tuple(out)


def object_features(obj, schema: AttributeSchema) -> np.ndarray:
    """Concatenated one-hot blocks, one per attribute."""
    if isinstance(obj, Object):
        codes = [schema.value_index(name, v)[1] for name, v in zip(schema.names, obj.values)]
        if len(obj.values) != len(schema.names):
            raise SchemaError("object needs exactly one value per attribute")
    else:
        codes = np.asarray(obj, dtype=np.int64)
        if codes.shape != (len(schema.sizes),) or np.any(codes < 0) or np.any(codes >= np.array(schema.sizes)):
            raise SchemaError(f"object codes {codes} do not fit schema")
    return world_features(np.asarray(codes)[None, :], schema)[0]


def world_features(codes: np.ndarray, schema: AttributeSchema) -> np.ndarray:
    """One-hot features for a stack of object codes, shape ``(..., feature_dim)``."""
    codes = np.asarray(codes, dtype=np.int64)
    out = np.zeros(codes.shape[:-1] + (schema.feature_dim,))
    np.put_along_axis(out, codes + schema.offsets, 1.0, axis=-1)
    return out


# -- dataset files ----------------------------------------------------------

def _record(item: AnnotatedScene) -> dict:
    schema = item.scene.world.schema
    return {
        "world": [obj.as_dict(schema) for obj in item.scene.world.objects],
        "target": [int(i) for i in np.flatnonzero(item.scene.target)],
        "forms": [logic.print_form(e) for e in item.forms],
    }


def serialize_dataset(data: Sequence[AnnotatedScene], path, schema: AttributeSchema | None = None) -> None:
    """Write a JSON-lines dataset; a schema header precedes the records."""
    lines = []
    if data or schema is not None:
        schema = schema or data[0].scene.world.schema
        lines.append(json.dumps({"schema": schema.to_dict()}))
    for item in data:
        lines.append(json.dumps(_record(item)))
    text = "".join(line + "\n" for line in lines)
    Path(path).write_bytes(text.encode("utf-8"))


def ingest_dataset(path, schema: AttributeSchema = DEFAULT_SCHEMA) -> list[AnnotatedScene]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(rec, dict):
                raise DatasetError("record is not a map", lineno)
            if "schema" in rec:
                try:
                    declared = AttributeSchema.from_dict(rec["schema"])
                except (AttributeError, TypeError) as exc:
                    raise DatasetError("malformed schema header", lineno) from exc
                if declared != schema:
                    raise SchemaError(f"file schema {declared.to_dict()} != expected {schema.to_dict()}", lineno)
                continue
            out.append(_parse_record(rec, schema, lineno))
    return out


def _parse_record(rec: dict, schema: AttributeSchema, lineno: int) -> AnnotatedScene:
    if set(rec) != {"world", "target", "forms"}:
        raise DatasetError(f"expected keys world/target/forms, got {sorted(rec)}", lineno)
    world_rec, target_rec, forms_rec = rec["world"], rec["target"], rec["forms"]
    if not isinstance(world_rec, list) or not all(isinstance(o, dict) for o in world_rec):
        raise DatasetError("'world' must be a list of attribute maps", lineno)
    try:
        world = World.from_objects(schema, world_rec)
    except SchemaError as exc:
        raise SchemaError(str(exc), lineno) from exc
    except BoundsError as exc:
        raise DatasetError(str(exc), lineno) from exc
    if (not isinstance(target_rec, list) or not all(isinstance(i, int) for i in target_rec)
            or not all(0 <= i < len(world) for i in target_rec)):
        raise DatasetError("'target' must list valid 0-based object indices", lineno)
    mask = np.zeros(len(world), dtype=bool)
    mask[target_rec] = True
    if not mask.any():
        raise DatasetError("empty target", lineno)
    if not isinstance(forms_rec, list) or not all(isinstance(s, str) for s in forms_rec):
        raise DatasetError("'forms' must be a list of strings", lineno)
    forms = []
    for text in forms_rec:
        try:
            forms.append(logic.parse(text, schema))
        except ParseError as exc:
            raise DatasetError(f"cannot parse form {text!r}: {exc}", lineno) from exc
    return AnnotatedScene(Scene(world, mask), tuple(forms))
