"""Analyses built on meaning tables.

* theories of decoder behaviour (random / literal / human) and their agreement
  with the decoder's own tables;
* alignment of annotated forms with encoder messages whose tables match exactly;
* least-squares linear operators for negation and for the binary connectives,
  and their evaluation on held-out aligned messages;
* principal-component projections for plotting message clusters.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import logic
from .errors import DimensionError, SingularityError
from .meaning import (
    MeaningTable,
    WorldSample,
    batch_agreement,
    decisions,
    table_of_form,
)
from .net import ModelParams, encode_batch
from .scene import AnnotatedScene, AttributeSchema, Scene
from .tensorfile import read_tensors, write_tensors

THEORY_KINDS = ("random", "literal", "human")
OPERATOR_ROLES = {"not": "negation", "and": "conjunction", "or": "disjunction"}
_CONNECTIVES = {"and": logic.And, "or": logic.Or}


@dataclass(frozen=True)
class Theory:
    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in THEORY_KINDS:
            raise ValueError(f"unknown theory {self.kind!r}")


def _random_flat(seed, n: int) -> np.ndarray:
    return np.random.default_rng(seed).random(n) < 0.5


def _literal_flat(scenes: Sequence[Scene], sample: WorldSample) -> np.ndarray:
    schema = sample.schema
    positives = np.concatenate([schema.flat_index(s.world.codes[s.target]) for s in scenes])
    return np.isin(sample.universe_index, positives)


def theory_table(theory: Theory, scene: Scene, annotations: Sequence, sample: WorldSample):
    """The table a theory predicts for the message sent about ``scene``."""
    if theory.kind == "random":
        return MeaningTable(_random_flat(theory.seed, len(sample.codes)), sample.lengths)
    if theory.kind == "literal":
        return MeaningTable(_literal_flat([scene], sample), sample.lengths)
    if not annotations:
        raise ValueError("the human theory needs at least one annotation")
    return table_of_form(logic.most_frequent_form(list(annotations), sample.schema), sample)


# -- reports -------------------------------------------------------------------

@dataclass
class ReportRow:
    name: str
    objects: float
    worlds: float
    tables: float
    count: int


@dataclass
class AgreementReport:
    title: str
    rows: list[ReportRow]
    meta: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [f"# report: {self.title}"]
        lines += [f"# {key}: {self.meta[key]}" for key in sorted(self.meta)]
        lines += [f"# flag: {flag}" for flag in self.flags]
        lines.append("row\tobjects\tworlds\ttables\tcount")
        lines += [f"{r.name}\t{r.objects:.6f}\t{r.worlds:.6f}\t{r.tables:.6f}\t{r.count}" for r in self.rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AgreementReport":
        title, meta, flags, rows = "", {}, [], []
        for line in text.splitlines():
            if line.startswith("# report: "):
                title = line[len("# report: "):]
            elif line.startswith("# flag: "):
                flags.append(line[len("# flag: "):])
            elif line.startswith("# "):
                key, _, value = line[2:].partition(": ")
                meta[key] = value
            elif line and not line.startswith("row\t"):
                name, o, w, t, c = line.split("\t")
                rows.append(ReportRow(name, float(o), float(w), float(t), int(c)))
        return cls(title, rows, meta, flags)


def _row(name, pred, ref, lengths) -> ReportRow:
    o, w, t = batch_agreement(pred, ref, lengths)
    return ReportRow(name, float(o.mean()), float(w.mean()), float(t.mean()), len(pred))


def _messages(params: ModelParams, scenes: Sequence[Scene], chunk: int = 500) -> np.ndarray:
    return np.concatenate([encode_batch(params, scenes[i:i + chunk]) for i in range(0, len(scenes), chunk)])


def evaluate_theories(params: ModelParams, dataset: Sequence[AnnotatedScene], sample: WorldSample,
                      theory_seed: int = 0) -> AgreementReport:
    """Compare every theory's table with the decoder's table for each scene's message."""
    if not dataset:
        raise ValueError("evaluate_theories needs a non-empty dataset")
    scenes = [item.scene for item in dataset]
    model = decisions(params, _messages(params, scenes), sample)
    n = len(sample.codes)
    random_ref = np.stack([_random_flat([theory_seed, i], n) for i in range(len(dataset))])
    literal_ref = np.stack([_literal_flat([s], sample) for s in scenes])
    human_ref = np.stack([
        theory_table(Theory("human"), item.scene, item.forms, sample).flat for item in dataset
    ])
    report = AgreementReport(
        "theories",
        [_row(name, model, ref, sample.lengths)
         for name, ref in (("random", random_ref), ("literal", literal_ref), ("human", human_ref))],
        meta={"k": len(sample), "sample_seed": sample.seed, "sample_source": sample.source,
              "theory_seed": theory_seed},
    )
    if report.row("human").objects < report.row("literal").objects:
        report.flags.append("human theory agrees less than the literal theory at object level")
    return report


# -- alignment ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AlignedPair:
    """A form and a message whose tables coincide on the active sample."""

    form: logic.LogicalForm
    message: np.ndarray
    scene: Scene
    scene_index: int


def _class_key(truth: np.ndarray) -> bytes:
    return np.packbits(truth).tobytes()


def collect_alignments(params: ModelParams, dataset: Sequence[AnnotatedScene],
                       sample: WorldSample) -> list[AlignedPair]:
    """Annotations whose table equals the table of their scene's message.

    Annotations of one scene that are equivalent to each other are tried once.
    """
    if not dataset:
        return []
    schema = sample.schema
    messages = _messages(params, [item.scene for item in dataset])
    model = decisions(params, messages, sample)
    out = []
    for i, item in enumerate(dataset):
        seen = set()
        for e in item.forms:
            truth = logic.predicate(e, schema)
            key = _class_key(truth)
            if key in seen:
                continue
            seen.add(key)
            if np.array_equal(truth[sample.universe_index], model[i]):
                out.append(AlignedPair(e, messages[i], item.scene, i))
    return out


def _classes(aligned: Sequence[AlignedPair], schema: AttributeSchema):
    """Group aligned pairs by the exact meaning of their form."""
    members: dict[bytes, list[int]] = defaultdict(list)
    truths: dict[bytes, np.ndarray] = {}
    for i, a in enumerate(aligned):
        truth = logic.predicate(a.form, schema)
        key = _class_key(truth)
        members[key].append(i)
        truths[key] = truth
    return members, truths


def _enumerate_blocks(blocks: list[tuple[list[int], ...]], limit: int | None, seed: int) -> list[tuple[int, ...]]:
    """All index tuples from the Cartesian blocks, or a seeded uniform subset of ``limit`` of them."""
    sizes = [math.prod(len(m) for m in block) for block in blocks]
    total = sum(sizes)
    if limit is None or total <= limit:
        picks = range(total)
    else:
        picks = np.sort(np.random.default_rng(seed).choice(total, size=limit, replace=False))
    bounds = np.cumsum(sizes)
    out = []
    for p in picks:
        b = int(np.searchsorted(bounds, p, side="right"))
        local = int(p - (bounds[b - 1] if b else 0))
        block = blocks[b]
        idx = np.unravel_index(local, tuple(len(m) for m in block))
        out.append(tuple(m[int(j)] for m, j in zip(block, idx)))
    return out


def negation_index_pairs(aligned: Sequence[AlignedPair], schema: AttributeSchema,
                         limit: int | None = None, seed: int = 0) -> list[tuple[int, int]]:
    """Index pairs ``(i, j)`` with ``aligned[j].form`` equivalent to ``not aligned[i].form``."""
    members, _ = _classes(aligned, schema)
    universe = schema.universe_size
    blocks = []
    for key in members:
        truth = np.unpackbits(np.frombuffer(key, dtype=np.uint8))[:universe].astype(bool)
        neg = _class_key(~truth)
        if neg in members:
            blocks.append((members[key], members[neg]))
    return _enumerate_blocks(blocks, limit, seed)


def collect_negation_pairs(aligned: Sequence[AlignedPair], schema: AttributeSchema,
                           limit: int | None = None, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Message pairs ``(f, f')`` certified as negations of each other by their forms."""
    return [(aligned[i].message, aligned[j].message) for i, j in negation_index_pairs(aligned, schema, limit, seed)]


def binary_index_triples(aligned: Sequence[AlignedPair], schema: AttributeSchema, op: str,
                         limit: int | None = None, seed: int = 0) -> list[tuple[int, int, int]]:
    """Index triples ``(i, j, k)`` with ``aligned[k].form`` equivalent to ``op(form_i, form_j)``.

    ``i`` and ``j`` come from different meaning classes; both orders are listed.
    """
    if op not in _CONNECTIVES:
        raise ValueError(f"op must be 'and' or 'or', got {op!r}")
    members, truths = _classes(aligned, schema)
    keys = list(members)
    if not keys:
        return []
    P = np.stack([truths[k] for k in keys])
    combined = P[:, None, :] & P[None, :, :] if op == "and" else P[:, None, :] | P[None, :, :]
    packed = np.packbits(combined, axis=-1)
    blocks = []
    for a in range(len(keys)):
        for b in range(len(keys)):
            if a == b:
                continue
            target = packed[a, b].tobytes()
            if target in members:
                blocks.append((members[keys[a]], members[keys[b]], members[target]))
    return _enumerate_blocks(blocks, limit, seed)


def collect_binary_triples(aligned: Sequence[AlignedPair], schema: AttributeSchema, op: str,
                           limit: int | None = None, seed: int = 0):
    return [(aligned[i].message, aligned[j].message, aligned[k].message)
            for i, j, k in binary_index_triples(aligned, schema, op, limit, seed)]


# -- operators -----------------------------------------------------------------

@dataclass
class LinearOperator:
    matrix: np.ndarray
    ridge: float
    role: str
    n_fit: int = 0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise DimensionError(f"operator must be square, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("operator has non-finite entries")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, *messages: np.ndarray) -> np.ndarray:
        """``N f`` for one argument, ``M f + M f'`` for two; messages may be stacked row-wise."""
        return sum(np.asarray(f) @ self.matrix.T for f in messages)

    def save(self, path) -> None:
        write_tensors(path, "operator", {"ridge": self.ridge, "role": self.role, "n_fit": self.n_fit},
                      {"matrix": self.matrix})

    @classmethod
    def load(cls, path) -> "LinearOperator":
        meta, tensors = read_tensors(path, "operator")
        return cls(tensors["matrix"], meta["ridge"], meta["role"], meta["n_fit"])


def _as_rows(vectors) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    return arr.reshape(len(arr), -1)


def _least_squares(inputs: np.ndarray, outputs: np.ndarray, ridge: float) -> np.ndarray:
    """``argmin_A sum ||A x_i - y_i||^2 + ridge ||A||_F^2`` via the normal equations."""
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    d = inputs.shape[1]
    gram = inputs.T @ inputs
    if ridge == 0 and np.linalg.matrix_rank(gram) < d:
        raise SingularityError(f"inputs span {np.linalg.matrix_rank(gram)} of {d} dimensions; use ridge > 0")
    gram[np.diag_indices(d)] += ridge
    try:
        solution = np.linalg.solve(gram, inputs.T @ outputs)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(str(exc)) from exc
    return solution.T


def fit_unary_operator(pairs, ridge: float = 1e-6, role: str = "negation") -> LinearOperator:
    """Least-squares map ``N`` with ``N f ~ f'`` over the given ``(f, f')`` pairs."""
    if len(pairs) == 0:
        raise ValueError("no pairs to fit")
    F = _as_rows([p[0] for p in pairs])
    G = _as_rows([p[1] for p in pairs])
    return LinearOperator(_least_squares(F, G, ridge), ridge, role, len(pairs))


def fit_binary_operator(triples, ridge: float = 1e-6, role: str = "disjunction") -> LinearOperator:
    """Least-squares map ``M`` with ``M f + M f' ~ f''``; reduces to a unary fit on ``f + f'``."""
    if len(triples) == 0:
        raise ValueError("no triples to fit")
    summed = [(np.asarray(a) + np.asarray(b), c) for a, b, c in triples]
    return fit_unary_operator(summed, ridge, role)


def unary_test_items(aligned: Sequence[AlignedPair]) -> list[tuple[AlignedPair]]:
    return [(a,) for a in aligned]


def binary_test_items(aligned: Sequence[AlignedPair], schema: AttributeSchema, op: str,
                      limit: int | None = None, seed: int = 0) -> list[tuple[AlignedPair, AlignedPair]]:
    """Argument pairs of every certified triple among ``aligned``, one item per triple."""
    return [(aligned[i], aligned[j]) for i, j, _ in binary_index_triples(aligned, schema, op, limit, seed)]


def evaluate_operator(params: ModelParams, op: LinearOperator, test_items: Sequence[tuple],
                      sample: WorldSample, theory_seed: int = 0) -> AgreementReport:
    """Decoder tables of transformed messages against the logically predicted tables.

    Items are 1-tuples ``(aligned,)`` for negation and 2-tuples ``(a, b)`` for the
    binary connectives. Random and literal baselines are scored against the same
    decoder tables; the literal baseline uses the target objects of the source
    scene(s) of each item.
    """
    if not test_items:
        raise ValueError("no test items")
    arity = len(test_items[0])
    if any(len(item) != arity for item in test_items):
        raise ValueError("test items mix arities")
    messages = [np.stack([item[i].message for item in test_items]) for i in range(arity)]
    model = decisions(params, op.apply(*messages), sample)
    if arity == 1:
        forms = [logic.Not(item[0].form) for item in test_items]
    else:
        cls = logic.And if op.role == "conjunction" else logic.Or
        forms = [cls(item[0].form, item[1].form) for item in test_items]
    n = len(sample.codes)
    logical = np.stack([table_of_form(e, sample).flat for e in forms])
    literal = np.stack([_literal_flat([a.scene for a in item], sample) for item in test_items])
    random_ref = np.stack([_random_flat([theory_seed, i], n) for i in range(len(test_items))])
    return AgreementReport(
        f"operator {op.role}",
        [_row("random", model, random_ref, sample.lengths),
         _row("literal", model, literal, sample.lengths),
         _row(op.role, model, logical, sample.lengths)],
        meta={"k": len(sample), "sample_seed": sample.seed, "sample_source": sample.source,
              "theory_seed": theory_seed, "ridge": op.ridge, "fit_items": op.n_fit,
              "literal_reading": "literal table of the source scene(s) vs decoder table of the transformed message"},
    )


# -- PCA -------------------------------------------------------------------------

def pca_project(vectors, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project mean-centred vectors onto their top-``k`` principal directions.

    Each direction is signed so that its largest-magnitude coordinate is
    positive. Returns ``(coordinates (n, k), explained variance fractions (k,))``.
    """
    X = _as_rows(vectors)
    if len(X) < 2:
        raise ValueError("PCA needs at least two vectors")
    if not 1 <= k <= X.shape[1]:
        raise DimensionError(f"k={k} outside [1, {X.shape[1]}]")
    centred = X - X.mean(axis=0)
    cov = centred.T @ centred / (len(X) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    lead = evecs[np.argmax(np.abs(evecs), axis=0), np.arange(k)]
    evecs = evecs * np.where(lead < 0, -1.0, 1.0)
    total = np.clip(np.linalg.eigvalsh(cov), 0.0, None).sum()
    explained = evals / total if total > 0 else np.zeros(k)
    return centred @ evecs, explained


@dataclass(frozen=True)
class PcaPoint:
    x: float
    y: float
    label: str
    kind: str  # "raw" or "transformed"


def operator_points(op: LinearOperator, aligned: Sequence[AlignedPair], schema: AttributeSchema,
                    connective: str, max_items: int = 200, seed: int = 0) -> list[PcaPoint]:
    """Raw aligned messages and operator outputs, projected onto two principal components.

    For negation, each transformed point ``N f`` is labelled with ``not e``; for
    the binary connectives ``M f + M f'`` is labelled with the combined form.
    Only meanings that take part in at least one certified relation are kept.
    """
    if connective == "not":
        idx = negation_index_pairs(aligned, schema, limit=max_items, seed=seed)
        sources = [(aligned[i],) for i, _ in idx]
        targets = sorted({j for _, j in idx} | {i for i, _ in idx})
    else:
        idx = binary_index_triples(aligned, schema, connective, limit=max_items, seed=seed)
        sources = [(aligned[i], aligned[j]) for i, j, _ in idx]
        targets = sorted({k for _, _, k in idx})
    if not sources:
        return []
    raw = np.stack([aligned[t].message for t in targets])
    moved = op.apply(*[np.stack([s[i].message for s in sources]) for i in range(len(sources[0]))])
    coords, _ = pca_project(np.concatenate([raw, moved]), 2)
    labels = [logic.print_form(aligned[t].form) for t in targets]
    if connective == "not":
        labels += [logic.print_form(logic.Not(s[0].form)) for s in sources]
    else:
        cls = _CONNECTIVES[connective]
        labels += [logic.print_form(cls(s[0].form, s[1].form)) for s in sources]
    kinds = ["raw"] * len(targets) + ["transformed"] * len(sources)
    return [PcaPoint(float(x), float(y), lab, kind) for (x, y), lab, kind in zip(coords, labels, kinds)]


def write_points(points: Sequence[PcaPoint], path) -> None:
    lines = ["x\ty\tlabel\tkind"] + [f"{p.x:.6f}\t{p.y:.6f}\t{p.label}\t{p.kind}" for p in points]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
