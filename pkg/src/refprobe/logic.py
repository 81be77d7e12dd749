"""Logical forms over attribute atoms: AST, s-expression syntax, evaluation.

Grammar::

    form := atom | "(not " form ")" | "(and " form " " form ")" | "(or " form " " form ")"
    atom := "(" attr-name " " value-name ")"
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np

from .errors import ParseError, SchemaError

if TYPE_CHECKING:
    from .scene import AttributeSchema, World

OPERATORS = ("not", "and", "or")


@dataclass(frozen=True)
class Atom:
    attribute: str
    value: str

    def __str__(self):
        return print_form(self)


@dataclass(frozen=True)
class Not:
    child: "LogicalForm"

    def __str__(self):
        return print_form(self)


@dataclass(frozen=True)
class And:
    left: "LogicalForm"
    right: "LogicalForm"

    def __str__(self):
        return print_form(self)


@dataclass(frozen=True)
class Or:
    left: "LogicalForm"
    right: "LogicalForm"

    def __str__(self):
        return print_form(self)


LogicalForm = Union[Atom, Not, And, Or]


def size(e: LogicalForm) -> int:
    if isinstance(e, Atom):
        return 1
    if isinstance(e, Not):
        return 1 + size(e.child)
    return 1 + size(e.left) + size(e.right)


def atoms(e: LogicalForm) -> list[Atom]:
    if isinstance(e, Atom):
        return [e]
    if isinstance(e, Not):
        return atoms(e.child)
    return atoms(e.left) + atoms(e.right)


# -- syntax -----------------------------------------------------------------

def print_form(e: LogicalForm) -> str:
    if isinstance(e, Atom):
        return f"({e.attribute} {e.value})"
    if isinstance(e, Not):
        return f"(not {print_form(e.child)})"
    if isinstance(e, And):
        return f"(and {print_form(e.left)} {print_form(e.right)})"
    if isinstance(e, Or):
        return f"(or {print_form(e.left)} {print_form(e.right)})"
    raise TypeError(f"not a logical form: {e!r}")


_TOKEN = re.compile(rb"\s*(?:(\()|(\))|([^\s()]+))")


def _tokenize(data: bytes) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(data):
        m = _TOKEN.match(data, pos)
        if m is None or m.end() == pos:
            break
        start = m.start(m.lastindex)
        tokens.append((m.group(m.lastindex).decode("utf-8"), start))
        pos = m.end()
    return tokens


def parse(text: str, schema: "AttributeSchema | None" = None) -> LogicalForm:
    """Parse the s-expression syntax. With a schema, atoms are validated."""
    data = text.encode("utf-8")
    tokens = _tokenize(data)
    pos = 0

    def peek_offset():
        return tokens[pos][1] if pos < len(tokens) else len(data)

    def take(expected=None):
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of input (unbalanced parentheses?)", len(data))
        tok, off = tokens[pos]
        if expected is not None and tok != expected:
            raise ParseError(f"expected {expected!r}, found {tok!r}", off)
        pos += 1
        return tok, off

    def form():
        take("(")
        head, off = take()
        if head in ("(", ")"):
            raise ParseError(f"expected operator or attribute, found {head!r}", off)
        if head == "not":
            node = Not(form())
        elif head in ("and", "or"):
            left = form()
            right = form()
            node = And(left, right) if head == "and" else Or(left, right)
        else:
            if schema is not None and head not in schema.names:
                raise ParseError(f"unknown operator or attribute {head!r}", off)
            value, voff = take()
            if value in ("(", ")"):
                raise ParseError(f"expected attribute value, found {value!r}", voff)
            if schema is not None:
                try:
                    schema.value_index(head, value)
                except SchemaError:
                    raise ParseError(f"unknown value {value!r} for attribute {head!r}", voff) from None
            node = Atom(head, value)
        take(")")
        return node

    result = form()
    if pos != len(tokens):
        raise ParseError(f"trailing token {tokens[pos][0]!r}", peek_offset())
    return result


# -- semantics --------------------------------------------------------------

def _eval_codes(e: LogicalForm, codes: np.ndarray, schema: "AttributeSchema") -> np.ndarray:
    if isinstance(e, Atom):
        a, v = schema.value_index(e.attribute, e.value)
        return codes[:, a] == v
    if isinstance(e, Not):
        return ~_eval_codes(e.child, codes, schema)
    if isinstance(e, And):
        return _eval_codes(e.left, codes, schema) & _eval_codes(e.right, codes, schema)
    if isinstance(e, Or):
        return _eval_codes(e.left, codes, schema) | _eval_codes(e.right, codes, schema)
    raise TypeError(f"not a logical form: {e!r}")


def evaluate(e: LogicalForm, w: "World") -> np.ndarray:
    """Denotation of ``e`` on ``w`` as a boolean mask over its objects."""
    return _eval_codes(e, w.codes, w.schema)


def predicate(e: LogicalForm, schema: "AttributeSchema") -> np.ndarray:
    """Truth value of ``e`` at every point of the object universe."""
    return _eval_codes(e, schema.universe_codes, schema)


def equivalent(e1: LogicalForm, e2: LogicalForm, schema: "AttributeSchema") -> bool:
    return bool(np.array_equal(predicate(e1, schema), predicate(e2, schema)))


def most_frequent_form(forms: Sequence[LogicalForm], schema: "AttributeSchema") -> LogicalForm:
    """Representative of the largest equivalence class among ``forms``.

    Classes are represented by their lexicographically least canonical text,
    which also breaks ties between equally frequent classes.
    """
    if not forms:
        raise ValueError("most_frequent_form needs at least one form")
    classes: dict[bytes, list[str]] = defaultdict(list)
    by_text = {}
    for e in forms:
        text = print_form(e)
        by_text[text] = e
        classes[np.packbits(predicate(e, schema)).tobytes()].append(text)
    best = min(classes.values(), key=lambda texts: (-len(texts), min(texts)))
    return by_text[min(best)]


# -- sampling and rewriting ---------------------------------------------------

@dataclass(frozen=True)
class FormSampler:
    """Recursive form sampler; node sizes never exceed ``max_size``."""

    max_size: int = 4
    negation_prob: float = 0.3
    binary_prob: float = 0.4

    def sample(self, rng, schema: "AttributeSchema") -> LogicalForm:
        return sample_form(rng, schema, self.max_size, self.negation_prob, self.binary_prob)


def _random_atom(rng: np.random.Generator, schema: "AttributeSchema") -> Atom:
    a = int(rng.integers(len(schema.attributes)))
    name, values = schema.attributes[a]
    return Atom(name, values[int(rng.integers(len(values)))])


def sample_form(rng_seed, schema: "AttributeSchema", max_size: int = 4, negation_prob: float = 0.3,
                binary_prob: float = 0.4) -> LogicalForm:
    """Sample a form of at most ``max_size`` nodes.

    At each node a negation is drawn with ``negation_prob`` and a binary
    connective (and/or, evenly) with ``binary_prob``, whenever the remaining
    budget allows; otherwise an atom. Negations are not stacked directly.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    if not (0 <= negation_prob <= 1 and 0 <= binary_prob <= 1):
        raise ValueError("probabilities must lie in [0, 1]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    def draw(budget: int, under_not: bool) -> LogicalForm:
        u = rng.random()
        if budget >= 2 and not under_not and u < negation_prob:
            return Not(draw(budget - 1, True))
        if budget >= 3 and negation_prob <= u < negation_prob + binary_prob:
            left_budget = int(rng.integers(1, budget - 1))
            cls = And if rng.random() < 0.5 else Or
            return cls(draw(left_budget, False), draw(budget - 1 - left_budget, False))
        return _random_atom(rng, schema)

    return draw(max_size, False)


def paraphrase(e: LogicalForm, rng) -> LogicalForm:
    """A random rewrite of ``e`` that keeps its meaning (commutation, De Morgan)."""
    if isinstance(e, Atom):
        return e
    if isinstance(e, Not):
        child = e.child
        if isinstance(child, (And, Or)) and rng.random() < 0.5:
            dual = Or if isinstance(child, And) else And
            return dual(paraphrase(Not(child.left), rng), paraphrase(Not(child.right), rng))
        return Not(paraphrase(child, rng))
    left, right = paraphrase(e.left, rng), paraphrase(e.right, rng)
    if rng.random() < 0.5:
        left, right = right, left
    return type(e)(left, right)


def perturb(e: LogicalForm, rng, schema: "AttributeSchema") -> LogicalForm:
    """Replace the value of one randomly chosen atom with a different value."""
    target = int(rng.integers(len(atoms(e))))
    counter = iter(range(size(e) + 1))

    def walk(node):
        if isinstance(node, Atom):
            if next(counter) != target:
                return node
            values = [v for v in dict(schema.attributes)[node.attribute] if v != node.value]
            return Atom(node.attribute, values[int(rng.integers(len(values)))])
        if isinstance(node, Not):
            return Not(walk(node.child))
        return type(node)(walk(node.left), walk(node.right))

    return walk(e)
