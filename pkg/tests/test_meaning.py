from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from refprobe import logic, meaning, net
from refprobe.errors import DimensionError
from refprobe.logic import And, Atom, Not, Or
from refprobe.meaning import MeaningTable, agreement
from refprobe.scene import DEFAULT_SCHEMA

from conftest import forms_strategy

S = DEFAULT_SCHEMA
SAMPLE = meaning.make_sample(21, S, 30)
GREEN = Atom("color", "green")


def test_make_sample_examples():
    assert len(SAMPLE) == 30
    again = meaning.make_sample(21, S, 30)
    assert all(a == b for a, b in zip(SAMPLE.worlds, again.worlds))
    one = meaning.make_sample(4, S, 1, 2, 2)
    assert len(one) == 1 and len(one.worlds[0]) == 2
    with pytest.raises(ValueError):
        meaning.make_sample(4, S, 0)


def test_sample_from_dataset():
    from refprobe import scene

    data = [scene.generate_scene(i, S)[0] for i in range(10)]
    s = meaning.sample_from_dataset(data, 4, 0)
    assert len(s) == 4 and s.source == "dataset"
    assert all(any(w == d.world for d in data) for w in s.worlds)


def test_table_of_form_rows_are_denotations():
    e = And(GREEN, Not(Atom("shape", "arch")))
    table = meaning.table_of_form(e, SAMPLE)
    for row, w in zip(table.rows, SAMPLE.worlds):
        assert np.array_equal(row, logic.evaluate(e, w))


def test_tautology_and_contradiction_tables():
    assert meaning.table_of_form(Or(GREEN, Not(GREEN)), SAMPLE).flat.all()
    assert not meaning.table_of_form(And(GREEN, Not(GREEN)), SAMPLE).flat.any()


@given(forms_strategy())
def test_equivalent_forms_give_identical_tables(e):
    p = logic.paraphrase(e, np.random.default_rng(1))
    assert meaning.table_of_form(e, SAMPLE) == meaning.table_of_form(p, SAMPLE)
    assert meaning.table_of_form(Not(e), SAMPLE) == ~meaning.table_of_form(e, SAMPLE)


def test_table_of_message_zero_decoder_is_all_false():
    zero = net.zero_params(net.ModelConfig())
    table = meaning.table_of_message(zero, np.ones(64), SAMPLE)
    assert not table.flat.any()
    assert table.lengths.tolist() == [len(w) for w in SAMPLE.worlds]


def test_table_of_message_matches_decode_world():
    params = net.init_params(net.ModelConfig(seed=2))
    f = np.random.default_rng(3).normal(size=64)
    table = meaning.table_of_message(params, f, SAMPLE)
    for row, w in zip(table.rows, SAMPLE.worlds):
        assert np.array_equal(row, net.decode_world(params, f, w) > 0.5)
    assert table == meaning.table_of_message(params, f, SAMPLE)


def test_agreement_examples():
    a = MeaningTable.from_rows([[1, 0], [0, 1], [1, 1]])
    assert agreement(a, a) == (1.0, 1.0, 1.0)
    assert agreement(a, ~a) == (0.0, 0.0, 0.0)
    b = MeaningTable.from_rows([[1, 0], [0, 0], [1, 1]])
    o, w, t = agreement(a, b)
    assert Fraction(o).limit_denominator(100) == Fraction(5, 6) and o == 5 / 6
    assert w == 2 / 3 and t == 0.0


def test_agreement_shape_mismatch():
    with pytest.raises(DimensionError):
        agreement(MeaningTable.from_rows([[1, 0]]), MeaningTable.from_rows([[1, 0, 1]]))


@st.composite
def table_pairs(draw, ragged=True):
    if ragged:
        lengths = draw(st.lists(st.integers(1, 5), min_size=1, max_size=6))
    else:
        lengths = [draw(st.integers(1, 5))] * draw(st.integers(1, 6))
    n = sum(lengths)
    a = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    b = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    return MeaningTable(a, lengths), MeaningTable(b, lengths)


@given(table_pairs())
def test_agreement_properties(pair):
    a, b = pair
    ab = agreement(a, b)
    assert ab == agreement(b, a)
    assert ab.tables <= ab.worlds
    assert (ab == (1.0, 1.0, 1.0)) == (a == b)


@given(table_pairs(ragged=False))
def test_world_level_bounded_by_object_level_for_equal_rows(pair):
    ab = agreement(*pair)
    assert ab.tables <= ab.worlds <= ab.objects


def test_world_level_can_exceed_object_level_for_ragged_rows():
    a = MeaningTable.from_rows([[1], [1, 1]])
    b = MeaningTable.from_rows([[1], [0, 0]])
    assert agreement(a, b) == (1 / 3, 1 / 2, 0.0)


def test_text_export_roundtrip():
    table = meaning.table_of_form(GREEN, SAMPLE)
    text = table.to_text()
    assert set(text) <= {"0", "1", "\n"}
    assert len(text.splitlines()) == 30
    assert MeaningTable.from_text(text) == table
