import itertools

import numpy as np
import pytest
from hypothesis import strategies as st

from refprobe import logic, net, scene
from refprobe.logic import And, Atom, Not, Or
from refprobe.scene import DEFAULT_SCHEMA, AttributeSchema, World

SMALL_SCHEMA = AttributeSchema((("color", ("green", "tan")), ("shape", ("triangle", "arch", "cube"))))


def holds(e, obj: dict) -> bool:
    """Reference semantics: one object as an attribute->value dict, plain Python booleans."""
    if isinstance(e, Atom):
        return obj[e.attribute] == e.value
    if isinstance(e, Not):
        return not holds(e.child, obj)
    if isinstance(e, And):
        return holds(e.left, obj) and holds(e.right, obj)
    if isinstance(e, Or):
        return holds(e.left, obj) or holds(e.right, obj)
    raise TypeError(e)


def all_atoms(schema):
    return [Atom(name, v) for name, values in schema.attributes for v in values]


def enumerate_forms(schema, max_size):
    """Every form with at most ``max_size`` nodes, grouped by exact size."""
    by_size = {1: all_atoms(schema)}
    for n in range(2, max_size + 1):
        forms = [Not(e) for e in by_size[n - 1]]
        for left_size in range(1, n - 1):
            for left, right in itertools.product(by_size[left_size], by_size[n - 1 - left_size]):
                forms.append(And(left, right))
                forms.append(Or(left, right))
        by_size[n] = forms
    return [e for n in range(1, max_size + 1) for e in by_size[n]]


def forms_strategy(schema=DEFAULT_SCHEMA, max_leaves=6):
    atoms = st.sampled_from(all_atoms(schema))
    return st.recursive(
        atoms,
        lambda children: st.one_of(
            children.map(Not),
            st.tuples(children, children).map(lambda p: And(*p)),
            st.tuples(children, children).map(lambda p: Or(*p)),
        ),
        max_leaves=max_leaves,
    )


def worlds_strategy(schema=DEFAULT_SCHEMA, max_size=20):
    return st.lists(
        st.tuples(*[st.integers(0, n - 1) for n in schema.sizes]), min_size=1, max_size=max_size
    ).map(lambda rows: World(schema, rows))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _match_weights(schema, gap):
    """Rows of ``gap * (sum of matching one-hot features - n_attributes)``: 0 on the
    universe point the row stands for, at most ``-gap`` on every other object."""
    U, F = schema.universe_size, schema.feature_dim
    W = np.zeros((U, F))
    for u, codes in enumerate(schema.universe_codes):
        W[u, codes + schema.offsets] = gap
    return W, np.full(U, -gap * len(schema.sizes))


def form_decoder_params(form, schema, hidden_dim=8):
    """Parameters whose decoder ignores the message and implements ``form`` exactly."""
    U = schema.universe_size
    cfg = net.ModelConfig(feature_dim=schema.feature_dim, hidden_dim=hidden_dim, decoder_hidden=U)
    p = net.init_params(cfg)
    Wm, bm = _match_weights(schema, 1.0)
    p["W_1"] = np.hstack([np.zeros((U, hidden_dim)), Wm])
    p["b_1"] = bm + 1.0  # exactly 1 on the object's own universe point, <= 0 elsewhere
    truth = logic.predicate(form, schema)
    p["W_2"] = np.where(truth, 2.0, 0.0)[None, :]
    p["b_2"] = np.array([-1.0])
    return p


def indexed_decoder_params(schema, gap=100.0):
    """Message dimension = universe size; the decoder's logit on object ``u`` is ``f[u]``.

    Valid while every |f[u]| < gap. Hidden units come in +/- pairs per universe point.
    """
    U = schema.universe_size
    cfg = net.ModelConfig(feature_dim=schema.feature_dim, hidden_dim=U, decoder_hidden=2 * U)
    p = net.init_params(cfg)
    Wm, bm = _match_weights(schema, gap)
    eye = np.eye(U)
    p["W_1"] = np.vstack([np.hstack([eye, Wm]), np.hstack([-eye, Wm])])
    p["b_1"] = np.concatenate([bm, bm])
    p["W_2"] = np.concatenate([np.ones(U), -np.ones(U)])[None, :]
    p["b_2"] = np.zeros(1)
    return p


def signed_message(form, schema):
    """A +/-1 message that the indexed decoder reads as ``form``."""
    return np.where(logic.predicate(form, schema), 1.0, -1.0)


def relu_signs(params, batch):
    """Signs of every decoder ReLU pre-activation over the batch's objects."""
    f = net.encode_batch(params, batch)
    out = []
    for fi, s in zip(f, batch):
        feats = scene.world_features(s.world.codes, s.world.schema)
        pre = np.hstack([np.tile(fi, (len(feats), 1)), feats]) @ params["W_1"].T + params["b_1"]
        out.append(pre > 0)
    return np.concatenate(out)


def finite_difference(params, batch, step=1e-5):
    """Central differences of ``net.loss``, one coordinate at a time.

    The loss has ReLU kinks; a difference whose two probes straddle one measures
    nothing useful, so the step is shrunk until both probes see the same signs.
    """
    out = {}
    for name in net.PARAM_NAMES:
        g = np.zeros_like(params[name])
        for idx in np.ndindex(params[name].shape):
            old = params[name][idx]
            h = step
            while True:
                params[name][idx] = old + h
                up, up_signs = net.loss(params, batch), relu_signs(params, batch)
                params[name][idx] = old - h
                down, down_signs = net.loss(params, batch), relu_signs(params, batch)
                params[name][idx] = old
                if np.array_equal(up_signs, down_signs) or h < 1e-9:
                    break
                h /= 10
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for name in net.PARAM_NAMES:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line (shown in the terminal summary) and assert it."""
    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
