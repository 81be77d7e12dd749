#!/usr/bin/env python3
# Logical forms, worlds and scenes: the symbolic half of the referring game.

import numpy as np

from refprobe import logic, scene
from refprobe.logic import And, Atom, Not, Or

schema = scene.DEFAULT_SCHEMA
print("attributes:", dict(schema.attributes))
print("one-hot width:", schema.feature_dim, " distinct objects:", schema.universe_size)

# Forms print as s-expressions and parse back to the same tree.
e = And(Atom("color", "green"), Not(Atom("shape", "arch")))
text = logic.print_form(e)
print(text, logic.parse(text, schema) == e)

# A world is an ordered list of objects; a form denotes a boolean mask over it.
world = scene.World.from_objects(schema, [("green", "cube"), ("green", "arch"), ("tan", "cube")])
print("denotation:", logic.evaluate(e, world))

# Equivalence is decided exactly, by checking every possible object.
de_morgan = Not(Or(Not(Atom("color", "green")), Atom("shape", "arch")))
print("equivalent:", logic.equivalent(e, de_morgan, schema))

# Scenes are generated by sampling a form and keeping its (non-empty) denotation as the target.
rng = np.random.default_rng(0)
for _ in range(3):
    sc, form = scene.generate_scene(rng, schema, 3, 8)
    print(f"{len(sc.world):2d} objects, target {sc.target.astype(int)}  <- {form}")

# Simulated annotators copy, rephrase or slightly misdescribe the generating form.
sc, form = scene.generate_scene(1, schema)
for note in scene.simulate_annotations(rng, form, schema, n=5):
    print("  ", note, logic.equivalent(note, form, schema))
print("most frequent meaning:", logic.most_frequent_form(scene.simulate_annotations(rng, form, schema, n=5), schema))
