#!/usr/bin/env python3
# Meanings as tables: how forms and messages behave on a fixed sample of other worlds.
# Reads demo.ckpt from train_listener.py if present, otherwise trains a short model.

from pathlib import Path

import numpy as np

from refprobe import logic, meaning, net, probe, scene

schema = scene.DEFAULT_SCHEMA
if Path("demo.ckpt").exists():
    params, _ = net.load_checkpoint("demo.ckpt")
else:
    params = net.train(net.ModelConfig(train_steps=1000, seed=1), net.SceneSource(seed=2))

sample = meaning.make_sample(5, schema, 30)
print("sample:", len(sample), "worlds,", int(sample.lengths.sum()), "objects")

green = logic.parse("(color green)", schema)
table = meaning.table_of_form(green, sample)
print("first rows of the table for", green)
print("\n".join(table.to_text().splitlines()[:4]))

# A message gets a table the same way, through the listener's thresholded decisions.
rng = np.random.default_rng(3)
data = []
for _ in range(300):
    sc, e = scene.generate_scene(rng, schema)
    data.append(scene.AnnotatedScene(sc, scene.simulate_annotations(rng, e, schema)))
f = net.encode(params, data[0].scene)
print("annotations:", [str(e) for e in data[0].forms])
print("agreement with first annotation:",
      meaning.agreement(meaning.table_of_message(params, f, sample), meaning.table_of_form(data[0].forms[0], sample)))

# Three theories of what the messages mean, scored the same way.
print(probe.evaluate_theories(params, data, sample).to_text())

aligned = probe.collect_alignments(params, data, sample)
print(f"{len(aligned)} annotations have exactly the table of their scene's message")
