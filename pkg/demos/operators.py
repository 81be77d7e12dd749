#!/usr/bin/env python3
# Linear operators on messages: fit negation, conjunction and disjunction, then look at them in 2-d.
# Reads demo.ckpt from train_listener.py if present, otherwise trains a short model.

from pathlib import Path

import numpy as np

from refprobe import meaning, net, probe, scene

schema = scene.DEFAULT_SCHEMA
if Path("demo.ckpt").exists():
    params, _ = net.load_checkpoint("demo.ckpt")
else:
    params = net.train(net.ModelConfig(train_steps=1000, seed=1), net.SceneSource(seed=2))


def dataset(seed, n):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        sc, e = scene.generate_scene(rng, schema)
        out.append(scene.AnnotatedScene(sc, scene.simulate_annotations(rng, e, schema)))
    return out


sample = meaning.make_sample(5, schema, 30)
fit_aligned = probe.collect_alignments(params, dataset(10, 2000), sample)
test_aligned = probe.collect_alignments(params, dataset(11, 500), sample)
print("aligned items, fit/test:", len(fit_aligned), len(test_aligned))

pairs = probe.collect_negation_pairs(fit_aligned, schema, limit=20000)
if pairs:
    N = probe.fit_unary_operator(pairs)
    print(f"negation fitted on {len(pairs)} pairs")
    print(probe.evaluate_operator(params, N, probe.unary_test_items(test_aligned), sample).to_text())
    coords = probe.operator_points(N, test_aligned, schema, "not")
    print("first projected points:")
    for p in coords[:6]:
        print(f"  {p.x:+.3f} {p.y:+.3f}  {p.kind:11s} {p.label}")

for op in ("and", "or"):
    triples = probe.collect_binary_triples(fit_aligned, schema, op, limit=20000)
    tests = probe.binary_test_items(test_aligned, schema, op, limit=2000)
    if not triples or not tests:
        print(f"not enough certified {op} triples with this model")
        continue
    M = probe.fit_binary_operator(triples, role=probe.OPERATOR_ROLES[op])
    row = probe.evaluate_operator(params, M, tests, sample).row(M.role)
    print(f"{M.role}: objects {row.objects:.3f}, worlds {row.worlds:.3f}, tables {row.tables:.3f} over {row.count} items")
