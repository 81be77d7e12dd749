#!/usr/bin/env python3
# Train the speaker/listener pair on generated scenes and watch held-out accuracy.
# Usage: python demos/train_listener.py [steps]   (the default configuration uses 10 000)

import sys
import time

import numpy as np

from refprobe import net

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
config = net.ModelConfig(train_steps=steps, seed=1)
heldout = net.SceneSource(seed=99).take(500)

print("untrained accuracy:", round(net.accuracy(net.init_params(config), heldout), 3))
history = []
start = time.perf_counter()
params = net.train(config, net.SceneSource(seed=2), history=history)
print(f"{steps} steps in {time.perf_counter() - start:.0f}s")
print("loss, first vs last 100 steps:", round(np.mean(history[:100]), 4), round(np.mean(history[-100:]), 4))
print("held-out object accuracy:", round(net.accuracy(params, heldout), 4))

# The message for a scene is the encoder's final hidden state.
scene_ = heldout[0]
f = net.encode(params, scene_)
print("message norm:", round(float(np.linalg.norm(f)), 3))
print("target :", scene_.target.astype(int))
print("decoded:", (net.decode_world(params, f, scene_.world) > 0.5).astype(int))
net.save_checkpoint(params, config, "demo.ckpt")
print("saved demo.ckpt")
