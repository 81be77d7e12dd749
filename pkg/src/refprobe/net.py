"""GRU speaker and per-object MLP listener, with exact reverse-mode gradients.

The encoder reads one object per step, ``x_t = [features(obj_t); target_t]``::

    z_t  = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
    r_t  = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
    h~_t = tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h)
    h_t  = (1 - z_t) * h_{t-1} + z_t * h~_t,        h_0 = 0

and the final state is the message. The decoder scores each object
independently: ``sigmoid(W2 relu(W1 [message; features(obj)] + b1) + b2)``.

Batches of worlds with different sizes are padded; on padded steps the state
is carried through unchanged, so padding never alters a message.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import logic
from .errors import CheckpointError, DimensionError, TrainingError
from .scene import DEFAULT_SCHEMA, MAX_WORLD_SIZE, AttributeSchema, Scene, World, generate_scene, world_features
from .tensorfile import read_tensors, write_tensors

log = logging.getLogger(__name__)

ModelParams = dict  # name -> float64 array, keys as in PARAM_NAMES

PARAM_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h", "W_1", "b_1", "W_2", "b_2")


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = DEFAULT_SCHEMA.feature_dim
    hidden_dim: int = 64
    decoder_hidden: int = 64
    seed: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 100
    train_steps: int = 10_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_scale: float = 0.1

    def __post_init__(self):
        for name in ("feature_dim", "hidden_dim", "decoder_hidden", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.train_steps < 0:
            raise ValueError("train_steps must be >= 0")
        for name in ("learning_rate", "eps", "init_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, F, D = config.hidden_dim, config.feature_dim, config.decoder_hidden
    shapes = {}
    for gate in "zrh":
        shapes[f"W_{gate}"] = (H, F + 1)
        shapes[f"U_{gate}"] = (H, H)
        shapes[f"b_{gate}"] = (H,)
    shapes.update({"W_1": (D, H + F), "b_1": (D,), "W_2": (1, D), "b_2": (1,)})
    return shapes


def init_params(config: ModelConfig) -> ModelParams:
    """Uniform in [-init_scale, init_scale], drawn in PARAM_NAMES order."""
    rng = np.random.default_rng(config.seed)
    s = config.init_scale
    return {name: rng.uniform(-s, s, size=shape) for name, shape in param_shapes(config).items()}


def zero_params(config: ModelConfig) -> ModelParams:
    return {name: np.zeros(shape) for name, shape in param_shapes(config).items()}


def _dims(params: ModelParams) -> tuple[int, int]:
    H, in_dim = params["W_z"].shape
    return H, in_dim - 1


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- packing -----------------------------------------------------------------

def _pack(scenes: Sequence[Scene], feature_dim: int):
    """Time-major padded inputs ``X (T,B,F+1)``, mask ``M (T,B)`` and labels ``Y (T,B)``."""
    if not scenes:
        raise ValueError("empty batch")
    schema = scenes[0].world.schema
    if schema.feature_dim != feature_dim:
        raise DimensionError(f"schema feature dim {schema.feature_dim} != model feature dim {feature_dim}")
    lengths = np.array([len(s.world) for s in scenes])
    T, B = int(lengths.max()), len(scenes)
    codes = np.zeros((T, B, len(schema.sizes)), dtype=np.int64)
    Y = np.zeros((T, B))
    for b, s in enumerate(scenes):
        n = lengths[b]
        codes[:n, b] = s.world.codes
        Y[:n, b] = s.target
    M = (np.arange(T)[:, None] < lengths[None, :]).astype(np.float64)
    X = np.empty((T, B, feature_dim + 1))
    X[..., :feature_dim] = world_features(codes, schema) * M[..., None]
    X[..., feature_dim] = Y
    return X, M, Y


# -- encoder -----------------------------------------------------------------

def _encoder_forward(p: ModelParams, X: np.ndarray, M: np.ndarray, keep: bool):
    T, B, _ = X.shape
    H = p["U_z"].shape[0]
    W = np.concatenate([p["W_z"], p["W_r"], p["W_h"]])
    b = np.concatenate([p["b_z"], p["b_r"], p["b_h"]])
    U_zr = np.concatenate([p["U_z"], p["U_r"]])
    XW = X @ W.T + b
    h = np.zeros((B, H))
    cache = []
    for t in range(T):
        hp = h
        a_zr = XW[t, :, : 2 * H] + hp @ U_zr.T
        z = _sigmoid(a_zr[:, :H])
        r = _sigmoid(a_zr[:, H:])
        rh = r * hp
        hc = np.tanh(XW[t, :, 2 * H:] + rh @ p["U_h"].T)
        m = M[t][:, None]
        h = hp + m * z * (hc - hp)
        if keep:
            cache.append((hp, z, r, rh, hc))
    return h, cache


def _encoder_backward(p: ModelParams, X: np.ndarray, M: np.ndarray, cache, dh: np.ndarray, grads: dict):
    T, B, _ = X.shape
    H = p["U_z"].shape[0]
    dA = np.zeros((T, B, 3 * H))  # pre-activation grads for z, r, h~
    for t in reversed(range(T)):
        hp, z, r, rh, hc = cache[t]
        m = M[t][:, None]
        dnew = m * dh
        dz = dnew * (hc - hp)
        da_h = dnew * z * (1.0 - hc * hc)
        drh = da_h @ p["U_h"]
        da_z = dz * z * (1.0 - z)
        da_r = drh * hp * r * (1.0 - r)
        dA[t, :, :H] = da_z
        dA[t, :, H:2 * H] = da_r
        dA[t, :, 2 * H:] = da_h
        dh = (1.0 - m) * dh + dnew * (1.0 - z) + drh * r + da_z @ p["U_z"] + da_r @ p["U_r"]
    flat = dA.reshape(T * B, 3 * H)
    dW = flat.T @ X.reshape(T * B, -1)
    db = flat.sum(axis=0)
    HP = np.stack([c[0] for c in cache]).reshape(T * B, H)
    RH = np.stack([c[3] for c in cache]).reshape(T * B, H)
    for i, gate in enumerate("zrh"):
        sl = slice(i * H, (i + 1) * H)
        grads[f"W_{gate}"] = dW[sl]
        grads[f"b_{gate}"] = db[sl]
        grads[f"U_{gate}"] = flat[:, sl].T @ (RH if gate == "h" else HP)


def encode_batch(params: ModelParams, scenes: Sequence[Scene]) -> np.ndarray:
    H, F = _dims(params)
    X, M, _ = _pack(scenes, F)
    h, _ = _encoder_forward(params, X, M, keep=False)
    return h


def encode(params: ModelParams, scene: Scene) -> np.ndarray:
    """The message ``f(W)`` for one scene."""
    return encode_batch(params, [scene])[0]


# -- decoder -----------------------------------------------------------------

def _decoder_logits(p: ModelParams, f: np.ndarray, feats: np.ndarray):
    H = p["U_z"].shape[0]
    pre = (f @ p["W_1"][:, :H].T)[..., None, :] + feats @ p["W_1"][:, H:].T + p["b_1"]
    act = np.maximum(pre, 0.0)
    return act @ p["W_2"][0] + p["b_2"][0], pre, act


def decode_features(params: ModelParams, f: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """Probabilities for a stack of object feature rows ``(n, F)`` under message ``f``.

    ``f`` may also be a stack of messages ``(m, H)``, giving an ``(m, n)`` result.
    """
    H, F = _dims(params)
    f = np.asarray(f, dtype=np.float64)
    feats = np.asarray(feats, dtype=np.float64)
    if f.shape[-1] != H or feats.shape[-1] != F:
        raise DimensionError(f"expected message dim {H} and feature dim {F}, got {f.shape[-1]} and {feats.shape[-1]}")
    logits, _, _ = _decoder_logits(params, f, feats)
    return _sigmoid(logits)


def decode(params: ModelParams, f: np.ndarray, obj_feats: np.ndarray) -> float:
    return float(decode_features(params, f, np.asarray(obj_feats)[None, :])[0])


def decode_world(params: ModelParams, f: np.ndarray, w: World) -> np.ndarray:
    return decode_features(params, f, world_features(w.codes, w.schema))


# -- objective -----------------------------------------------------------------

def _forward_backward(p: ModelParams, scenes: Sequence[Scene], need_grad: bool):
    H, F = _dims(p)
    X, M, Y = _pack(scenes, F)
    h, cache = _encoder_forward(p, X, M, keep=need_grad)
    feats = X[..., :F]
    logits, pre, act = _decoder_logits(p, h, feats.transpose(1, 0, 2))  # (B,T)
    logits, pre, act = logits.T, pre.transpose(1, 0, 2), act.transpose(1, 0, 2)
    count = M.sum()
    loss = float(((np.logaddexp(0.0, logits) - Y * logits) * M).sum() / count)
    if not need_grad:
        return loss, None
    grads = {}
    dlogit = (_sigmoid(logits) - Y) * M / count
    grads["W_2"] = (dlogit[..., None] * act).sum(axis=(0, 1))[None, :]
    grads["b_2"] = np.array([dlogit.sum()])
    dpre = dlogit[..., None] * p["W_2"][0] * (pre > 0)
    D = dpre.shape[-1]
    grads["b_1"] = dpre.sum(axis=(0, 1))
    dpre_sum = dpre.sum(axis=0)  # (B, D): the message is shared by every object of a scene
    dW1 = np.empty_like(p["W_1"])
    dW1[:, :H] = dpre_sum.T @ h
    dW1[:, H:] = dpre.reshape(-1, D).T @ feats.reshape(-1, F)
    grads["W_1"] = dW1
    dh = dpre_sum @ p["W_1"][:, :H]
    _encoder_backward(p, X, M, cache, dh, grads)
    return loss, {name: grads[name] for name in PARAM_NAMES}


def loss(params: ModelParams, batch: Sequence[Scene]) -> float:
    """Mean binary cross-entropy over every object in the batch."""
    return _forward_backward(params, batch, need_grad=False)[0]


def loss_and_grad(params: ModelParams, batch: Sequence[Scene]) -> tuple[float, dict]:
    return _forward_backward(params, batch, need_grad=True)


def grad(params: ModelParams, batch: Sequence[Scene]) -> dict:
    return _forward_backward(params, batch, need_grad=True)[1]


def accuracy(params: ModelParams, scenes: Sequence[Scene], chunk: int = 500) -> float:
    """Object-level accuracy of thresholded decoder outputs on the scenes' own worlds."""
    correct = total = 0
    H, F = _dims(params)
    for i in range(0, len(scenes), chunk):
        part = scenes[i:i + chunk]
        X, M, Y = _pack(part, F)
        h, _ = _encoder_forward(params, X, M, keep=False)
        logits, _, _ = _decoder_logits(params, h, X[..., :F].transpose(1, 0, 2))
        pred = logits.T > 0
        correct += ((pred == (Y > 0.5)) * M).sum()
        total += M.sum()
    return float(correct / total)


# -- training ------------------------------------------------------------------

@dataclass(frozen=True)
class SceneSource:
    """Infinite, seeded stream of freshly generated training scenes."""

    schema: AttributeSchema = DEFAULT_SCHEMA
    size_min: int = 1
    size_max: int = MAX_WORLD_SIZE
    sampler: logic.FormSampler = logic.FormSampler()
    seed: int = 0

    def __iter__(self) -> Iterator[Scene]:
        rng = np.random.default_rng(self.seed)
        while True:
            yield generate_scene(rng, self.schema, self.size_min, self.size_max, self.sampler)[0]

    def take(self, n: int) -> list[Scene]:
        it = iter(self)
        return [next(it) for _ in range(n)]


def train(config: ModelConfig, scene_source, history: list | None = None, log_every: int = 0) -> ModelParams:
    """Adam on minibatches drawn from ``scene_source``; returns the final parameters.

    ``history``, when given, receives the loss of every step.
    """
    params = init_params(config)
    if config.train_steps == 0:
        return params
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    stream = iter(scene_source)
    b1, b2 = config.beta1, config.beta2
    for step in range(1, config.train_steps + 1):
        batch = [next(stream) for _ in range(config.batch_size)]
        value, grads = loss_and_grad(params, batch)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss {value}", step)
        if history is not None:
            history.append(value)
        if log_every and step % log_every == 0:
            log.info("step %d loss %.4f", step, value)
        for name in PARAM_NAMES:
            g = grads[name]
            m[name] = b1 * m[name] + (1 - b1) * g
            v[name] = b2 * v[name] + (1 - b2) * g * g
            m_hat = m[name] / (1 - b1 ** step)
            v_hat = v[name] / (1 - b2 ** step)
            params[name] = params[name] - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    return params


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(params: ModelParams, config: ModelConfig, path) -> None:
    write_tensors(path, "checkpoint", {"config": config.to_dict()}, {name: params[name] for name in PARAM_NAMES})


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    meta, tensors = read_tensors(path, "checkpoint")
    config = ModelConfig.from_dict(meta["config"])
    shapes = param_shapes(config)
    for name in PARAM_NAMES:
        if name not in tensors or tensors[name].shape != shapes[name]:
            raise CheckpointError(f"{path}: tensor {name!r} missing or wrong shape")
    return {name: tensors[name] for name in PARAM_NAMES}, config
