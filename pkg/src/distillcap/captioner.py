"""Stacked-GRU caption decoder conditioned on a fused audio-visual latent.

At every step the latent is projected to the hidden size and added to the
embedding of the previous token. Each GRU layer's output goes through
dropout and is added back to the layer's input before feeding the next layer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .dataio import BOS, EOS, PAD, Vocabulary
from .errors import ShapeError
from .tensor import (
    Tensor,
    add,
    as_tensor,
    dropout,
    embedding,
    matmul,
    mul,
    one_minus,
    parameter,
    sigmoid,
    softmax_cross_entropy,
    tanh,
    weighted_cross_entropy,
)

GATES = ("z", "r", "n")


@dataclass(frozen=True)
class CaptionerConfig:
    vocab_size: int
    latent_dim: int
    hidden: int = 64
    embed: int = 64
    layers: int = 2
    dropout: float = 0.5
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def init_captioner(cfg: CaptionerConfig) -> dict[str, Tensor]:
    """Uniform(-a, a) initialisation with ``a = sqrt(1 / hidden)``."""
    if min(cfg.vocab_size, cfg.embed, cfg.hidden, cfg.layers, cfg.latent_dim) < 1:
        raise ValueError("captioner sizes must be positive")
    if cfg.embed != cfg.hidden:
        raise ShapeError(f"residual connections need embed == hidden, got {cfg.embed} != {cfg.hidden}")
    rng = np.random.default_rng([cfg.seed, 0xC4])
    a = np.sqrt(1.0 / cfg.hidden)
    h, v = cfg.hidden, cfg.vocab_size

    def u(*shape):
        return parameter(rng.uniform(-a, a, size=shape))

    params = {"embed": u(v, h), "latent.weight": u(cfg.latent_dim, h), "latent.bias": u(h)}
    for layer in range(cfg.layers):
        for g in GATES:
            params[f"gru{layer}.w_{g}"] = u(h, h)
            params[f"gru{layer}.u_{g}"] = u(h, h)
            params[f"gru{layer}.b_{g}"] = u(h)
    params["out.weight"] = u(h, v)
    params["out.bias"] = u(v)
    return params


def n_layers(params) -> int:
    return sum(1 for k in params if k.endswith(".w_z"))


def initial_state(params, batch: int | None = None) -> list[Tensor]:
    h = params["out.weight"].shape[0]
    shape = (h,) if batch is None else (batch, h)
    return [Tensor(np.zeros(shape)) for _ in range(n_layers(params))]


def gru_cell(params, layer: int, x: Tensor, h: Tensor) -> Tensor:
    p = lambda name: params[f"gru{layer}.{name}"]  # noqa: E731
    z = sigmoid(add(add(matmul(x, p("w_z")), matmul(h, p("u_z"))), p("b_z")))
    r = sigmoid(add(add(matmul(x, p("w_r")), matmul(h, p("u_r"))), p("b_r")))
    n = tanh(add(add(matmul(x, p("w_n")), matmul(mul(r, h), p("u_n"))), p("b_n")))
    return add(mul(one_minus(z), n), mul(z, h))


def project_latent(params, latent) -> Tensor:
    return add(matmul(as_tensor(latent), params["latent.weight"]), params["latent.bias"])


def _step(params, cond: Tensor, tokens, state, p_drop, train, rng):
    x = add(embedding(params["embed"], tokens), cond)
    new_state = []
    for layer, h in enumerate(state):
        h_new = gru_cell(params, layer, x, h)
        new_state.append(h_new)
        x = add(dropout(h_new, p_drop, rng, train), x)
    logits = add(matmul(x, params["out.weight"]), params["out.bias"])
    return logits, new_state


def decode_step(params, latent, prev_token, state, train=False, p_drop=0.5, rng=None):
    """One decoder step; returns ``(logits, new_state)``.

    Works for a single sample (``latent`` [D], int token, [H] states) or a
    batch ([B, D], int array, [B, H] states).
    """
    return _step(params, project_latent(params, latent), prev_token, state, p_drop, train, rng)


def teacher_forcing_loss(params, latent, caption: Sequence[int], train=False, p_drop=0.5, rng=None) -> Tensor:
    """Mean cross-entropy of predicting ``caption[t+1]`` from ``caption[:t+1]``."""
    if len(caption) < 2:
        raise ValueError("caption needs at least BOS and EOS")
    cond = project_latent(params, latent)
    state = initial_state(params)
    total = None
    for t in range(len(caption) - 1):
        logits, state = _step(params, cond, int(caption[t]), state, p_drop, train, rng)
        ce = softmax_cross_entropy(logits, int(caption[t + 1]))
        total = ce if total is None else add(total, ce)
    return total * (1.0 / (len(caption) - 1))


def pad_captions(captions: Sequence[Sequence[int]]) -> np.ndarray:
    width = max(len(c) for c in captions)
    out = np.full((len(captions), width), PAD, dtype=np.int64)
    for i, c in enumerate(captions):
        out[i, : len(c)] = c
    return out


def batch_teacher_forcing_loss(params, latents, captions, train=False, p_drop=0.5, rng=None) -> Tensor:
    """Mean over the batch of each caption's :func:`teacher_forcing_loss`.

    Padded positions get zero weight, so the value matches the per-sample mean.
    """
    if any(len(c) < 2 for c in captions):
        raise ValueError("caption needs at least BOS and EOS")
    tokens = pad_captions(captions)
    b = len(captions)
    steps = np.array([len(c) - 1 for c in captions], dtype=np.float64)
    cond = project_latent(params, latents)
    state = initial_state(params, b)
    total = None
    for t in range(tokens.shape[1] - 1):
        logits, state = _step(params, cond, tokens[:, t], state, p_drop, train, rng)
        w = np.where(t < steps, 1.0 / (b * steps), 0.0)
        ce = weighted_cross_entropy(logits, tokens[:, t + 1], w)
        total = ce if total is None else add(total, ce)
    return total


def generate_caption(params, latent, vocab: Vocabulary | None = None, max_len: int = 20) -> list[int]:
    """Greedy decoding from BOS; stops after EOS or ``max_len`` tokens.

    The returned tokens exclude the leading BOS and include a terminal EOS if
    one was produced. PAD and BOS are never emitted.
    """
    return generate_captions(params, np.asarray(latent)[None, :], max_len)[0]


def generate_captions(params, latents, max_len: int = 20) -> list[list[int]]:
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    latents = np.asarray(latents, dtype=np.float64)
    b = latents.shape[0]
    cond = project_latent(params, latents)
    state = initial_state(params, b)
    prev = np.full(b, BOS, dtype=np.int64)
    out: list[list[int]] = [[] for _ in range(b)]
    done = np.zeros(b, dtype=bool)
    for _ in range(max_len):
        logits, state = _step(params, cond, prev, state, 0.0, False, None)
        scores = logits.data.copy()
        scores[:, PAD] = -np.inf
        scores[:, BOS] = -np.inf
        prev = scores.argmax(axis=1)  # first maximum wins ties
        for i in np.flatnonzero(~done):
            out[i].append(int(prev[i]))
            if prev[i] == EOS:
                done[i] = True
        if done.all():
            break
    return out
