"""Finite-difference checks for every differentiable primitive and the full model."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .data_babi import Batch
from .model import AblationConfig, ModelConfig, forward, init_params

PRIMITIVE_TOL = 1e-6
MODEL_TOL = 1e-4


def _weighted(tape, out: ad.Variable, seed: int = 99) -> ad.Variable:
    # fixed random projection to a scalar so every output entry matters
    w = tape.constant(np.random.default_rng(seed).normal(size=out.shape))
    return ad.sum(ad.hadamard(out, w))


def primitive_cases(seed: int = 0):
    """``name -> (loss_fn, params)`` for :func:`autodiff.grad_check`."""
    rng = np.random.default_rng(seed)
    n = rng.normal
    proj = seed + 1

    def unary(op):
        return lambda t, v: _weighted(t, op(v["x"]), seed + 2)

    def binary(op):
        return lambda t, v: _weighted(t, op(v["a"], v["b"]), seed + 2)

    ids = np.array([[1, 2, 0], [3, 1, 2]])
    targets = np.array([2, 0, 3])
    mask = np.array([1.0, 0.0, 1.0])
    cases = {
        "add": (binary(ad.add), {"a": n(size=(3, 4)), "b": n(size=(3, 4))}),
        "sub": (binary(ad.sub), {"a": n(size=(3, 4)), "b": n(size=(3, 4))}),
        "scale": (unary(lambda x: ad.scale(x, -1.7)), {"x": n(size=5)}),
        "hadamard": (binary(ad.hadamard), {"a": n(size=(2, 5)), "b": n(size=5)}),
        "dot": (lambda t, v: ad.dot(v["a"], v["b"]), {"a": n(size=4), "b": n(size=4)}),
        "matvec": (binary(ad.matvec), {"a": n(size=(4, 3)), "b": n(size=(2, 3))}),
        "affine": (lambda t, v: _weighted(t, ad.affine(v["x"], v["W"], v["b"]), proj),
                   {"x": n(size=(2, 3)), "W": n(size=(4, 3)), "b": n(size=4)}),
        "outer2": (binary(ad.outer2), {"a": n(size=3), "b": n(size=4)}),
        "outer3": (lambda t, v: _weighted(t, ad.outer3(v["a"], v["b"], v["c"]), proj),
                   {"a": n(size=3), "b": n(size=2), "c": n(size=3)}),
        "unbind2": (binary(ad.unbind2), {"a": n(size=(3, 4)), "b": n(size=4)}),
        "unbind3": (lambda t, v: _weighted(t, ad.unbind3(v["F"], v["e"], v["r"]), proj),
                    {"F": n(size=(2, 3, 2, 3)), "e": n(size=(2, 3)), "r": n(size=(2, 2))}),
        "tanh": (unary(ad.tanh), {"x": n(size=(2, 3))}),
        "sum": (lambda t, v: _weighted(t, ad.sum(v["x"], axis=0), proj),
                {"x": n(size=(3, 4))}),
        "layer_norm": (lambda t, v: _weighted(t, ad.layer_norm(v["x"], v["g"], v["b"]), proj),
                       {"x": n(size=5), "g": np.array(1.3), "b": np.array(-0.2)}),
        "softmax_cross_entropy": (
            lambda t, v: ad.softmax_cross_entropy(v["z"], targets), {"z": n(size=(3, 5))}),
        "embedding_gather": (
            lambda t, v: _weighted(t, ad.embedding_gather(v["E"], ids, frozen_rows=()), proj),
            {"E": n(size=(4, 3))}),
        "tpr_step": (
            lambda t, v: _weighted(t, ad.tpr_step(v["F"], v["e1"], v["e2"], v["r1"], v["r2"],
                                                  v["r3"], mask), proj),
            {"F": n(size=(3, 3, 2, 3)), "e1": n(size=(3, 3)), "e2": n(size=(3, 3)),
             "r1": n(size=(3, 2)), "r2": n(size=(3, 2)), "r3": n(size=(3, 2))}),
    }
    return cases


def check_primitives(eps: float = 1e-5, seed: int = 0) -> dict[str, float]:
    return {name: ad.grad_check(fn, params, eps)
            for name, (fn, params) in primitive_cases(seed).items()}


def tiny_model_case(seed: int = 0, ablation: AblationConfig = AblationConfig(),
                    fused: bool = True, dim_entity: int = 4, dim_relation: int = 3,
                    dim_hidden: int = 6, vocab_size: int = 8, n_sentences: int = 3,
                    k: int = 4, batch: int = 2):
    """Loss function and parameters for a small full forward + cross-entropy."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(vocab_size, vocab_size, dim_hidden, dim_entity, dim_relation, k)
    params = init_params(cfg, rng)
    # larger embeddings than the production init so every path carries signal
    params.arrays["embeddings"][1:] = rng.normal(scale=0.5, size=(vocab_size - 1, vocab_size))
    params.arrays["positions"] += rng.normal(scale=0.1, size=params["positions"].shape)
    for name in params.arrays:
        if name.endswith(".b1") or name.endswith(".b2"):
            params.arrays[name] = rng.normal(scale=0.1, size=params[name].shape)
    params.arrays["ln1.gamma"] = np.array(1.1)
    params.arrays["ln2.beta"] = np.array(0.05)
    story = rng.integers(1, vocab_size, size=(batch, n_sentences, k))
    story[:, :, -1] = 0
    mask = np.ones((batch, n_sentences))
    mask[-1, -1] = 0.0
    b = Batch(story, mask, rng.integers(1, vocab_size, size=(batch, k)),
              rng.integers(1, vocab_size, size=batch))

    def loss_fn(tape, vs):
        logits = forward(tape, vs, b.story, b.mask, b.question, ablation, fused)
        return ad.softmax_cross_entropy(logits, b.answer)

    return loss_fn, dict(params.arrays)


def check_model(eps: float = 1e-5, seed: int = 0, **kwargs) -> float:
    fn, params = tiny_model_case(seed, **kwargs)
    return ad.grad_check(fn, params, eps)
