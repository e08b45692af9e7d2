"""The TPR-RNN: update MLPs, write/move/backlink memory operations,
chained-unbinding inference and the output projection.

Two code paths share one parameter set:

* plain numpy functions on single samples (``step``, ``infer``, ...), kept
  close to the algebra and used as references;
* ``forward`` which records a batched computation on an autodiff tape for
  training and evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from . import autodiff as ad
from . import tensor_core as tc
from .encoder import PAD_ID, EncoderParams, encode_sentence, encode_var, init_encoder

UPDATE_ROLES = ("e1", "e2", "r1", "r2", "r3")
QUERY_ROLES = ("n", "l1", "l2", "l3")
ENTITY_ROLES = frozenset({"e1", "e2", "n"})
LN_EPSILON = 1e-6


@dataclass(frozen=True)
class AblationConfig:
    use_write: bool = True
    use_move: bool = True
    use_backlink: bool = True

    def __post_init__(self):
        if not (self.use_write or self.use_move or self.use_backlink):
            raise ValueError("at least one memory operation must be enabled")

    @classmethod
    def parse(cls, spec: str) -> "AblationConfig":
        """Build from a flag string such as ``"w"``, ``"wm"`` or ``"wmb"``."""
        spec = spec.lower()
        if not spec or set(spec) - set("wmb"):
            raise ValueError(f"bad ablation spec {spec!r}; use letters from 'wmb'")
        return cls("w" in spec, "m" in spec, "b" in spec)

    def __str__(self):
        return "".join(c for c, on in zip("wmb", (self.use_write, self.use_move,
                                                 self.use_backlink)) if on)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    dim_symbol: int
    dim_hidden: int
    dim_entity: int
    dim_relation: int
    k: int

    def out_dim(self, role: str) -> int:
        return self.dim_entity if role in ENTITY_ROLES else self.dim_relation

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {
            "embeddings": (self.vocab_size, self.dim_symbol),
            "positions": (self.k, self.dim_symbol),
        }
        for role in UPDATE_ROLES + QUERY_ROLES:
            out = self.out_dim(role)
            shapes[f"{role}.W1"] = (self.dim_hidden, self.dim_symbol)
            shapes[f"{role}.b1"] = (self.dim_hidden,)
            shapes[f"{role}.W2"] = (out, self.dim_hidden)
            shapes[f"{role}.b2"] = (out,)
        for i in (1, 2, 3):
            shapes[f"ln{i}.gamma"] = ()
            shapes[f"ln{i}.beta"] = ()
        shapes["Z"] = (self.vocab_size, self.dim_entity)
        return shapes


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass
class LayerNormParams:
    gamma: float = 1.0
    beta: float = 0.0
    epsilon: float = LN_EPSILON


@dataclass
class ModelParams:
    """All trainable arrays, keyed by name, plus the config that sized them."""

    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def mlp(self, role: str) -> MlpParams:
        a = self.arrays
        return MlpParams(a[f"{role}.W1"], a[f"{role}.b1"], a[f"{role}.W2"], a[f"{role}.b2"])

    def layer_norm(self, i: int) -> LayerNormParams:
        return LayerNormParams(float(self.arrays[f"ln{i}.gamma"]),
                               float(self.arrays[f"ln{i}.beta"]))

    @property
    def encoder(self) -> EncoderParams:
        return EncoderParams(self.arrays["embeddings"], self.arrays["positions"])

    def check_shapes(self):
        expected = self.config.param_shapes()
        if set(expected) != set(self.arrays):
            missing = set(expected) ^ set(self.arrays)
            raise ValueError(f"parameter names differ from config: {sorted(missing)}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ValueError(
                    f"{name}: shape {self.arrays[name].shape} does not match config {shape}")


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    enc = init_encoder(config.vocab_size, config.dim_symbol, config.k, rng)
    arrays = {"embeddings": enc.embeddings, "positions": enc.positions}
    for role in UPDATE_ROLES + QUERY_ROLES:
        out = config.out_dim(role)
        arrays[f"{role}.W1"] = glorot_uniform(rng, config.dim_hidden, config.dim_symbol)
        arrays[f"{role}.b1"] = np.zeros(config.dim_hidden)
        arrays[f"{role}.W2"] = glorot_uniform(rng, out, config.dim_hidden)
        arrays[f"{role}.b2"] = np.zeros(out)
    for i in (1, 2, 3):
        arrays[f"ln{i}.gamma"] = np.array(1.0)
        arrays[f"ln{i}.beta"] = np.array(0.0)
    arrays["Z"] = glorot_uniform(rng, config.vocab_size, config.dim_entity)
    return ModelParams(config, arrays)


# single-sample reference path ---------------------------------------------

def mlp_forward(s, p: MlpParams) -> np.ndarray:
    h = np.tanh(p.W1 @ s + p.b1)
    return np.tanh(p.W2 @ h + p.b2)


def update_reps(s_t, params: ModelParams):
    """Return ``(e1, e2, r1, r2, r3)`` for one sentence representation."""
    return tuple(mlp_forward(s_t, params.mlp(role)) for role in UPDATE_ROLES)


def write_delta(F, e1, r1, e2):
    """Write update ``W`` and the displaced target ``w_hat``."""
    w_hat = tc.unbind3(F, e1, r1)
    W = tc.sub(tc.outer3(e1, r1, e2), tc.outer3(e1, r1, w_hat))
    return W, w_hat


def move_delta(F, e1, r2, w_hat):
    m_hat = tc.unbind3(F, e1, r2)
    return tc.sub(tc.outer3(e1, r2, w_hat), tc.outer3(e1, r2, m_hat))


def backlink_delta(F, e1, e2, r3):
    b_hat = tc.unbind3(F, e2, r3)
    return tc.sub(tc.outer3(e2, r3, e1), tc.outer3(e2, r3, b_hat))


def memory_delta(F, reps, ablation: AblationConfig = AblationConfig()) -> tc.Tensor:
    """``W + M + B`` restricted to the enabled operations, all read from ``F``."""
    e1, e2, r1, r2, r3 = reps
    W, w_hat = write_delta(F, e1, r1, e2)
    delta = tc.Tensor.zeros(*np.shape(F))
    if ablation.use_write:
        delta = delta + W
    if ablation.use_move:
        delta = delta + move_delta(F, e1, r2, w_hat)
    if ablation.use_backlink:
        delta = delta + backlink_delta(F, e1, e2, r3)
    return delta


def step(F, s_t, params: ModelParams,
         ablation: AblationConfig = AblationConfig()) -> tc.Tensor:
    """``F_t = F_{t-1} + dF_t`` for one sentence representation.

    Raises :class:`tensor_core.NonFiniteError` if the new state is not finite.
    """
    return tc.add(F, memory_delta(F, update_reps(s_t, params), ablation))


def layer_norm(x, p: LayerNormParams = LayerNormParams()) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return p.gamma * (x - mu) / np.sqrt(var + p.epsilon) + p.beta


def inference_steps(F, n, relations, ln_params=None) -> list[np.ndarray]:
    """Chained unbinding: each hop unbinds the previous result with the next relation."""
    ln_params = ln_params or [LayerNormParams()] * len(relations)
    hops, hop = [], n
    for rel, p in zip(relations, ln_params):
        hop = layer_norm(tc.unbind3(F, hop, rel).array, p)
        hops.append(hop)
    return hops


def infer(F, s_q, params: ModelParams) -> np.ndarray:
    """Three chained unbindings from the final state, projected to logits."""
    n = mlp_forward(s_q, params.mlp("n"))
    rels = [mlp_forward(s_q, params.mlp(f"l{i}")) for i in (1, 2, 3)]
    hops = inference_steps(F, n, rels, [params.layer_norm(i) for i in (1, 2, 3)])
    return params["Z"] @ (hops[0] + hops[1] + hops[2])


def softmax(logits) -> np.ndarray:
    return np.exp(ad.log_softmax(np.asarray(logits, dtype=np.float64)))


def loss(logits, answer_id: int) -> float:
    if answer_id == PAD_ID:
        raise ValueError("the padding token is never a valid answer")
    return float(-ad.log_softmax(np.asarray(logits, dtype=np.float64))[answer_id])


def run_story(story_ids, question_ids, params: ModelParams,
              ablation: AblationConfig = AblationConfig()) -> np.ndarray:
    """Logits for one story (list of id sentences) and question."""
    cfg = params.config
    F = tc.Tensor.zeros(cfg.dim_entity, cfg.dim_relation, cfg.dim_entity)
    for sent in story_ids:
        F = step(F, encode_sentence(sent, params.encoder), params, ablation)
    return infer(F, encode_sentence(question_ids, params.encoder), params)


# batched, differentiable path ----------------------------------------------

def variables(tape: ad.Tape, params: ModelParams,
              requires_grad: bool = True) -> dict[str, ad.Variable]:
    return {k: tape.variable(v, requires_grad) for k, v in params.items()}


def mlp_var(x: ad.Variable, vs: Mapping[str, ad.Variable], role: str) -> ad.Variable:
    h = ad.tanh(ad.affine(x, vs[f"{role}.W1"], vs[f"{role}.b1"]))
    return ad.tanh(ad.affine(h, vs[f"{role}.W2"], vs[f"{role}.b2"]))


def step_var(F: ad.Variable, s: ad.Variable, vs, mask,
             ablation: AblationConfig, fused: bool = True) -> ad.Variable:
    """Batched masked state update; ``mask`` has shape (B,)."""
    e1, e2, r1, r2, r3 = (mlp_var(s, vs, role) for role in UPDATE_ROLES)
    if fused:
        return ad.tpr_step(F, e1, e2, r1, r2, r3, mask, ablation.use_write,
                           ablation.use_move, ablation.use_backlink)
    tape = F.tape
    w_hat = ad.unbind3(F, e1, r1)
    parts = []
    if ablation.use_write:
        parts.append(ad.outer3(e1, r1, ad.sub(e2, w_hat)))
    if ablation.use_move:
        parts.append(ad.outer3(e1, r2, ad.sub(w_hat, ad.unbind3(F, e1, r2))))
    if ablation.use_backlink:
        parts.append(ad.outer3(e2, r3, ad.sub(e1, ad.unbind3(F, e2, r3))))
    delta = parts[0]
    for p in parts[1:]:
        delta = ad.add(delta, p)
    m = tape.constant(np.asarray(mask, dtype=np.float64)[:, None, None, None])
    return ad.add(F, ad.hadamard(m, delta))


def infer_var(F: ad.Variable, s_q: ad.Variable, vs) -> ad.Variable:
    hop = mlp_var(s_q, vs, "n")
    total = None
    for i in (1, 2, 3):
        rel = mlp_var(s_q, vs, f"l{i}")
        hop = ad.layer_norm(ad.unbind3(F, hop, rel), vs[f"ln{i}.gamma"],
                            vs[f"ln{i}.beta"], LN_EPSILON)
        total = hop if total is None else ad.add(total, hop)
    return ad.matvec(vs["Z"], total)


def forward(tape: ad.Tape, vs, story, mask, question,
            ablation: AblationConfig = AblationConfig(), fused: bool = True) -> ad.Variable:
    """Logits of shape (B, vocab) for a padded batch.

    ``story`` is (B, T, k) token ids, ``mask`` (B, T), ``question`` (B, k).
    """
    story = np.asarray(story)
    B, T, _ = story.shape
    mask = np.asarray(mask, dtype=np.float64)
    E = vs["Z"].shape[1]
    R = vs["r1.W2"].shape[0]
    emb, pos = vs["embeddings"], vs["positions"]
    s_all = encode_var(emb, pos, story)
    F = tape.constant(np.zeros((B, E, R, E)))
    for t in range(T):
        s_t = _select_step(s_all, t)
        F = step_var(F, s_t, vs, mask[:, t], ablation, fused)
        if not np.isfinite(F.value).all():
            raise tc.NonFiniteError(f"TPR state became non-finite at step {t}")
    return infer_var(F, encode_var(emb, pos, question), vs)


def _select_step(s_all: ad.Variable, t: int) -> ad.Variable:
    def fwd(x):
        def vjp(g):
            out = np.zeros_like(x)
            out[:, t] = g
            return (out,)
        return x[:, t], vjp
    return s_all.tape.record("select", (s_all,), fwd)


def batch_loss(params: ModelParams, batch, ablation: AblationConfig = AblationConfig(),
               requires_grad: bool = True, fused: bool = True):
    """Forward one batch; returns ``(tape, variables, loss, logits)``."""
    tape = ad.Tape()
    vs = variables(tape, params, requires_grad)
    logits = forward(tape, vs, batch.story, batch.mask, batch.question, ablation, fused)
    loss_var = ad.softmax_cross_entropy(logits, batch.answer)
    return tape, vs, loss_var, logits
