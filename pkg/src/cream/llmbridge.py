"""Frozen toy language model and the soft-visual-prompt integration path.

The toy LM is a small decoder-only transformer sharing the byte vocabulary.
Integration feeds the prompter's output h' (k rows) ahead of the embedded
question and answer; only the answer positions carry loss. Gradients flow
through the frozen LM and encoders to reach the trainable subset — decoder,
learned queries, and the projection U — which is the only thing the
optimizer may touch. Frozen tensors are fingerprinted and re-verified after
every update step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from . import tokenizer
from .checkpoint import fingerprint_tensors
from .imaging import variable_resolution_patchify
from .model import (
    IGNORE_INDEX,
    ModelConfig,
    _causal_mask,
    _encoder_block,
    _linear,
    _ln,
    aux_encode,
    decode_prompter,
    vision_encode,
)
from .numcore import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    add,
    concat,
    cross_entropy,
    mul,
    take_rows,
    zero_grads,
)
from .synthgen import SynthDoc, TrainSample

MIN_CORPUS_TOKENS = 10_000


def lm_param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = config.lm_width
    shapes: dict[str, tuple[int, ...]] = {
        "lm.tok_emb": (config.vocab_size, d),
        "lm.pos": (config.num_queries + config.lm_max_len, d),
    }
    for i in range(config.lm_layers):
        prefix = f"lm.blocks.{i}"
        for ln in ("ln1", "ln2"):
            shapes[f"{prefix}.{ln}.g"] = (d,)
            shapes[f"{prefix}.{ln}.b"] = (d,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.attn.{w}"] = (d, d)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[f"{prefix}.attn.{b}"] = (d,)
        shapes[f"{prefix}.mlp.w1"] = (d, 4 * d)
        shapes[f"{prefix}.mlp.b1"] = (4 * d,)
        shapes[f"{prefix}.mlp.w2"] = (4 * d, d)
        shapes[f"{prefix}.mlp.b2"] = (d,)
    shapes["lm.ln_out.g"] = (d,)
    shapes["lm.ln_out.b"] = (d,)
    shapes["lm.head.w"] = (d, config.vocab_size)
    shapes["lm.head.b"] = (config.vocab_size,)
    return shapes


def init_lm_params(config: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> dict[str, Tensor]:
    if config.lm_width % config.heads != 0:
        raise ValueError(f"lm_width {config.lm_width} not divisible by heads {config.heads}")
    params: dict[str, Tensor] = {}
    for name, shape in lm_param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            data = np.ones(shape, dtype=dtype)
        elif leaf.startswith("b"):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = (0.02 * rng.standard_normal(shape)).astype(dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


@dataclass
class FrozenLM:
    params: dict[str, Tensor]
    config: ModelConfig
    fingerprints: dict[str, str] = field(default_factory=dict)

    @classmethod
    def freeze(cls, params: dict[str, Tensor], config: ModelConfig) -> "FrozenLM":
        for p in params.values():
            p.requires_grad = False
        return cls(params, config, fingerprint_tensors(params))

    def names(self) -> set[str]:
        return set(self.params)

    def verify_frozen(self) -> None:
        current = fingerprint_tensors(self.params)
        if current != self.fingerprints:
            changed = sorted(n for n in current if current[n] != self.fingerprints.get(n))
            raise AssertionError(f"frozen LM tensors changed: {changed}")


def _lm_hidden(x: Tensor, params, config: ModelConfig) -> Tensor:
    mask = _causal_mask(x.shape[0], x.data.dtype)
    for i in range(config.lm_layers):
        x = _encoder_block(x, params, f"lm.blocks.{i}", mask, config.heads)
    return _ln(x, params, "lm.ln_out")


def _lm_logits_from_ids(ids: list[int], params, config: ModelConfig) -> Tensor:
    x = take_rows(params["lm.tok_emb"], np.asarray(ids, dtype=np.intp))
    x = add(x, take_rows(params["lm.pos"], np.arange(len(ids))))
    return _linear(_lm_hidden(x, params, config), params, "lm.head")


def lm_sequence_loss(text: str, params, config: ModelConfig) -> Tensor:
    """Next-token cross-entropy over BOS + bytes + EOS (truncated to fit)."""
    ids = [tokenizer.BOS] + tokenizer.encode(text)[: config.lm_max_len - 2] + [tokenizer.EOS]
    logits = _lm_logits_from_ids(ids[:-1], params, config)
    return cross_entropy(logits, np.asarray(ids[1:], dtype=np.intp))


def lm_greedy_generate(lm: FrozenLM, prefix: str, max_len: int = 32) -> str:
    ids = [tokenizer.BOS] + tokenizer.encode(prefix)
    out: list[int] = []
    while len(out) < max_len and len(ids) < lm.config.lm_max_len:
        logits = _lm_logits_from_ids(ids, lm.params, lm.config)
        tok = int(np.argmax(logits.data[-1]))
        if tok == tokenizer.EOS:
            break
        out.append(tok)
        ids.append(tok)
    return tokenizer.decode(out)


def pretrain_toy_lm(
    corpus: list[str],
    config: ModelConfig,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 16,
    max_steps: int = 4000,
    target_loss: float = 2.5,
    eval_every: int = 100,
    dtype=np.float64,
) -> FrozenLM:
    """Train next-token prediction until held-out loss < target, then freeze."""
    total_tokens = sum(len(tokenizer.encode(s)) for s in corpus)
    if total_tokens < MIN_CORPUS_TOKENS:
        raise ValueError(f"corpus has {total_tokens} tokens, need >= {MIN_CORPUS_TOKENS}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    n_held = max(1, len(corpus) // 10)
    held = [corpus[int(i)] for i in order[:n_held]]
    train = [corpus[int(i)] for i in order[n_held:]]
    params = init_lm_params(config, rng, dtype)
    adam = AdamState(lr=lr)

    def held_out_loss() -> float:
        return float(np.mean([lm_sequence_loss(s, params, config).data for s in held]))

    final = held_out_loss()
    for step in range(1, max_steps + 1):
        picks = rng.integers(len(train), size=batch_size)
        zero_grads(params.values())
        with Tape() as tape:
            losses = [lm_sequence_loss(train[int(i)], params, config) for i in picks]
            loss = mul(reduce(add, losses), 1.0 / len(losses))
        tape.backward(loss)
        grads = {name: p.grad for name, p in params.items() if p.grad is not None}
        adam_step(adam, params, grads)
        if step % eval_every == 0 or step == max_steps:
            final = held_out_loss()
            if final < target_loss:
                break
    if final >= target_loss:
        raise RuntimeError(
            f"toy LM failed to reach held-out loss < {target_loss} in {max_steps} steps "
            f"(final {final:.4f})"
        )
    zero_grads(params.values())
    return FrozenLM.freeze(params, config)


TRAINABLE_PREFIXES = ("dec.",)
TRAINABLE_NAMES = ("prompter.queries", "prompter.proj_u")


def trainable_names(params: dict[str, Tensor]) -> set[str]:
    return {
        name
        for name in params
        if name.startswith(TRAINABLE_PREFIXES) or name in TRAINABLE_NAMES
    }


@dataclass
class IntegrationState:
    params: dict[str, Tensor]  # cream params + frozen LM params, one namespace
    config: ModelConfig
    adam: AdamState
    seed: int
    step: int = 0
    frozen: set[str] = field(default_factory=set)
    frozen_fingerprints: dict[str, str] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        cream_params: dict[str, Tensor],
        lm: FrozenLM,
        config: ModelConfig,
        lr: float = 1e-3,
        seed: int = 0,
    ) -> "IntegrationState":
        params = dict(cream_params)
        params.update(lm.params)
        trainable = trainable_names(params)
        frozen = set(params) - trainable
        for name, p in params.items():
            p.requires_grad = name in trainable
        return cls(
            params=params,
            config=config,
            adam=AdamState(lr=lr),
            seed=seed,
            frozen=frozen,
            frozen_fingerprints=fingerprint_tensors(params, frozen),
        )

    def verify_frozen(self) -> None:
        current = fingerprint_tensors(self.params, self.frozen)
        if current != self.frozen_fingerprints:
            changed = sorted(n for n in current if current[n] != self.frozen_fingerprints[n])
            raise AssertionError(f"frozen parameters changed during integration: {changed}")


def integration_sequence_length(config: ModelConfig, question_ids, answer_ids) -> int:
    """LM positions consumed: k + |question| + 1 + |answer| — independent of
    the amount of evidence in the image (the fixed-footprint contract)."""
    return config.num_queries + len(question_ids) + 1 + len(answer_ids)


def integrate_forward(state: IntegrationState, sample: TrainSample) -> Tensor:
    """Loss of the frozen LM on the answer given [h' | question | SEP | answer]."""
    if sample.task != "QA":
        raise ValueError(f"integration expects QA samples, got {sample.task!r}")
    config = state.config
    params = state.params
    question_ids = sample.prompt_ids
    answer_ids = sample.target_ids
    if not answer_ids:
        raise ValueError("integration sample has an empty answer")
    grid = variable_resolution_patchify(sample.canvas, config.patch_size, config.patch_budget)
    venc = vision_encode(grid, params, config)
    aenc = aux_encode(sample.evidence, params, config)
    soft_prompt = decode_prompter(question_ids, venc, aenc, params, config)  # (k, d')

    ids = list(question_ids) + [tokenizer.SEP] + list(answer_ids)
    k = config.num_queries
    total = integration_sequence_length(config, question_ids, answer_ids)
    if total > params["lm.pos"].shape[0]:
        raise ValueError(f"integration sequence length {total} exceeds LM position table")
    emb = take_rows(params["lm.tok_emb"], np.asarray(ids, dtype=np.intp))
    x = concat([soft_prompt, emb], axis=0)
    x = add(x, take_rows(params["lm.pos"], np.arange(total)))
    logits = _linear(_lm_hidden(x, params, config), params, "lm.head")

    labels = np.full(total, IGNORE_INDEX, dtype=np.intp)
    sep_pos = k + len(question_ids)
    labels[sep_pos : sep_pos + len(answer_ids)] = answer_ids
    labels[total - 1] = tokenizer.EOS
    return cross_entropy(logits, labels, ignore_index=IGNORE_INDEX)


def integrate_train_step(
    state: IntegrationState, batch: list[TrainSample], lr: float | None = None
) -> float:
    """One integration update; only the trainable subset moves."""
    params = state.params
    zero_grads(params.values())
    with Tape() as tape:
        losses = [integrate_forward(state, sample) for sample in batch]
        loss = mul(reduce(add, losses), 1.0 / len(losses))
    tape.backward(loss)
    grads = {
        name: p.grad for name, p in params.items() if p.grad is not None and name not in state.frozen
    }
    adam_step(state.adam, params, grads, lr=lr)
    zero_grads(params.values())
    state.step += 1
    state.verify_frozen()
    return float(loss.data)


def integration_eval_loss(state: IntegrationState, samples: list[TrainSample]) -> float:
    return float(np.mean([integrate_forward(state, s).data for s in samples]))


def qa_samples(docs: list[SynthDoc]) -> list[TrainSample]:
    """One integration sample per (document, QA pair); the prompt is the bare
    question (the user query both the prompter and the LM see)."""
    samples = []
    for doc in docs:
        for question, answer in doc.qa:
            samples.append(
                TrainSample(
                    doc_id=doc.doc_id,
                    canvas=doc.canvas,
                    evidence=list(doc.evidence),
                    task="QA",
                    prompt=question,
                    target=answer,
                    prompt_ids=tokenizer.encode(question),
                    target_ids=tokenizer.encode(answer),
                    aux_masked=False,
                )
            )
    return samples
