"""Multitask batch assembly, curriculum scheduling, and the combined-objective
training step for the standalone model.

The objective is mean LM loss plus `cl_weight` times the pooled contrastive
loss; with cl_weight = 0 the contrastive term is still computed for logging
but never propagated. All randomness derives from (seed, purpose, step), so
resuming from a checkpointed step reproduces the continuation bit-exactly in
64-bit mode.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from . import tokenizer
from .contrastive import ProjectionHead, build_positive_pairs, cl_loss, pool_pairs
from .imaging import variable_resolution_patchify
from .model import (
    IGNORE_INDEX,
    ModelConfig,
    aux_encode_batch,
    decode_frames_batch,
    lm_input_ids,
    vision_encode_batch,
)
from .numcore import (
    AdamState,
    NonFiniteError,
    Tape,
    Tensor,
    adam_step,
    add,
    cross_entropy,
    mul,
    zero_grads,
)
from .synthgen import OCR, TASKS, FeatureEvidence, SynthDoc, TrainSample, make_task_samples

DEFAULT_NOISE_DROP_MAX = 0.3
EMA_DECAY = 0.99


def rng_for(seed: int, purpose: str, step: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for (seed, purpose, step)."""
    tag = zlib.crc32(purpose.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, tag, step]))


@dataclass
class CurriculumPhase:
    name: str
    steps: int
    batch_size: int
    lr: float
    schedule: str = "fixed"  # fixed | cosine
    proportions: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.schedule not in ("fixed", "cosine"):
            raise ValueError(f"unknown lr schedule {self.schedule!r}")
        unknown = set(self.proportions) - set(TASKS)
        if unknown:
            raise ValueError(f"unknown tasks in proportions: {sorted(unknown)}")
        total = sum(self.proportions.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"task proportions sum to {total}, expected 1")

    def lr_at(self, step_in_phase: int) -> float:
        if self.schedule == "fixed":
            return self.lr
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * step_in_phase / max(self.steps, 1)))


@dataclass
class TrainState:
    params: dict[str, Tensor]
    adam: AdamState
    seed: int
    step: int = 0
    ema_lm: float | None = None
    ema_cl: float | None = None

    def update_emas(self, loss_lm: float, loss_cl: float) -> None:
        if self.ema_lm is None:
            self.ema_lm, self.ema_cl = loss_lm, loss_cl
        else:
            self.ema_lm = EMA_DECAY * self.ema_lm + (1.0 - EMA_DECAY) * loss_lm
            self.ema_cl = EMA_DECAY * self.ema_cl + (1.0 - EMA_DECAY) * loss_cl


def _drop_ocr_evidence(
    evidence: list[FeatureEvidence], drop_rate: float, rng: np.random.Generator
) -> list[FeatureEvidence]:
    # Training-time deprivation noise. MTP mask sentinels are exempt: the
    # sentinel token is part of the task input, not a detector output.
    out = []
    for ev in evidence:
        if ev.kind == OCR and ev.text != tokenizer.MASK_SENTINEL and rng.random() < drop_rate:
            continue
        out.append(ev)
    return out


def sample_batch(
    phase: CurriculumPhase,
    datasets: dict[str, list[SynthDoc]],
    rng: np.random.Generator,
    prompt_bank: dict[str, tuple[str, ...]] | None = None,
    noise_drop_max: float = DEFAULT_NOISE_DROP_MAX,
) -> list[TrainSample]:
    """Draw batch_size samples with per-sample categorical task choice."""
    active = [t for t in TASKS if phase.proportions.get(t, 0.0) > 0.0]
    for task in active:
        if not datasets.get(task):
            raise ValueError(f"no dataset available for active task {task!r}")
    probs = np.array([phase.proportions[t] for t in active])
    probs = probs / probs.sum()
    samples: list[TrainSample] = []
    for _ in range(phase.batch_size):
        task = active[int(rng.choice(len(active), p=probs))]
        docs = datasets[task]
        doc = docs[int(rng.integers(len(docs)))]
        sample = make_task_samples(doc, {task}, prompt_bank, rng)[0]
        if noise_drop_max > 0.0:
            drop = float(rng.uniform(0.0, noise_drop_max))
            sample.evidence = _drop_ocr_evidence(sample.evidence, drop, rng)
        samples.append(sample)
    return samples


def batch_loss(
    params: dict[str, Tensor],
    batch: list[TrainSample],
    config: ModelConfig,
    pair_rng: np.random.Generator,
) -> tuple[Tensor, Tensor, Tensor | None, list[Tensor]]:
    """Combined objective over a batch: (total, loss_lm, loss_cl, per-sample
    LM losses). loss_cl is always computed when pairs exist but contributes
    to the total only when cl_weight is nonzero."""
    grids = [
        variable_resolution_patchify(s.canvas, config.patch_size, config.patch_budget)
        for s in batch
    ]
    vision_batch = vision_encode_batch(grids, params, config)
    aux_batch, aux_metas = aux_encode_batch([s.evidence for s in batch], params, config)
    id_rows = []
    label_rows = []
    for sample in batch:
        if not sample.target_ids:
            raise ValueError(f"sample {sample.doc_id}/{sample.task} has an empty target")
        ids, labels = lm_input_ids(sample.prompt_ids, sample.target_ids)
        id_rows.append(ids)
        label_rows.append(labels)
    logits = decode_frames_batch(
        id_rows, vision_batch, aux_batch, aux_metas,
        [s.aux_masked for s in batch], params, config,
    )
    longest = logits.shape[1]
    lm_losses = []
    for i, labels in enumerate(label_rows):
        padded = np.full(longest, IGNORE_INDEX, dtype=np.intp)
        padded[: len(labels)] = labels
        lm_losses.append(cross_entropy(logits[i], padded, ignore_index=IGNORE_INDEX))
    loss_lm = mul(reduce(add, lm_losses), 1.0 / len(lm_losses))
    pair_entries = []
    for i, sample in enumerate(batch):
        pairs = build_positive_pairs(
            sample.evidence, grids[i], aux_metas[i], config.pairs_per_image, pair_rng
        )
        pair_entries.append((vision_batch[i], aux_metas[i].matrix, pairs))
    pooled = pool_pairs(pair_entries)
    loss_cl = None
    if pooled is not None and pooled[0].shape[0] >= 2:
        head = ProjectionHead.from_params(params)
        loss_cl = cl_loss(pooled[0], pooled[1], head, config.temperature)
    if config.cl_weight != 0.0 and loss_cl is not None:
        total = add(loss_lm, mul(loss_cl, config.cl_weight))
    else:
        total = loss_lm
    return total, loss_lm, loss_cl, lm_losses


def train_step(
    state: TrainState,
    batch: list[TrainSample],
    config: ModelConfig,
    lr: float | None = None,
) -> tuple[float, float, dict[str, float]]:
    """One forward/backward/update over a batch.

    Returns (loss_lm, loss_cl, per-task mean LM loss)."""
    params = state.params
    zero_grads(params.values())
    pair_rng = rng_for(state.seed, "pairs", state.step)
    try:
        with Tape() as tape:
            total, loss_lm, loss_cl, lm_losses = batch_loss(params, batch, config, pair_rng)
        tape.backward(total)
    except NonFiniteError as err:
        ids = sorted({s.doc_id for s in batch})
        raise NonFiniteError(f"{err} (batch docs: {ids})") from err
    grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    adam_step(state.adam, params, grads, lr=lr)
    zero_grads(params.values())
    state.step += 1
    lm_value = float(loss_lm.data)
    cl_value = float(loss_cl.data) if loss_cl is not None else 0.0
    state.update_emas(lm_value, cl_value)
    per_task: dict[str, list[float]] = {}
    for sample, lm in zip(batch, lm_losses):
        per_task.setdefault(sample.task, []).append(float(lm.data))
    task_means = {task: float(np.mean(vals)) for task, vals in per_task.items()}
    return lm_value, cl_value, task_means


def run_curriculum(
    phases: list[CurriculumPhase],
    datasets: dict[str, list[SynthDoc]],
    state: TrainState,
    config: ModelConfig,
    log_interval: int = 50,
    prompt_bank: dict[str, tuple[str, ...]] | None = None,
    noise_drop_max: float = DEFAULT_NOISE_DROP_MAX,
    on_phase_end=None,
) -> list[dict]:
    """Execute phases in order, resuming from state.step when mid-run.

    Returns metrics rows {step, task, loss_lm, loss_cl, lr}; per-task rows
    carry the window-mean LM loss for that task's samples.
    """
    if not phases:
        raise ValueError("curriculum needs at least one phase")
    rows: list[dict] = []
    boundary = 0
    for phase_idx, phase in enumerate(phases):
        phase_start = boundary
        boundary += phase.steps
        if state.step >= boundary:
            continue
        task_window: dict[str, list[float]] = {}
        cl_window: list[float] = []
        for step_in_phase in range(state.step - phase_start, phase.steps):
            lr = phase.lr_at(step_in_phase)
            batch_rng = rng_for(state.seed, "batch", state.step)
            batch = sample_batch(phase, datasets, batch_rng, prompt_bank, noise_drop_max)
            _, loss_cl, task_means = train_step(state, batch, config, lr=lr)
            cl_window.append(loss_cl)
            for task, value in task_means.items():
                task_window.setdefault(task, []).append(value)
            if state.step % log_interval == 0 or state.step == boundary:
                mean_cl = float(np.mean(cl_window))
                for task in sorted(task_window):
                    rows.append(
                        {
                            "step": state.step,
                            "task": task,
                            "loss_lm": float(np.mean(task_window[task])),
                            "loss_cl": mean_cl,
                            "lr": lr,
                        }
                    )
                task_window = {}
                cl_window = []
        if on_phase_end is not None:
            on_phase_end(phase_idx, phase, state)
    return rows
