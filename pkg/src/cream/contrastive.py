"""Contrastive feature alignment between vision-patch and auxiliary-token
embeddings.

Positive pairs tie the patch containing an evidence box's center to the
evidence's first text token. Sampled pairs pool across the whole batch;
every pooled member that is not a pair's partner acts as a negative, in- or
cross-modality alike. The per-pair objective is

    -log( 2*s(v_i, v_j) / sum_{k != i,j} [ s(v_i, v_k) + s(v_j, v_k) ] )

with s(x, y) = exp(cos(f(x), f(y)) / temperature) computed in the shared
2-layer MLP projection space, mean-reduced over sampled pairs. Positives are
excluded from the denominator, so the loss is not bounded below by zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import PatchGrid, patch_index_of_point
from .numcore import (
    Tensor,
    add,
    concat,
    gelu,
    l2_normalize,
    log,
    matmul,
    mean,
    exp,
    mul,
    neg,
    sub,
    take_at,
    take_rows,
    tensor_sum,
    transpose,
)
from .model import AuxEncoding
from .synthgen import FeatureEvidence

COSINE_EPS = 1e-8


@dataclass
class ProjectionHead:
    """Shared 2-layer MLP (width d -> d -> common_dim) with GELU between."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def from_params(cls, params) -> "ProjectionHead":
        return cls(params["cl.proj.w1"], params["cl.proj.b1"], params["cl.proj.w2"], params["cl.proj.b2"])

    def param_names(self) -> tuple[str, ...]:
        return ("cl.proj.w1", "cl.proj.b1", "cl.proj.w2", "cl.proj.b2")


@dataclass
class PositivePairSet:
    """(vision row, auxiliary row) pairs for one image; duplicates on either
    side are excluded by construction."""

    pairs: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.pairs)


def project(embeddings: Tensor, head: ProjectionHead) -> Tensor:
    h = gelu(add(matmul(embeddings, head.w1), head.b1))
    return add(matmul(h, head.w2), head.b2)


def build_positive_pairs(
    evidence: list[FeatureEvidence],
    grid: PatchGrid,
    auxenc: AuxEncoding,
    count: int,
    rng: np.random.Generator,
) -> PositivePairSet:
    """Sample up to `count` candidate pairs uniformly without replacement.

    Candidates map each encoded evidence item to (patch containing its box
    center, its first token position); when several centers share a patch,
    only the first in raster order is kept so indices stay duplicate-free.
    """
    candidates: list[tuple[int, int]] = []
    seen_patches: set[int] = set()
    for ev_idx, ev in enumerate(evidence):
        token_pos = auxenc.first_token_positions.get(ev_idx)
        if token_pos is None:
            continue
        patch = patch_index_of_point(ev.box.center(), grid)
        if patch in seen_patches:
            continue
        seen_patches.add(patch)
        candidates.append((patch, token_pos))
    if not candidates:
        return PositivePairSet([])
    if len(candidates) <= count:
        return PositivePairSet(list(candidates))
    picks = rng.choice(len(candidates), size=count, replace=False)
    return PositivePairSet([candidates[int(i)] for i in sorted(picks)])


def pool_pairs(
    per_image: list[tuple[Tensor, Tensor, PositivePairSet]]
) -> tuple[Tensor, Tensor] | None:
    """Gather pair members across the batch into (vision_rows, aux_rows),
    aligned so row j of each matrix forms pooled pair j."""
    v_parts: list[Tensor] = []
    a_parts: list[Tensor] = []
    for vision_matrix, aux_matrix, pairs in per_image:
        if not pairs.pairs:
            continue
        vi = np.array([p[0] for p in pairs.pairs], dtype=np.intp)
        ai = np.array([p[1] for p in pairs.pairs], dtype=np.intp)
        v_parts.append(take_rows(vision_matrix, vi))
        a_parts.append(take_rows(aux_matrix, ai))
    if not v_parts:
        return None
    if len(v_parts) == 1:
        return v_parts[0], a_parts[0]
    return concat(v_parts, axis=0), concat(a_parts, axis=0)


def cl_loss(
    vision_rows: Tensor,
    aux_rows: Tensor,
    head: ProjectionHead,
    temperature: float,
) -> Tensor:
    """Mean per-pair contrastive loss over pooled pairs.

    vision_rows/aux_rows are (L, d) with row j of each forming pair j; the
    pooled stack is [vision 0..L-1, aux L..2L-1].
    """
    if vision_rows.shape != aux_rows.shape:
        raise ValueError(f"pair stacks differ: {vision_rows.shape} vs {aux_rows.shape}")
    pair_count = vision_rows.shape[0]
    if pair_count < 2:
        raise ValueError(f"need at least 2 pooled pairs, got {pair_count}")
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    stacked = concat([vision_rows, aux_rows], axis=0)
    projected = l2_normalize(project(stacked, head), eps=COSINE_EPS)
    cosines = matmul(projected, transpose(projected))
    scores = exp(mul(cosines, 1.0 / temperature))
    row_sums = tensor_sum(scores, axis=1)
    idx_i = np.arange(pair_count)
    idx_j = idx_i + pair_count
    s_ij = take_at(scores, idx_i, idx_j)
    s_ji = take_at(scores, idx_j, idx_i)
    s_ii = take_at(scores, idx_i, idx_i)
    s_jj = take_at(scores, idx_j, idx_j)
    denom = sub(sub(sub(add(take_rows(row_sums, idx_i), take_rows(row_sums, idx_j)), s_ii), s_jj), add(s_ij, s_ji))
    per_pair = neg(sub(log(mul(s_ij, 2.0)), log(denom)))
    return mean(per_pair)


def mean_positive_cosine(
    vision_rows: Tensor, aux_rows: Tensor, head: ProjectionHead
) -> float:
    """Mean cosine of the positive pairs in the projected space (diagnostic)."""
    pv = l2_normalize(project(vision_rows, head), eps=COSINE_EPS)
    pa = l2_normalize(project(aux_rows, head), eps=COSINE_EPS)
    return float(np.mean(np.sum(pv.data * pa.data, axis=-1)))
