"""Feature-space diagnostics: PCA of the contrastive common space and cosine
similarity histograms with a zero-mean Gaussian variance fit.

Dumps default to projected (common-space) embeddings of the pair-candidate
rows — the evidence-center patches and first evidence tokens the alignment
objective acts on; `raw=True` dumps encoder-space rows instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contrastive import ProjectionHead, build_positive_pairs, project
from .imaging import variable_resolution_patchify
from .model import ModelConfig, aux_encode, vision_encode
from .numcore import Tensor
from .synthgen import SynthDoc

VISION = "vision"
AUXILIARY = "auxiliary"


@dataclass
class EmbeddingDump:
    matrix: np.ndarray  # (rows, dim)
    modality: list[str]  # per-row tag: vision | auxiliary
    doc_ids: list[str]

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.modality) or len(self.modality) != len(self.doc_ids):
            raise ValueError("dump rows, modality tags, and doc ids must align")


@dataclass
class PcaResult:
    components: np.ndarray  # (c, dim)
    explained_variance: np.ndarray  # (c,)
    explained_ratio: np.ndarray  # (c,)
    projected: np.ndarray  # (rows, c)
    rank_deficient: bool


def collect_embedding_dump(
    params, config: ModelConfig, docs: list[SynthDoc], raw: bool = False
) -> EmbeddingDump:
    """Pair-candidate rows from both encoders, projected unless raw."""
    head = ProjectionHead.from_params(params)
    rows: list[np.ndarray] = []
    modality: list[str] = []
    doc_ids: list[str] = []
    rng = np.random.default_rng(0)
    for doc in docs:
        grid = variable_resolution_patchify(doc.canvas, config.patch_size, config.patch_budget)
        venc = vision_encode(grid, params, config)
        aenc = aux_encode(doc.evidence, params, config)
        pairs = build_positive_pairs(doc.evidence, grid, aenc, len(doc.evidence), rng)
        if not pairs.pairs:
            continue
        vi = np.array([p[0] for p in pairs.pairs], dtype=np.intp)
        ai = np.array([p[1] for p in pairs.pairs], dtype=np.intp)
        v_rows = venc.matrix.data[vi]
        a_rows = aenc.matrix.data[ai]
        if not raw:
            v_rows = project(Tensor(v_rows), head).data
            a_rows = project(Tensor(a_rows), head).data
        for r in v_rows:
            rows.append(r)
            modality.append(VISION)
            doc_ids.append(doc.doc_id)
        for r in a_rows:
            rows.append(r)
            modality.append(AUXILIARY)
            doc_ids.append(doc.doc_id)
    matrix = np.vstack(rows) if rows else np.zeros((0, config.common_dim))
    return EmbeddingDump(matrix, modality, doc_ids)


def _power_component(cov: np.ndarray, tol: float = 1e-13, max_iter: int = 50_000) -> tuple[np.ndarray, float]:
    dim = cov.shape[0]
    v = np.full(dim, 1.0 / np.sqrt(dim))
    value = 0.0
    for _ in range(max_iter):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        w /= norm
        delta = np.linalg.norm(w - v * np.sign(v @ w))
        v = w
        value = float(v @ cov @ v)
        if delta < tol:
            break
    return v, value


def pca_components(dump: EmbeddingDump, count: int) -> PcaResult:
    """Top components of the row covariance via deflated power iteration.

    Sign convention: each component's largest-magnitude entry is positive.
    Rank-deficient data returns the available components with a flag."""
    rows, dim = dump.matrix.shape
    if rows < count:
        raise ValueError(f"need at least {count} rows, got {rows}")
    if count > dim:
        raise ValueError(f"component count {count} exceeds dimension {dim}")
    centered = dump.matrix - dump.matrix.mean(axis=0, keepdims=True)
    cov = (centered.T @ centered) / max(rows - 1, 1)
    total_var = float(np.trace(cov))
    threshold = max(total_var, 1.0) * 1e-12
    components: list[np.ndarray] = []
    variances: list[float] = []
    deflated = cov.copy()
    rank_deficient = False
    for _ in range(count):
        v, value = _power_component(deflated)
        if value <= threshold:
            rank_deficient = True
            break
        pivot = int(np.argmax(np.abs(v)))
        if v[pivot] < 0:
            v = -v
        components.append(v)
        variances.append(value)
        deflated = deflated - value * np.outer(v, v)
    comp = np.vstack(components) if components else np.zeros((0, dim))
    var = np.array(variances)
    ratio = var / total_var if total_var > 0 else np.zeros_like(var)
    return PcaResult(comp, var, ratio, centered @ comp.T, rank_deficient)


def cosine_histogram(
    dump: EmbeddingDump,
    sample_pairs: int,
    bins: int,
    rng: np.random.Generator,
    modality_filter: str | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Histogram of cosines between uniformly sampled distinct rows.

    Returns (bin_edges over [-1, 1], counts, fitted zero-mean Gaussian
    variance = mean squared cosine). `modality_filter`: None mixes all rows;
    "within" samples both rows from one modality; "cross" samples one row
    from each."""
    tags = np.array(dump.modality)
    if modality_filter is None:
        pool_a = pool_b = np.arange(dump.matrix.shape[0])
    elif modality_filter == "cross":
        pool_a = np.flatnonzero(tags == VISION)
        pool_b = np.flatnonzero(tags == AUXILIARY)
    elif modality_filter == "within":
        pool_a = pool_b = None  # chosen per draw
    else:
        raise ValueError(f"unknown modality filter {modality_filter!r}")
    if dump.matrix.shape[0] < 2:
        raise ValueError("need at least 2 rows to sample pairs")
    norms = np.linalg.norm(dump.matrix, axis=1)
    unit = dump.matrix / np.maximum(norms, 1e-12)[:, None]
    cosines = np.empty(sample_pairs)
    n = 0
    while n < sample_pairs:
        if modality_filter == "within":
            tag = VISION if rng.random() < 0.5 else AUXILIARY
            pool = np.flatnonzero(tags == tag)
            if len(pool) < 2:
                pool = np.arange(dump.matrix.shape[0])
            i, j = pool[rng.choice(len(pool), size=2, replace=False)]
        else:
            i = pool_a[int(rng.integers(len(pool_a)))]
            j = pool_b[int(rng.integers(len(pool_b)))]
            if i == j:
                continue
        cosines[n] = float(unit[int(i)] @ unit[int(j)])
        n += 1
    counts, edges = np.histogram(cosines, bins=bins, range=(-1.0, 1.0))
    variance = float(np.mean(cosines**2))
    return edges, counts, variance


def pca_csv(dump: EmbeddingDump, result: PcaResult) -> str:
    width = result.projected.shape[1]
    header = "row,doc_id,modality," + ",".join(f"c{i + 1}" for i in range(width))
    lines = [header]
    for i in range(result.projected.shape[0]):
        coords = ",".join(repr(float(x)) for x in result.projected[i])
        lines.append(f"{i},{dump.doc_ids[i]},{dump.modality[i]},{coords}")
    return "\n".join(lines) + "\n"


def histogram_csv(edges: np.ndarray, counts: np.ndarray) -> str:
    lines = ["bin_left,bin_right,count"]
    for i, c in enumerate(counts):
        lines.append(f"{float(edges[i])!r},{float(edges[i + 1])!r},{int(c)}")
    return "\n".join(lines) + "\n"
