"""The network: vision encoder over patches, auxiliary encoder over feature
evidence, and a decoder that cross-attends to both.

The decoder runs in two modes: standalone language modeling (causal self
attention, prompt delivered as a decoder prefix with loss masked on it) and
prompting (bi-directional self attention over k learned queries plus the
user query, exporting the k query rows through the projection U).

All forward helpers accept either a single sequence (m, d) or a batch
(B, m, d); the training loop drives the batched path, the public ops wrap a
batch of one. Parameters live in a flat name -> Tensor dict; forward passes
over frozen parameters are thread-safe, tape-bearing passes are
single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tokenizer
from .imaging import PatchGrid
from .numcore import (
    ShapeError,
    Tensor,
    add,
    concat,
    cross_entropy,
    gelu,
    layer_norm,
    matmul,
    scaled_dot_product_attention,
    take_rows,
    transpose,
)
from .synthgen import OBJECT, FeatureEvidence

NEG_INF = -1e9
IGNORE_INDEX = -1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; the defaults are the desk-scale config."""

    width: int = 64  # encoder/decoder hidden size
    common_dim: int = 32  # contrastive common-space size
    vocab_size: int = tokenizer.VOCAB_SIZE
    patch_size: int = 8
    patch_budget: int = 128  # max patches per image
    max_aux_len: int = 64  # auxiliary token positions
    num_queries: int = 8  # learned queries == soft prompt length
    lm_width: int = 96  # frozen LM hidden size
    max_decode_len: int = 192
    vision_layers: int = 2
    aux_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    position_buckets: int = 100
    temperature: float = 0.07
    cl_weight: float = 0.5
    pairs_per_image: int = 8
    lm_layers: int = 2
    lm_max_len: int = 192

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.pairs_per_image < 2:
            raise ValueError("pairs_per_image must be >= 2")
        if self.num_queries < 1:
            raise ValueError("num_queries must be >= 1")
        for name in (
            "width", "common_dim", "vocab_size", "patch_size", "patch_budget",
            "max_aux_len", "lm_width", "max_decode_len", "vision_layers",
            "aux_layers", "decoder_layers", "heads", "position_buckets",
            "lm_layers", "lm_max_len",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def reference(cls) -> "ModelConfig":
        """Full-scale configuration: (lambda, tau, d, d*, k, d', n, n_hat, l)
        = (0.5, 0.07, 1024, 128, 224, 4096, 3072, 300, 90), with 18/12/12
        encoder/encoder/decoder layers and 14-px patches."""
        return cls(
            width=1024,
            common_dim=128,
            num_queries=224,
            lm_width=4096,
            patch_budget=3072,
            max_aux_len=300,
            pairs_per_image=90,
            temperature=0.07,
            cl_weight=0.5,
            patch_size=14,
            vision_layers=18,
            aux_layers=12,
            decoder_layers=12,
            heads=16,
            max_decode_len=512,
            lm_max_len=512,
        )


@dataclass
class VisionEncoding:
    matrix: Tensor  # (num_patches, width)
    grid: PatchGrid


@dataclass
class AuxEncoding:
    matrix: Tensor  # (max_aux_len, width); pad rows are attention-masked
    valid_len: int
    token_to_evidence: list[int]  # -1 for pad slots
    first_token_positions: dict[int, int]  # evidence index -> token position


@dataclass
class DecoderOutput:
    hidden: Tensor
    logits: Tensor | None = None
    prompt: Tensor | None = None

    def __post_init__(self):
        if (self.logits is None) == (self.prompt is None):
            raise ValueError("exactly one of logits/prompt must be materialized")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor's shape, keyed by name (a pure function of the
    config; also the checkpoint record inventory)."""
    d = config.width
    b = config.position_buckets
    shapes: dict[str, tuple[int, ...]] = {}

    def block(prefix: str, cross: bool):
        for ln in ("ln1", "ln_x", "ln2") if cross else ("ln1", "ln2"):
            shapes[f"{prefix}.{ln}.g"] = (d,)
            shapes[f"{prefix}.{ln}.b"] = (d,)
        attns = ("attn", "xattn") if cross else ("attn",)
        for a in attns:
            for w in ("wq", "wk", "wv", "wo"):
                shapes[f"{prefix}.{a}.{w}"] = (d, d)
            for bb in ("bq", "bk", "bv", "bo"):
                shapes[f"{prefix}.{a}.{bb}"] = (d,)
        shapes[f"{prefix}.mlp.w1"] = (d, 4 * d)
        shapes[f"{prefix}.mlp.b1"] = (4 * d,)
        shapes[f"{prefix}.mlp.w2"] = (4 * d, d)
        shapes[f"{prefix}.mlp.b2"] = (d,)

    shapes["vision.patch_proj.w"] = (config.patch_size**2, d)
    shapes["vision.patch_proj.b"] = (d,)
    shapes["vision.pos_row"] = (b, d)
    shapes["vision.pos_col"] = (b, d)
    for i in range(config.vision_layers):
        block(f"vision.blocks.{i}", cross=False)
    shapes["vision.ln_out.g"] = (d,)
    shapes["vision.ln_out.b"] = (d,)

    shapes["aux.tok_emb"] = (config.vocab_size, d)
    shapes["aux.type_emb"] = (2, d)
    shapes["aux.pos_x"] = (b, d)
    shapes["aux.pos_y"] = (b, d)
    shapes["aux.pos_seq"] = (config.max_aux_len, d)
    for i in range(config.aux_layers):
        block(f"aux.blocks.{i}", cross=False)
    shapes["aux.ln_out.g"] = (d,)
    shapes["aux.ln_out.b"] = (d,)

    shapes["dec.tok_emb"] = (config.vocab_size, d)
    shapes["dec.pos"] = (config.num_queries + config.max_decode_len, d)
    for i in range(config.decoder_layers):
        block(f"dec.blocks.{i}", cross=True)
    shapes["dec.ln_out.g"] = (d,)
    shapes["dec.ln_out.b"] = (d,)
    shapes["dec.head.w"] = (d, config.vocab_size)
    shapes["dec.head.b"] = (config.vocab_size,)

    shapes["prompter.queries"] = (config.num_queries, d)
    shapes["prompter.proj_u"] = (d, config.lm_width)

    shapes["cl.proj.w1"] = (d, d)
    shapes["cl.proj.b1"] = (d,)
    shapes["cl.proj.w2"] = (d, config.common_dim)
    shapes["cl.proj.b2"] = (config.common_dim,)
    return shapes


def init_params(
    config: ModelConfig, rng: np.random.Generator, dtype=np.float64
) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            data = np.ones(shape, dtype=dtype)
        elif leaf.startswith("b"):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = (0.02 * rng.standard_normal(shape)).astype(dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for shape in param_shapes(config).values())


# ---------------------------------------------------------------------------
# shared transformer machinery (leading batch dims optional)

def _linear(x: Tensor, params, prefix: str) -> Tensor:
    return add(matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def _ln(x: Tensor, params, prefix: str) -> Tensor:
    return add(layer_norm(x) * params[f"{prefix}.g"], params[f"{prefix}.b"])


def _split_heads(t: Tensor, heads: int) -> Tensor:
    *lead, m, d = t.shape
    t = t.reshape((*lead, m, heads, d // heads))
    n = len(lead)
    return transpose(t, (*range(n), n + 1, n, n + 2))


def _merge_heads(t: Tensor) -> Tensor:
    *lead, h, m, dh = t.shape
    n = len(lead)
    t = transpose(t, (*range(n), n + 1, n, n + 2))
    return t.reshape((*lead, m, h * dh))


def _attention(x_q: Tensor, x_kv: Tensor, params, prefix: str, mask, heads: int) -> Tensor:
    q = add(matmul(x_q, params[f"{prefix}.wq"]), params[f"{prefix}.bq"])
    k = add(matmul(x_kv, params[f"{prefix}.wk"]), params[f"{prefix}.bk"])
    v = add(matmul(x_kv, params[f"{prefix}.wv"]), params[f"{prefix}.bv"])
    out = scaled_dot_product_attention(
        _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads), mask
    )
    return add(matmul(_merge_heads(out), params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def _mlp(x: Tensor, params, prefix: str) -> Tensor:
    h = gelu(add(matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return add(matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _encoder_block(x: Tensor, params, prefix: str, mask, heads: int) -> Tensor:
    h = _ln(x, params, f"{prefix}.ln1")
    x = add(x, _attention(h, h, params, f"{prefix}.attn", mask, heads))
    h = _ln(x, params, f"{prefix}.ln2")
    return add(x, _mlp(h, params, f"{prefix}.mlp"))


def _decoder_block(
    x: Tensor, memory: Tensor, params, prefix: str, self_mask, mem_mask, heads: int
) -> Tensor:
    h = _ln(x, params, f"{prefix}.ln1")
    x = add(x, _attention(h, h, params, f"{prefix}.attn", self_mask, heads))
    h = _ln(x, params, f"{prefix}.ln_x")
    x = add(x, _attention(h, memory, params, f"{prefix}.xattn", mem_mask, heads))
    h = _ln(x, params, f"{prefix}.ln2")
    return add(x, _mlp(h, params, f"{prefix}.mlp"))


def _causal_mask(m: int, dtype) -> Tensor:
    return Tensor(np.triu(np.full((m, m), NEG_INF, dtype=dtype), k=1))


# ---------------------------------------------------------------------------
# vision encoder

def _bucket(fraction: np.ndarray, buckets: int) -> np.ndarray:
    return np.minimum((fraction * buckets).astype(np.intp), buckets - 1)


def encode_patch_matrix(
    patch_vectors: np.ndarray,
    row_buckets: np.ndarray,
    col_buckets: np.ndarray,
    params,
    config: ModelConfig,
) -> Tensor:
    """Project patch vectors (..., g, p*p) and run the encoder stack."""
    dtype = params["vision.patch_proj.w"].data.dtype
    x = add(
        matmul(Tensor(patch_vectors.astype(dtype)), params["vision.patch_proj.w"]),
        params["vision.patch_proj.b"],
    )
    x = add(x, take_rows(params["vision.pos_row"], row_buckets))
    x = add(x, take_rows(params["vision.pos_col"], col_buckets))
    for i in range(config.vision_layers):
        x = _encoder_block(x, params, f"vision.blocks.{i}", None, config.heads)
    return _ln(x, params, "vision.ln_out")


def _grid_buckets(grid: PatchGrid, config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(grid.num_patches)
    rb = _bucket((idx // grid.cols) / grid.rows, config.position_buckets)
    cb = _bucket((idx % grid.cols) / grid.cols, config.position_buckets)
    return rb, cb


def vision_encode_batch(grids: list[PatchGrid], params, config: ModelConfig) -> Tensor:
    """Encode same-shape grids together; returns (B, num_patches, width)."""
    first = grids[0]
    for g in grids:
        if g.num_patches > config.patch_budget:
            raise ShapeError(f"grid {g.rows}x{g.cols} exceeds the patch budget {config.patch_budget}")
        if (g.rows, g.cols) != (first.rows, first.cols):
            raise ShapeError("vision_encode_batch requires a uniform grid shape")
    rb, cb = _grid_buckets(first, config)
    stack = np.stack([g.patches for g in grids])
    return encode_patch_matrix(stack, rb, cb, params, config)


def vision_encode(grid: PatchGrid, params, config: ModelConfig) -> VisionEncoding:
    if grid.num_patches > config.patch_budget:
        raise ShapeError(f"grid {grid.rows}x{grid.cols} exceeds the patch budget {config.patch_budget}")
    rb, cb = _grid_buckets(grid, config)
    return VisionEncoding(encode_patch_matrix(grid.patches, rb, cb, params, config), grid)


# ---------------------------------------------------------------------------
# auxiliary encoder

def aux_tokenize(
    evidence: list[FeatureEvidence], config: ModelConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int, list[int], dict[int, int]]:
    """Lay evidence out as [SEP] + text tokens per item, truncated to fit."""
    n = config.max_aux_len
    ids = np.full(n, tokenizer.PAD, dtype=np.intp)
    types = np.zeros(n, dtype=np.intp)
    xb = np.zeros(n, dtype=np.intp)
    yb = np.zeros(n, dtype=np.intp)
    tok2ev = [-1] * n
    first: dict[int, int] = {}
    pos = 0
    for ev_idx, ev in enumerate(evidence):
        text_ids = tokenizer.encode_evidence_text(ev.text)
        if pos + 2 > n:
            break
        take = min(len(text_ids), n - pos - 1)
        cx, cy = ev.box.center()
        bx = min(int(cx * config.position_buckets), config.position_buckets - 1)
        by = min(int(cy * config.position_buckets), config.position_buckets - 1)
        span = [tokenizer.SEP] + text_ids[:take]
        for offset, tid in enumerate(span):
            ids[pos + offset] = tid
            types[pos + offset] = 1 if ev.kind == OBJECT else 0
            xb[pos + offset] = bx
            yb[pos + offset] = by
            tok2ev[pos + offset] = ev_idx
        first[ev_idx] = pos + 1
        pos += len(span)
    return ids, types, xb, yb, pos, tok2ev, first


def aux_embed_tokens(ids, types, xb, yb, params) -> Tensor:
    """Pre-attention token embedding: byte/subword + type + box-center x/y
    buckets + sequence position."""
    x = take_rows(params["aux.tok_emb"], ids)
    x = add(x, take_rows(params["aux.type_emb"], types))
    x = add(x, take_rows(params["aux.pos_x"], xb))
    x = add(x, take_rows(params["aux.pos_y"], yb))
    return add(x, params["aux.pos_seq"])


def aux_encode_batch(
    evidence_lists: list[list[FeatureEvidence]], params, config: ModelConfig
) -> tuple[Tensor, list[AuxEncoding]]:
    """Encode a batch of evidence lists; returns ((B, n, d), per-sample metadata).

    The metadata rows carry tape-tracked (n, d) slices of the batch matrix."""
    n = config.max_aux_len
    batch = len(evidence_lists)
    ids = np.empty((batch, n), dtype=np.intp)
    types = np.empty((batch, n), dtype=np.intp)
    xb = np.empty((batch, n), dtype=np.intp)
    yb = np.empty((batch, n), dtype=np.intp)
    valid_lens: list[int] = []
    tok2evs: list[list[int]] = []
    firsts: list[dict[int, int]] = []
    for i, evidence in enumerate(evidence_lists):
        ids[i], types[i], xb[i], yb[i], valid, tok2ev, first = aux_tokenize(evidence, config)
        valid_lens.append(valid)
        tok2evs.append(tok2ev)
        firsts.append(first)
    x = aux_embed_tokens(ids, types, xb, yb, params)
    dtype = x.data.dtype
    key_mask = np.zeros((batch, 1, 1, n), dtype=dtype)
    for i, valid in enumerate(valid_lens):
        key_mask[i, :, :, valid:] = NEG_INF
    mask = Tensor(key_mask)
    for i in range(config.aux_layers):
        x = _encoder_block(x, params, f"aux.blocks.{i}", mask, config.heads)
    x = _ln(x, params, "aux.ln_out")
    metas = [
        AuxEncoding(x[i], valid_lens[i], tok2evs[i], firsts[i]) for i in range(batch)
    ]
    return x, metas


def aux_encode(evidence: list[FeatureEvidence], params, config: ModelConfig) -> AuxEncoding:
    _, metas = aux_encode_batch([evidence], params, config)
    return metas[0]


# ---------------------------------------------------------------------------
# decoder

def lm_input_ids(prompt_ids: list[int], target_ids: list[int]) -> tuple[list[int], np.ndarray]:
    """Teacher-forcing frame: input BOS+prompt+SEP+target; labels shift by
    one, prompt/framing positions carry the ignore index, and the final
    target position predicts EOS."""
    ids = [tokenizer.BOS] + list(prompt_ids) + [tokenizer.SEP] + list(target_ids)
    labels = np.full(len(ids), IGNORE_INDEX, dtype=np.intp)
    start = 1 + len(prompt_ids)  # SEP position predicts the first target token
    labels[start : start + len(target_ids)] = target_ids
    labels[start + len(target_ids)] = tokenizer.EOS
    return ids, labels


def memory_mask_row(aux_valid_len: int, vision_len: int, aux_len: int, aux_masked: bool, dtype) -> np.ndarray:
    row = np.zeros(vision_len + aux_len, dtype=dtype)
    if aux_masked:
        row[vision_len:] = NEG_INF
    else:
        row[vision_len + aux_valid_len :] = NEG_INF
    return row


def decode_frames_batch(
    id_rows: list[list[int]],
    vision_batch: Tensor,
    aux_batch: Tensor,
    aux_metas: list[AuxEncoding],
    aux_masked_flags: list[bool],
    params,
    config: ModelConfig,
) -> Tensor:
    """Causal decode of right-padded id rows against per-sample memories.

    Returns logits (B, max_len, vocab). Pad positions produce logits that
    callers must mask out via ignore-index labels."""
    batch = len(id_rows)
    longest = max(len(r) for r in id_rows)
    if longest > config.max_decode_len:
        raise ValueError(
            f"decode: sequence length {longest} exceeds max_decode_len {config.max_decode_len}"
        )
    ids = np.full((batch, longest), tokenizer.PAD, dtype=np.intp)
    for i, row in enumerate(id_rows):
        ids[i, : len(row)] = row
    x = take_rows(params["dec.tok_emb"], ids)
    x = add(x, take_rows(params["dec.pos"], np.arange(longest)))
    dtype = x.data.dtype
    memory = concat([vision_batch, aux_batch], axis=1)
    vision_len = vision_batch.shape[1]
    aux_len = aux_batch.shape[1]
    mem_mask = np.zeros((batch, 1, 1, vision_len + aux_len), dtype=dtype)
    for i, meta in enumerate(aux_metas):
        mem_mask[i, 0, 0] = memory_mask_row(meta.valid_len, vision_len, aux_len, aux_masked_flags[i], dtype)
    self_mask = _causal_mask(longest, dtype)
    for i in range(config.decoder_layers):
        x = _decoder_block(
            x, memory, params, f"dec.blocks.{i}", self_mask, Tensor(mem_mask), config.heads
        )
    return _linear(_ln(x, params, "dec.ln_out"), params, "dec.head")


def _single_memory(vision: VisionEncoding, aux: AuxEncoding) -> tuple[Tensor, Tensor]:
    v3 = vision.matrix.reshape((1, *vision.matrix.shape))
    a3 = aux.matrix.reshape((1, *aux.matrix.shape))
    return v3, a3


def decode_lm(
    prompt_ids: list[int],
    target_ids: list[int],
    vision: VisionEncoding,
    aux: AuxEncoding,
    aux_masked: bool,
    params,
    config: ModelConfig,
) -> tuple[Tensor, Tensor]:
    """Teacher-forced decode; returns (logits, mean loss over target positions)."""
    if not target_ids:
        raise ValueError("decode_lm: empty target")
    ids, labels = lm_input_ids(prompt_ids, target_ids)
    v3, a3 = _single_memory(vision, aux)
    logits3 = decode_frames_batch([ids], v3, a3, [aux], [aux_masked], params, config)
    logits = logits3[0]
    loss = cross_entropy(logits, labels, ignore_index=IGNORE_INDEX)
    return logits, loss


def greedy_generate(
    prompt_ids: list[int],
    vision: VisionEncoding,
    aux: AuxEncoding,
    aux_masked: bool,
    max_len: int,
    params,
    config: ModelConfig,
) -> str:
    """Deterministic greedy decoding until EOS or max_len tokens."""
    seq = [tokenizer.BOS] + list(prompt_ids) + [tokenizer.SEP]
    v3, a3 = _single_memory(vision, aux)
    out: list[int] = []
    while len(out) < max_len and len(seq) < config.max_decode_len:
        logits3 = decode_frames_batch([seq], v3, a3, [aux], [aux_masked], params, config)
        tok = int(np.argmax(logits3.data[0, -1]))
        if tok == tokenizer.EOS:
            break
        out.append(tok)
        seq.append(tok)
    return tokenizer.decode(out)


def decode_prompter(
    query_ids: list[int],
    vision: VisionEncoding,
    aux: AuxEncoding,
    params,
    config: ModelConfig,
) -> Tensor:
    """Bi-directional decode of [learned queries] + [query tokens]; returns
    the soft prompt h' = h[:k] @ U with shape (num_queries, lm_width)."""
    total = config.num_queries + len(query_ids)
    if total > params["dec.pos"].shape[0]:
        raise ValueError(f"decode_prompter: sequence length {total} exceeds position table")
    parts = [params["prompter.queries"]]
    if query_ids:
        parts.append(take_rows(params["dec.tok_emb"], np.asarray(query_ids, dtype=np.intp)))
    x = parts[0] if len(parts) == 1 else concat(parts, axis=0)
    x = add(x, take_rows(params["dec.pos"], np.arange(total)))
    dtype = x.data.dtype
    memory = concat([vision.matrix, aux.matrix], axis=0)
    vision_len = vision.matrix.shape[0]
    mem_mask = Tensor(
        memory_mask_row(aux.valid_len, vision_len, aux.matrix.shape[0], False, dtype)[None, :]
    )
    for i in range(config.decoder_layers):
        x = _decoder_block(x, memory, params, f"dec.blocks.{i}", None, mem_mask, config.heads)
    h = _ln(x, params, "dec.ln_out")
    queries_h = h[: config.num_queries]
    return matmul(queries_h, params["prompter.proj_u"])
