import numpy as np
import pytest

from cream import tokenizer
from cream.imaging import Box, Canvas, variable_resolution_patchify
from cream.model import (
    AuxEncoding,
    DecoderOutput,
    ModelConfig,
    aux_embed_tokens,
    aux_encode,
    aux_tokenize,
    decode_lm,
    decode_prompter,
    encode_patch_matrix,
    greedy_generate,
    init_params,
    param_count,
    vision_encode,
)
from cream.numcore import ShapeError, Tensor
from cream.synthgen import FeatureEvidence, GenConfig, generate_kv_doc


MICRO = ModelConfig(
    width=16, common_dim=8, patch_size=4, patch_budget=32, max_aux_len=24,
    num_queries=4, lm_width=16, max_decode_len=64, vision_layers=1, aux_layers=1,
    decoder_layers=1, heads=2, lm_layers=1, lm_max_len=64, pairs_per_image=2,
)


def micro_setup(seed=0):
    params = init_params(MICRO, np.random.default_rng(seed))
    canvas = Canvas.blank(32, 16)
    rng = np.random.default_rng(seed + 1)
    canvas.pixels[:] = rng.random((16, 32))
    grid = variable_resolution_patchify(canvas, MICRO.patch_size, MICRO.patch_budget)
    evidence = [
        FeatureEvidence(Box(0.05, 0.05, 0.4, 0.4), "abc", "OCR"),
        FeatureEvidence(Box(0.5, 0.5, 0.9, 0.9), "de", "OBJECT"),
    ]
    return params, grid, evidence


# ---------------------------------------------------------------------------
# config

def test_reference_config_tuple():
    ref = ModelConfig.reference()
    assert (
        ref.cl_weight, ref.temperature, ref.width, ref.common_dim, ref.num_queries,
        ref.lm_width, ref.patch_budget, ref.max_aux_len, ref.pairs_per_image,
    ) == (0.5, 0.07, 1024, 128, 224, 4096, 3072, 300, 90)
    assert (ref.vision_layers, ref.aux_layers, ref.decoder_layers) == (18, 12, 12)


def test_toy_defaults_match_scaled_tuple():
    toy = ModelConfig.toy()
    assert (toy.cl_weight, toy.temperature) == (0.5, 0.07)
    assert (toy.width, toy.common_dim, toy.num_queries, toy.lm_width) == (64, 32, 8, 96)
    assert (toy.max_aux_len, toy.pairs_per_image) == (64, 8)


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(width=30, heads=4)
    with pytest.raises(ValueError, match="pairs_per_image"):
        ModelConfig(pairs_per_image=1)
    with pytest.raises(ValueError, match="temperature"):
        ModelConfig(temperature=0.0)


def test_param_count_regression_pin():
    assert param_count(ModelConfig.toy()) == 444070
    assert param_count(MICRO) == 32798


def test_decoder_output_materializes_exactly_one():
    h = Tensor(np.zeros((2, 3)))
    DecoderOutput(hidden=h, logits=h)
    DecoderOutput(hidden=h, prompt=h)
    with pytest.raises(ValueError):
        DecoderOutput(hidden=h)
    with pytest.raises(ValueError):
        DecoderOutput(hidden=h, logits=h, prompt=h)


# ---------------------------------------------------------------------------
# vision encoder

def test_vision_output_shape():
    params, grid, _ = micro_setup()
    enc = vision_encode(grid, params, MICRO)
    assert enc.matrix.shape == (grid.num_patches, MICRO.width)


def test_vision_budget_error():
    params, _, _ = micro_setup()
    canvas = Canvas.blank(128, 128)
    big = variable_resolution_patchify(canvas, 4, 64)
    cfg = ModelConfig(**{**MICRO.__dict__, "patch_budget": 16})
    with pytest.raises(ShapeError, match="budget"):
        vision_encode(big, params, cfg)


def test_vision_permutation_equivariance():
    params, grid, _ = micro_setup()
    rng = np.random.default_rng(2)
    g = grid.num_patches
    rb = rng.integers(0, MICRO.position_buckets, size=g)
    cb = rng.integers(0, MICRO.position_buckets, size=g)
    base = encode_patch_matrix(grid.patches, rb, cb, params, MICRO).data
    perm = rng.permutation(g)
    permuted = encode_patch_matrix(grid.patches[perm], rb[perm], cb[perm], params, MICRO).data
    assert np.allclose(permuted, base[perm], atol=1e-10)


def test_vision_positions_distinguish_identical_patches():
    params, _, _ = micro_setup()
    patches = np.tile(np.random.default_rng(3).random(16), (2, 1))
    out = encode_patch_matrix(patches, np.array([0, 5]), np.array([0, 7]), params, MICRO).data
    assert not np.allclose(out[0], out[1], atol=1e-6)


# ---------------------------------------------------------------------------
# auxiliary encoder

def test_aux_empty_evidence():
    params, _, _ = micro_setup()
    enc = aux_encode([], params, MICRO)
    assert enc.valid_len == 0
    assert enc.matrix.shape == (MICRO.max_aux_len, MICRO.width)
    assert enc.first_token_positions == {}


def test_aux_layout_and_first_tokens():
    params, _, evidence = micro_setup()
    enc = aux_encode(evidence, params, MICRO)
    # [SEP] a b c [SEP] d e -> valid 7
    assert enc.valid_len == 7
    assert enc.first_token_positions == {0: 1, 1: 5}
    assert enc.token_to_evidence[:7] == [0, 0, 0, 0, 1, 1, 1]
    assert enc.token_to_evidence[7] == -1


def test_aux_same_text_different_centers_differ_before_attention():
    params, _, _ = micro_setup()
    ev_a = [FeatureEvidence(Box(0.0, 0.0, 0.2, 0.2), "xy", "OCR")]
    ev_b = [FeatureEvidence(Box(0.7, 0.7, 0.95, 0.95), "xy", "OCR")]
    ids_a = aux_tokenize(ev_a, MICRO)
    ids_b = aux_tokenize(ev_b, MICRO)
    emb_a = aux_embed_tokens(ids_a[0], ids_a[1], ids_a[2], ids_a[3], params).data
    emb_b = aux_embed_tokens(ids_b[0], ids_b[1], ids_b[2], ids_b[3], params).data
    assert not np.allclose(emb_a[:3], emb_b[:3], atol=1e-6)


def test_aux_truncation_fits_budget():
    params, _, _ = micro_setup()
    evidence = [
        FeatureEvidence(Box(0.1 * i, 0.1, 0.1 * i + 0.05, 0.2), "abcdefgh", "OCR")
        for i in range(8)
    ]
    enc = aux_encode(evidence, params, MICRO)
    assert enc.valid_len <= MICRO.max_aux_len


def test_aux_pad_mask_keeps_valid_rows_stable():
    # same weights with a larger position table: extra pad slots must not
    # change the encoded valid rows
    params, _, evidence = micro_setup()
    small = ModelConfig(**{**MICRO.__dict__, "max_aux_len": 12})
    params_small = dict(params)
    params_small["aux.pos_seq"] = Tensor(params["aux.pos_seq"].data[:12].copy(), requires_grad=True)
    enc_small = aux_encode(evidence, params_small, small)
    enc_big = aux_encode(evidence, params, MICRO)
    v = enc_small.valid_len
    assert np.allclose(enc_small.matrix.data[:v], enc_big.matrix.data[:v], atol=1e-9)


# ---------------------------------------------------------------------------
# decoder (standalone)

def encode_all(params, grid, evidence):
    return vision_encode(grid, params, MICRO), aux_encode(evidence, params, MICRO)


def test_decode_lm_loss_near_log_vocab_at_init():
    losses = []
    for seed in range(20):
        params, grid, evidence = micro_setup(seed)
        venc, aenc = encode_all(params, grid, evidence)
        _, loss = decode_lm(
            tokenizer.encode("q?"), tokenizer.encode("ans"), venc, aenc, False, params, MICRO
        )
        losses.append(loss.item())
    assert abs(np.mean(losses) - np.log(262)) < 0.3


def test_decode_lm_causality_exact():
    params, grid, evidence = micro_setup(4)
    venc, aenc = encode_all(params, grid, evidence)
    t1 = tokenizer.encode("abcdef")
    t2 = t1[:3] + tokenizer.encode("XYZ")
    logits1, _ = decode_lm(tokenizer.encode("p"), t1, venc, aenc, False, params, MICRO)
    venc2, aenc2 = encode_all(params, grid, evidence)
    logits2, _ = decode_lm(tokenizer.encode("p"), t2, venc2, aenc2, False, params, MICRO)
    cut = 1 + 1 + 1 + 3  # BOS + prompt + SEP + shared target prefix
    assert logits1.data[:cut].tobytes() == logits2.data[:cut].tobytes()


def test_decode_lm_aux_masked_ignores_aux_values():
    params, grid, evidence = micro_setup(5)
    venc, _ = encode_all(params, grid, evidence)
    fake1 = AuxEncoding(Tensor(np.random.default_rng(1).random((MICRO.max_aux_len, MICRO.width))),
                        MICRO.max_aux_len, [-1] * MICRO.max_aux_len, {})
    fake2 = AuxEncoding(Tensor(np.random.default_rng(2).random((MICRO.max_aux_len, MICRO.width))),
                        MICRO.max_aux_len, [-1] * MICRO.max_aux_len, {})
    prompt, target = tokenizer.encode("p"), tokenizer.encode("tgt")
    logits1, loss1 = decode_lm(prompt, target, venc, fake1, True, params, MICRO)
    venc2 = vision_encode(grid, params, MICRO)
    logits2, loss2 = decode_lm(prompt, target, venc2, fake2, True, params, MICRO)
    assert logits1.data.tobytes() == logits2.data.tobytes()
    assert loss1.item() == loss2.item()


def test_decode_lm_loss_over_target_positions_only():
    params, grid, evidence = micro_setup(6)
    venc, aenc = encode_all(params, grid, evidence)
    prompt, target = tokenizer.encode("what?"), tokenizer.encode("ans")
    logits, loss = decode_lm(prompt, target, venc, aenc, False, params, MICRO)
    start = 1 + len(prompt)
    rows = logits.data[start : start + len(target) + 1]
    labels = target + [tokenizer.EOS]
    lse = np.log(np.exp(rows - rows.max(-1, keepdims=True)).sum(-1)) + rows.max(-1)
    expected = float(np.mean(lse - rows[np.arange(len(labels)), labels]))
    assert abs(loss.item() - expected) < 1e-12


def test_decode_lm_errors():
    params, grid, evidence = micro_setup(7)
    venc, aenc = encode_all(params, grid, evidence)
    with pytest.raises(ValueError, match="empty target"):
        decode_lm([71], [], venc, aenc, False, params, MICRO)
    with pytest.raises(ValueError, match="max_decode_len"):
        decode_lm([71] * 100, [71], venc, aenc, False, params, MICRO)


def test_greedy_generate_empty_and_deterministic():
    params, grid, evidence = micro_setup(8)
    venc, aenc = encode_all(params, grid, evidence)
    assert greedy_generate([71], venc, aenc, False, 0, params, MICRO) == ""
    a = greedy_generate([71], venc, aenc, False, 8, params, MICRO)
    b = greedy_generate([71], venc, aenc, False, 8, params, MICRO)
    assert a == b


def test_model_outputs_finite_across_seeds():
    for seed in range(100):
        params, grid, evidence = micro_setup(seed)
        venc, aenc = encode_all(params, grid, evidence)
        _, loss = decode_lm([71], [72, 73], venc, aenc, seed % 2 == 0, params, MICRO)
        assert np.isfinite(loss.item())


# ---------------------------------------------------------------------------
# decoder (prompter)

def test_prompter_shape_constant():
    params, grid, evidence = micro_setup(9)
    venc, aenc = encode_all(params, grid, evidence)
    for qlen in (0, 3, 17):
        out = decode_prompter([71] * qlen, venc, aenc, params, MICRO)
        assert out.shape == (MICRO.num_queries, MICRO.lm_width)


def test_prompter_bidirectional_flow():
    params, grid, evidence = micro_setup(10)
    venc, aenc = encode_all(params, grid, evidence)
    q1 = tokenizer.encode("hello")
    q2 = q1[:-1] + tokenizer.encode("Z")
    out1 = decode_prompter(q1, venc, aenc, params, MICRO).data
    venc2, aenc2 = encode_all(params, grid, evidence)
    out2 = decode_prompter(q2, venc2, aenc2, params, MICRO).data
    assert not np.allclose(out1[0], out2[0], atol=1e-9)


def test_prompter_zero_projection():
    params, grid, evidence = micro_setup(11)
    params["prompter.proj_u"] = Tensor(
        np.zeros_like(params["prompter.proj_u"].data), requires_grad=True
    )
    venc, aenc = encode_all(params, grid, evidence)
    out = decode_prompter([71, 72], venc, aenc, params, MICRO)
    assert np.all(out.data == 0.0)
