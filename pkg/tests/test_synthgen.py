import numpy as np
import pytest

from cream import tokenizer
from cream.synthgen import (
    DEFAULT_PROMPT_BANK,
    GenConfig,
    OBJECT,
    OCR,
    apply_ocr_noise,
    generate_kv_doc,
    make_task_samples,
    word_list,
)


def make_doc(seed=0, **overrides):
    cfg = GenConfig(seed=seed, **overrides)
    return generate_kv_doc(cfg, np.random.default_rng(seed))


def test_word_list_shape():
    words = word_list()
    assert len(words) == 1000
    assert len(set(words)) == 1000
    assert all(w.islower() and w.isascii() and len(w) <= 6 for w in words)


def test_field_count_evidence_and_qa():
    doc = make_doc(seed=5, min_fields=3, max_fields=3, table_prob=0.0, object_prob=0.0)
    ocr = [ev for ev in doc.evidence if ev.kind == OCR]
    assert len(ocr) == 6  # 3 keys + 3 values
    assert len(doc.qa) == 3


def test_same_seed_bit_identical():
    a = make_doc(seed=9)
    b = make_doc(seed=9)
    assert a.canvas.pixels.tobytes() == b.canvas.pixels.tobytes()
    assert a.evidence == b.evidence
    assert a.qa == b.qa and a.caption == b.caption and a.reading_text == b.reading_text


def test_reading_text_is_raster_join():
    for seed in range(10):
        doc = make_doc(seed=seed)
        assert doc.reading_text == " ".join(ev.text for ev in doc.evidence if ev.kind == OCR)
        order = [(ev.box.y0, ev.box.x0) for ev in doc.evidence]
        assert order == sorted(order)


def test_no_evidence_boxes_overlap():
    for seed in range(40):
        doc = make_doc(seed=seed, table_prob=0.5, object_prob=0.5)
        boxes = [ev.box for ev in doc.evidence]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                assert boxes[i].intersection_area(boxes[j]) == 0.0, f"seed {seed}: {i} vs {j}"


def test_qa_answers_unique_and_rendered():
    for seed in range(15):
        doc = make_doc(seed=seed, table_prob=0.4)
        for _, answer in doc.qa:
            holders = [ev for ev in doc.evidence if ev.kind == OCR and ev.text == answer]
            assert len(holders) == 1
            box = holders[0].box
            x0, x1 = round(box.x0 * doc.canvas.width), round(box.x1 * doc.canvas.width)
            y0, y1 = round(box.y0 * doc.canvas.height), round(box.y1 * doc.canvas.height)
            assert np.any(doc.canvas.pixels[y0:y1, x0:x1] == 0.0)  # ink present, unoccluded


def test_caption_mentions_first_keys():
    doc = make_doc(seed=3, min_fields=4, max_fields=4)
    keys = [q[len("What is the value of ") : -1] for q, _ in doc.qa]
    assert doc.caption.startswith("a document with 4 fields including ")
    for key in keys[:3]:
        assert key in doc.caption


# ---------------------------------------------------------------------------
# noise model

def _flat_evidence(count):
    from cream.imaging import Box
    from cream.synthgen import FeatureEvidence

    out = []
    for i in range(count):
        x0 = (i % 50) / 51
        y0 = (i // 50) / (count / 50 + 2)
        out.append(FeatureEvidence(Box(x0, y0, x0 + 0.01, y0 + 0.01), "word", OCR))
    return out


def test_noise_identity():
    doc = make_doc(seed=1)
    out = apply_ocr_noise(doc.evidence, 0.0, 0.0, np.random.default_rng(0))
    assert out == doc.evidence


def test_noise_full_drop():
    doc = make_doc(seed=2, object_prob=1.0)
    out = apply_ocr_noise(doc.evidence, 1.0, 0.0, np.random.default_rng(0))
    assert all(ev.kind == OBJECT for ev in out)
    assert len(out) == sum(1 for ev in doc.evidence if ev.kind == OBJECT)


def test_noise_binomial_band():
    evidence = _flat_evidence(10_000)
    out = apply_ocr_noise(evidence, 0.5, 0.0, np.random.default_rng(7))
    assert 4700 <= len(out) <= 5300  # 5000 +- 300 (>= 6 sigma)


def test_noise_deterministic_and_boxes_unchanged():
    doc = make_doc(seed=3)
    a = apply_ocr_noise(doc.evidence, 0.4, 0.3, np.random.default_rng(11))
    b = apply_ocr_noise(doc.evidence, 0.4, 0.3, np.random.default_rng(11))
    assert a == b
    surviving_boxes = {ev.box for ev in a}
    assert surviving_boxes <= {ev.box for ev in doc.evidence}


def test_noise_corruption_lowercase_only():
    evidence = _flat_evidence(200)
    out = apply_ocr_noise(evidence, 0.0, 1.0, np.random.default_rng(5))
    assert len(out) == 200
    assert all(ev.text.isascii() and ev.text.islower() and len(ev.text) == 4 for ev in out)
    assert any(ev.text != "word" for ev in out)


def test_noise_rejects_bad_rates():
    with pytest.raises(ValueError):
        apply_ocr_noise([], 1.5, 0.0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# task samples

def test_qa_sample_template():
    doc = make_doc(seed=4, min_fields=1, max_fields=1)
    question, answer = doc.qa[0]
    bank = dict(DEFAULT_PROMPT_BANK)
    bank["QA"] = ("Given the image, answer the following question. {query}",)
    (sample,) = make_task_samples(doc, {"QA"}, bank, np.random.default_rng(0))
    assert question in sample.prompt
    assert sample.target == answer
    assert not sample.aux_masked


def test_qg_sample_swaps_components():
    doc = make_doc(seed=4, min_fields=1, max_fields=1)
    question, answer = doc.qa[0]
    bank = dict(DEFAULT_PROMPT_BANK)
    bank["QG"] = ("Given the image, generate a question whose answer is: {answer}.",)
    (sample,) = make_task_samples(doc, {"QG"}, bank, np.random.default_rng(0))
    assert f"whose answer is: {answer}" in sample.prompt
    assert sample.target == question


def test_tr_sample_masks_aux():
    doc = make_doc(seed=6)
    (sample,) = make_task_samples(doc, {"TR"}, rng=np.random.default_rng(0))
    assert sample.aux_masked
    assert sample.target == doc.reading_text


def test_mtp_sample_masks_boxes_and_texts():
    doc = make_doc(seed=8, min_fields=4, max_fields=4, table_prob=0.0)
    (sample,) = make_task_samples(doc, {"MTP"}, rng=np.random.default_rng(1))
    masked = [i for i, ev in enumerate(sample.evidence) if ev.text == tokenizer.MASK_SENTINEL]
    n_ocr = sum(1 for ev in doc.evidence if ev.kind == OCR)
    assert len(masked) == len(sample.mask_boxes)
    assert 1 <= len(masked) <= max(1, round(0.30 * n_ocr))
    assert sample.target == " ".join(doc.evidence[i].text for i in masked)
    for i in masked:
        box = doc.evidence[i].box
        x0, x1 = round(box.x0 * doc.canvas.width), round(box.x1 * doc.canvas.width)
        y0, y1 = round(box.y0 * doc.canvas.height), round(box.y1 * doc.canvas.height)
        assert np.all(sample.canvas.pixels[y0:y1, x0:x1] == 0.5)
        assert np.any(doc.canvas.pixels[y0:y1, x0:x1] == 0.0)  # original untouched


def test_unknown_task_rejected():
    doc = make_doc(seed=1)
    with pytest.raises(ValueError, match="unknown task"):
        make_task_samples(doc, {"XX"}, rng=np.random.default_rng(0))


def test_sample_determinism():
    doc = make_doc(seed=12)
    a = make_task_samples(doc, {"QA", "MTP"}, rng=np.random.default_rng(3))
    b = make_task_samples(doc, {"QA", "MTP"}, rng=np.random.default_rng(3))
    assert [(s.task, s.prompt, s.target) for s in a] == [(s.task, s.prompt, s.target) for s in b]
