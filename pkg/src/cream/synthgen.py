"""Synthetic key-value document generation with ground-truth feature evidence.

Documents are white canvases carrying rendered key/value word pairs (some
optionally arranged as a ruled two-column table), optional decorative shapes,
and the derived supervision: raster-order reading text, a caption, and one
QA pair per field. Generation is pure given a seed; per-document seeds make
it embarrassingly parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import tokenizer
from .imaging import Box, Canvas, LayoutError, fill_rect, render_text, text_extent

OCR = "OCR"
OBJECT = "OBJECT"

TASKS = ("TR", "MTP", "CAPT", "QA", "QG")

SHAPE_CLASSES = ("circle", "square", "triangle", "diamond", "ring", "cross", "hbar", "vbar")
SHAPE_INTENSITY = 0.3

QUESTION_TEMPLATE = "What is the value of {key}?"
CAPTION_TEMPLATE = "a document with {count} fields including {keys}"

# Task-specific prompt templates for the unified multitask framework.
DEFAULT_PROMPT_BANK: dict[str, tuple[str, ...]] = {
    "TR": (
        "Read all texts.",
        "Read all texts in the image.",
        "Read all characters in the image.",
    ),
    "MTP": (
        "Read masked texts.",
        "Read masked texts in the image.",
        "Given the image, read masked texts.",
    ),
    "CAPT": (
        "Explain the image.",
        "Briefly describe the content of the image.",
        "Write a short description for the image.",
    ),
    "QA": (
        "{query}",
        "Q: {query}",
        "Question: {query}",
        "Given the image, answer the following question. {query}",
    ),
    "QG": (
        "Given the image, generate a question whose answer is: {answer}.",
        "Based on the image, provide a question with the answer: {answer}.",
    ),
}


@dataclass(frozen=True)
class FeatureEvidence:
    box: Box
    text: str
    kind: str  # OCR or OBJECT

    def __post_init__(self):
        if not self.text:
            raise ValueError("evidence text must be non-empty")
        if self.kind not in (OCR, OBJECT):
            raise ValueError(f"unknown evidence kind {self.kind!r}")


@dataclass
class SynthDoc:
    canvas: Canvas
    evidence: list[FeatureEvidence]  # raster reading order
    reading_text: str
    caption: str
    qa: list[tuple[str, str]]
    seed: int
    doc_id: str = ""


@dataclass
class TrainSample:
    """One multitask training example (aux_masked is true exactly for TR)."""

    doc_id: str
    canvas: Canvas
    evidence: list[FeatureEvidence]
    task: str
    prompt: str
    target: str
    prompt_ids: list[int]
    target_ids: list[int]
    aux_masked: bool
    mask_boxes: list[Box] = field(default_factory=list)


@dataclass(frozen=True)
class GenConfig:
    width: int = 128
    height: int = 64
    min_fields: int = 3
    max_fields: int = 4
    table_prob: float = 0.3
    object_prob: float = 0.3
    min_scale: int = 1
    max_scale: int = 1
    seed: int = 0
    words: tuple[str, ...] = ()

    def __post_init__(self):
        if self.min_fields < 1 or self.max_fields < self.min_fields:
            raise ValueError("field count range must satisfy 1 <= min <= max")
        for name in ("table_prob", "object_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.min_scale < 1 or self.max_scale < self.min_scale:
            raise ValueError("font scale range must satisfy 1 <= min <= max")

    def vocabulary(self) -> tuple[str, ...]:
        return self.words if self.words else word_list()


@lru_cache(maxsize=1)
def word_list() -> tuple[str, ...]:
    """Deterministic built-in list of 1,000 lowercase pronounceable words:
    800 two-syllable and 200 three-syllable, stride-sampled from the
    consonant-vowel syllable product so initial letters stay diverse."""
    syllables = [c + v for c in "bcdfghjklmnprstvwyz" for v in "aeiou"]
    count = len(syllables)
    pairs = count * count
    words = [
        syllables[(k * pairs // 800) // count] + syllables[(k * pairs // 800) % count]
        for k in range(800)
    ]
    words += [
        syllables[(k * pairs // 200) // count]
        + syllables[(k * pairs // 200) % count]
        + syllables[(k * 37) % count]
        for k in range(200)
    ]
    return tuple(words)


def _draw_shape(canvas: Canvas, cls: str, x: int, y: int, size: int) -> Box:
    rr, cc = np.mgrid[0:size, 0:size]
    cy = cx = (size - 1) / 2.0
    r = size / 2.0 - 0.5
    if cls == "circle":
        mask = (rr - cy) ** 2 + (cc - cx) ** 2 <= r * r
    elif cls == "ring":
        d2 = (rr - cy) ** 2 + (cc - cx) ** 2
        mask = (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    elif cls == "square":
        mask = np.ones((size, size), dtype=bool)
    elif cls == "diamond":
        mask = np.abs(rr - cy) + np.abs(cc - cx) <= r
    elif cls == "triangle":
        mask = np.abs(cc - cx) <= (rr + 1) * 0.5
    elif cls == "cross":
        t = max(1, size // 5)
        mask = (np.abs(rr - cy) < t) | (np.abs(cc - cx) < t)
    elif cls == "hbar":
        t = max(1, size // 4)
        mask = np.abs(rr - cy) < t
    elif cls == "vbar":
        t = max(1, size // 4)
        mask = np.abs(cc - cx) < t
    else:
        raise ValueError(f"unknown shape class {cls!r}")
    canvas.pixels[y : y + size, x : x + size][mask] = SHAPE_INTENSITY
    return Box(x / canvas.width, y / canvas.height, (x + size) / canvas.width, (y + size) / canvas.height)


def _boxes_clear(box: Box, others: list[Box], pad: float) -> bool:
    padded = Box(
        max(box.x0 - pad, 0.0), max(box.y0 - pad, 0.0), min(box.x1 + pad, 1.0), min(box.y1 + pad, 1.0)
    )
    return all(padded.intersection_area(o) == 0.0 for o in others)


def _attempt_layout(
    cfg: GenConfig,
    rng: np.random.Generator,
    keys: list[str],
    values: list[str],
    use_table: bool,
    n_table: int,
    want_objects: int,
) -> tuple[Canvas, list[FeatureEvidence]] | None:
    canvas = Canvas.blank(cfg.width, cfg.height)
    evidence: list[FeatureEvidence] = []
    margin = 2
    count = len(keys)

    blocks: list[tuple[str, int]] = [("pair", i) for i in range(n_table, count)]
    if use_table:
        blocks.append(("table", 0))
    order = rng.permutation(len(blocks))

    y = margin
    try:
        for bi in order:
            kind, idx = blocks[bi]
            if kind == "pair":
                s = int(rng.integers(cfg.min_scale, cfg.max_scale + 1))
                kw, kh = text_extent(keys[idx], s)
                vw, _ = text_extent(values[idx], s)
                gap = s * int(rng.integers(3, 6))
                bw = kw + gap + vw
                if bw > cfg.width - 2 * margin or y + kh > cfg.height - margin:
                    return None
                x = margin + int(rng.integers(0, cfg.width - margin - bw - margin + 1))
                evidence.append(FeatureEvidence(render_text(canvas, keys[idx], (x, y), s), keys[idx], OCR))
                evidence.append(
                    FeatureEvidence(render_text(canvas, values[idx], (x + kw + gap, y), s), values[idx], OCR)
                )
                y += kh + int(rng.integers(2, 6))
            else:
                s = cfg.min_scale
                pad = 2 * s
                t_keys, t_values = keys[:n_table], values[:n_table]
                kcol = max(text_extent(k, s)[0] for k in t_keys)
                vcol = max(text_extent(v, s)[0] for v in t_values)
                row_h = 7 * s + 2 * pad
                bw = 1 + pad + kcol + pad + 1 + pad + vcol + pad + 1
                bh = n_table * row_h + 1
                if bw > cfg.width - 2 * margin or y + bh > cfg.height - margin:
                    return None
                x = margin + int(rng.integers(0, cfg.width - margin - bw - margin + 1))
                px = canvas.pixels
                for i in range(n_table + 1):
                    px[y + i * row_h, x : x + bw] = 0.0
                for cx in (x, x + 1 + pad + kcol + pad, x + bw - 1):
                    px[y : y + bh, cx] = 0.0
                for i, (k, v) in enumerate(zip(t_keys, t_values)):
                    ty = y + i * row_h + 1 + pad
                    evidence.append(FeatureEvidence(render_text(canvas, k, (x + 1 + pad, ty), s), k, OCR))
                    evidence.append(
                        FeatureEvidence(
                            render_text(canvas, v, (x + 1 + pad + kcol + pad + 1 + pad, ty), s), v, OCR
                        )
                    )
                y += bh + int(rng.integers(2, 6))
    except LayoutError:
        return None

    text_boxes = [ev.box for ev in evidence]
    for _ in range(want_objects):
        cls = SHAPE_CLASSES[int(rng.integers(len(SHAPE_CLASSES)))]
        size = int(rng.integers(8, 13))
        placed = False
        for _try in range(20):
            ox = int(rng.integers(margin, cfg.width - margin - size + 1))
            oy = int(rng.integers(margin, cfg.height - margin - size + 1))
            candidate = Box(ox / cfg.width, oy / cfg.height, (ox + size) / cfg.width, (oy + size) / cfg.height)
            if _boxes_clear(candidate, text_boxes + [e.box for e in evidence if e.kind == OBJECT], 0.01):
                box = _draw_shape(canvas, cls, ox, oy, size)
                evidence.append(FeatureEvidence(box, cls, OBJECT))
                placed = True
                break
        if not placed:
            break  # decorative only; crowded layouts simply omit shapes
    return canvas, evidence


def generate_kv_doc(cfg: GenConfig, rng: np.random.Generator) -> SynthDoc:
    """Generate one key-value document with non-overlapping evidence boxes."""
    vocab = cfg.vocabulary()
    if not vocab:
        raise ValueError("word list is empty")
    count = int(rng.integers(cfg.min_fields, cfg.max_fields + 1))
    if len(vocab) < 2 * count:
        raise ValueError(f"word list too small for {count} fields")
    picks = rng.choice(len(vocab), size=2 * count, replace=False)
    keys = [vocab[int(i)] for i in picks[:count]]
    values = [vocab[int(i)] for i in picks[count:]]
    use_table = count >= 2 and rng.random() < cfg.table_prob
    n_table = int(rng.integers(2, count + 1)) if use_table else 0
    want_objects = int(rng.integers(1, 3)) if rng.random() < cfg.object_prob else 0

    for _attempt in range(100):
        result = _attempt_layout(cfg, rng, keys, values, use_table, n_table, want_objects)
        if result is not None:
            canvas, evidence = result
            break
    else:
        raise LayoutError(f"layout failed after 100 attempts (seed {cfg.seed})")

    evidence.sort(key=lambda ev: (ev.box.y0, ev.box.x0))
    reading_text = " ".join(ev.text for ev in evidence if ev.kind == OCR)
    caption = CAPTION_TEMPLATE.format(count=count, keys=", ".join(keys[: min(3, count)]))
    qa = [(QUESTION_TEMPLATE.format(key=k), v) for k, v in zip(keys, values)]
    return SynthDoc(canvas, evidence, reading_text, caption, qa, cfg.seed)


def apply_ocr_noise(
    evidence: list[FeatureEvidence],
    drop_rate: float,
    corrupt_rate: float,
    rng: np.random.Generator,
) -> list[FeatureEvidence]:
    """Drop OCR evidence and corrupt surviving characters; OBJECT untouched."""
    if not (0.0 <= drop_rate <= 1.0 and 0.0 <= corrupt_rate <= 1.0):
        raise ValueError(f"rates must be in [0, 1], got drop={drop_rate} corrupt={corrupt_rate}")
    out: list[FeatureEvidence] = []
    for ev in evidence:
        if ev.kind != OCR:
            out.append(ev)
            continue
        if rng.random() < drop_rate:
            continue
        text = ev.text
        if corrupt_rate > 0.0:
            chars = [
                chr(ord("a") + int(rng.integers(26))) if rng.random() < corrupt_rate else ch
                for ch in text
            ]
            text = "".join(chars)
        out.append(replace(ev, text=text) if text != ev.text else ev)
    return out


def _pick(bank: dict[str, tuple[str, ...]], task: str, rng: np.random.Generator) -> str:
    templates = bank.get(task)
    if not templates:
        raise ValueError(f"prompt bank has no templates for task {task!r}")
    return templates[int(rng.integers(len(templates)))]


def make_task_samples(
    doc: SynthDoc,
    tasks,
    prompt_bank: dict[str, tuple[str, ...]] | None = None,
    rng: np.random.Generator | None = None,
) -> list[TrainSample]:
    """Expand a document into one TrainSample per requested task."""
    bank = DEFAULT_PROMPT_BANK if prompt_bank is None else prompt_bank
    if rng is None:
        rng = np.random.default_rng(doc.seed)
    unknown = [t for t in tasks if t not in TASKS]
    if unknown:
        raise ValueError(f"unknown task tags {unknown!r}")
    samples: list[TrainSample] = []
    for task in (t for t in TASKS if t in tasks):
        prompt = _pick(bank, task, rng)
        canvas = doc.canvas
        evidence = list(doc.evidence)
        aux_masked = False
        mask_boxes: list[Box] = []
        if task == "TR":
            target = doc.reading_text
            aux_masked = True
        elif task == "MTP":
            ocr_idx = [i for i, ev in enumerate(doc.evidence) if ev.kind == OCR]
            if not ocr_idx:
                raise ValueError("MTP sample requires OCR evidence")
            frac = rng.uniform(0.15, 0.30)
            n_mask = max(1, round(frac * len(ocr_idx)))
            chosen = sorted(int(i) for i in rng.choice(ocr_idx, size=n_mask, replace=False))
            canvas = doc.canvas.copy()
            for i in chosen:
                fill_rect(canvas, doc.evidence[i].box)
                mask_boxes.append(doc.evidence[i].box)
                evidence[i] = replace(doc.evidence[i], text=tokenizer.MASK_SENTINEL)
            target = " ".join(doc.evidence[i].text for i in chosen)
        elif task == "CAPT":
            target = doc.caption
        elif task in ("QA", "QG"):
            if not doc.qa:
                raise ValueError(f"{task} sample requires QA pairs")
            question, answer = doc.qa[int(rng.integers(len(doc.qa)))]
            if task == "QA":
                prompt = prompt.format(query=question)
                target = answer
            else:
                prompt = prompt.format(answer=answer)
                target = question
        samples.append(
            TrainSample(
                doc_id=doc.doc_id,
                canvas=canvas,
                evidence=evidence,
                task=task,
                prompt=prompt,
                target=target,
                prompt_ids=tokenizer.encode(prompt),
                target_ids=tokenizer.encode(target),
                aux_masked=aux_masked,
                mask_boxes=mask_boxes,
            )
        )
    return samples
