"""Dataset directory layout: images/{id}.pgm + annotations.jsonl + manifest.

One JSONL record per document:
    {"id", "image", "reading_text", "caption",
     "evidence": [{"box": [x0, y0, x1, y1], "text", "kind"}],
     "qa": [{"q", "a"}], "seed"}
with normalized box coordinates at 6 decimal places.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .imaging import Box, read_pgm, write_pgm
from .synthgen import FeatureEvidence, GenConfig, SynthDoc, generate_kv_doc


def worker_count(requested: int | None = None) -> int:
    """Worker cap: min(requested, CREAM_THREADS, cpu count)."""
    cap = os.cpu_count() or 1
    env = os.environ.get("CREAM_THREADS")
    if env:
        cap = min(cap, max(1, int(env)))
    if requested is not None:
        cap = min(cap, max(1, requested))
    return cap


def generate_dataset(cfg: GenConfig, count: int, threads: int | None = None) -> list[SynthDoc]:
    """Documents doc_000000..; doc i uses seed cfg.seed + i, so generation is
    order-independent across workers."""

    def make(i: int) -> SynthDoc:
        doc_cfg = replace(cfg, seed=cfg.seed + i)
        doc = generate_kv_doc(doc_cfg, np.random.default_rng(doc_cfg.seed))
        doc.doc_id = f"doc_{i:06d}"
        return doc

    workers = worker_count(threads)
    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(make, range(count)))
    return [make(i) for i in range(count)]


def _evidence_record(ev: FeatureEvidence) -> dict:
    box = [round(v, 6) for v in (ev.box.x0, ev.box.y0, ev.box.x1, ev.box.y1)]
    return {"box": box, "text": ev.text, "kind": ev.kind}


def doc_record(doc: SynthDoc) -> dict:
    return {
        "id": doc.doc_id,
        "image": f"images/{doc.doc_id}.pgm",
        "reading_text": doc.reading_text,
        "caption": doc.caption,
        "evidence": [_evidence_record(ev) for ev in doc.evidence],
        "qa": [{"q": q, "a": a} for q, a in doc.qa],
        "seed": doc.seed,
    }


def write_dataset(out_dir, docs: list[SynthDoc], config: GenConfig) -> None:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for doc in docs:
        write_pgm(doc.canvas, out / "images" / f"{doc.doc_id}.pgm")
    with open(out / "annotations.jsonl", "w", encoding="utf-8") as f:
        for doc in docs:
            f.write(json.dumps(doc_record(doc), sort_keys=True) + "\n")
    manifest = {
        "docs": len(docs),
        "config": {
            "width": config.width,
            "height": config.height,
            "min_fields": config.min_fields,
            "max_fields": config.max_fields,
            "table_prob": config.table_prob,
            "object_prob": config.object_prob,
            "min_scale": config.min_scale,
            "max_scale": config.max_scale,
            "seed": config.seed,
            "words": len(config.vocabulary()),
        },
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(dataset_dir) -> list[SynthDoc]:
    root = Path(dataset_dir)
    annotations = root / "annotations.jsonl"
    if not annotations.exists():
        raise FileNotFoundError(f"{annotations}: no annotations.jsonl in dataset directory")
    docs: list[SynthDoc] = []
    with open(annotations, encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            canvas = read_pgm(root / rec["image"])
            evidence = [
                FeatureEvidence(Box(*e["box"]), e["text"], e["kind"]) for e in rec["evidence"]
            ]
            docs.append(
                SynthDoc(
                    canvas=canvas,
                    evidence=evidence,
                    reading_text=rec["reading_text"],
                    caption=rec["caption"],
                    qa=[(p["q"], p["a"]) for p in rec["qa"]],
                    seed=rec["seed"],
                    doc_id=rec["id"],
                )
            )
    return docs
