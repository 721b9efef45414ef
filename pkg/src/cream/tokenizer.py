"""Byte-level tokenizer with a fixed 262-entry vocabulary.

Ids 0..5 are the special tokens; byte b maps to 6 + b. `encode` emits one id
per UTF-8 byte and never adds framing tokens (callers add BOS/SEP/EOS).
"""

from __future__ import annotations

PAD = 0
BOS = 1
EOS = 2
MASK = 3
SEP = 4
UNK = 5
BYTE_OFFSET = 6
VOCAB_SIZE = 262

SPECIAL_IDS = (PAD, BOS, EOS, MASK, SEP, UNK)

# Evidence whose text is this sentinel encodes as the single MASK id
# (used by the masked-text-prediction task).
MASK_SENTINEL = "<mask>"


def encode(text: str) -> list[int]:
    return [BYTE_OFFSET + b for b in text.encode("utf-8")]


def decode(ids) -> str:
    data = bytes(i - BYTE_OFFSET for i in ids if BYTE_OFFSET <= i < VOCAB_SIZE)
    return data.decode("utf-8", errors="replace")


def encode_evidence_text(text: str) -> list[int]:
    """Token ids of an evidence text; the MTP sentinel becomes [MASK]."""
    if text == MASK_SENTINEL:
        return [MASK]
    return encode(text)
