import numpy as np

from cream import tokenizer


def test_single_ascii_byte():
    assert tokenizer.encode("A") == [71]  # 6 + 65


def test_empty_string():
    assert tokenizer.encode("") == []
    assert tokenizer.decode([]) == ""


def test_decode_strips_specials():
    assert tokenizer.decode([tokenizer.BOS, 71, tokenizer.EOS]) == "A"
    assert tokenizer.decode([0, 0, 0]) == ""
    assert tokenizer.decode([tokenizer.MASK, tokenizer.SEP, tokenizer.UNK]) == ""


def test_round_trip_random_ascii():
    rng = np.random.default_rng(0)
    printable = [chr(c) for c in range(32, 127)]
    for _ in range(1000):
        s = "".join(rng.choice(printable, size=rng.integers(0, 30)))
        assert tokenizer.decode(tokenizer.encode(s)) == s


def test_round_trip_utf8():
    for s in ("héllo", "ключ", "文書", "a b"):
        assert tokenizer.decode(tokenizer.encode(s)) == s


def test_vocab_size_and_ranges():
    assert tokenizer.VOCAB_SIZE == 262
    ids = tokenizer.encode(bytes(range(256)).decode("latin-1"))
    assert min(ids) >= tokenizer.BYTE_OFFSET
    assert max(ids) < tokenizer.VOCAB_SIZE


def test_first_token_is_first_byte():
    for text in ("rome", "x", "value with spaces"):
        assert tokenizer.encode(text)[0] == tokenizer.BYTE_OFFSET + text.encode()[0]


def test_mask_sentinel_encoding():
    assert tokenizer.encode_evidence_text(tokenizer.MASK_SENTINEL) == [tokenizer.MASK]
    assert tokenizer.encode_evidence_text("abc") == tokenizer.encode("abc")
