import random

import pytest

from monadring.fhe import FheParams, encode_int, encrypt, keygen
from monadring.wire import (
    MAGIC,
    Reader,
    WireError,
    decode_blob,
    encode_bigint,
    encode_bytes,
    encode_ciphertext,
    encode_public_key,
    encode_secret_key,
    frame,
    unframe,
)

PARAMS = FheParams(ring_degree=16, ciphertext_modulus=1 << 40,
                   plaintext_modulus=1 << 16)


def test_magic_prefix():
    keys = keygen(PARAMS, random.Random(0))
    blob = encode_secret_key(keys.secret_key, PARAMS)
    assert blob[:4] == MAGIC == b"MNR1"


def test_secret_key_roundtrip():
    keys = keygen(PARAMS, random.Random(1))
    blob = encode_secret_key(keys.secret_key, PARAMS)
    assert decode_blob(blob) == keys.secret_key


def test_public_key_roundtrip():
    keys = keygen(PARAMS, random.Random(2))
    blob = encode_public_key(keys.public_key, PARAMS)
    assert decode_blob(blob) == keys.public_key


def test_ciphertext_roundtrip():
    keys = keygen(PARAMS, random.Random(3))
    ct = encrypt(keys.public_key, encode_int(7, PARAMS), PARAMS, random.Random(4))
    assert decode_blob(encode_ciphertext(ct)) == ct


def test_bigint_roundtrip():
    for value in (0, 1, -1, 1 << 200, -(1 << 200)):
        assert Reader(encode_bigint(value)).bigint() == value


def test_bad_magic():
    with pytest.raises(WireError):
        unframe(b"XXXX\x01")


def test_truncation_detected():
    keys = keygen(PARAMS, random.Random(5))
    blob = encode_secret_key(keys.secret_key, PARAMS)
    with pytest.raises(WireError):
        decode_blob(blob[:-3])


def test_trailing_bytes_detected():
    keys = keygen(PARAMS, random.Random(6))
    blob = encode_secret_key(keys.secret_key, PARAMS)
    with pytest.raises(WireError):
        decode_blob(blob + b"\x00")


def test_frame_roundtrip():
    data = frame(0x42, encode_bytes(b"hello"))
    kind, reader = unframe(data)
    assert kind == 0x42
    assert reader.lp_bytes() == b"hello"
