"""MNR1 serialization: length-prefixed little-endian coefficient streams.

Every blob and simulated wire message starts with the magic bytes ``MNR1``
followed by a one-byte kind code.  Crypto blobs carry a parameter header
(N, q, p as unsigned little-endian, sigma as an IEEE double), then their
ring elements as ``count | byte-width | coefficients`` with coefficients
stored as non-negative residues.  Moduli beyond 64 bits are rejected at
serialization time.
"""

from __future__ import annotations

import struct

from .fhe import Ciphertext, FheKeys, FheParams, RingElement

MAGIC = b"MNR1"

KIND_SECRET_KEY = 0x01
KIND_PUBLIC_KEY = 0x02
KIND_CIPHERTEXT = 0x03
KIND_TOKEN_DELIVERY = 0x10
KIND_TOKEN_COPY_RESEND = 0x11
KIND_GROUP_BROADCAST = 0x12


class WireError(Exception):
    """Malformed or truncated MNR1 data."""


def encode_uint(value: int, width: int) -> bytes:
    return value.to_bytes(width, "little")


def encode_bytes(data: bytes) -> bytes:
    return len(data).to_bytes(4, "little") + data


def encode_str(text: str) -> bytes:
    return encode_bytes(text.encode("utf-8"))


def encode_bigint(value: int) -> bytes:
    """Sign byte + length-prefixed magnitude (budgets can exceed 64 bits)."""
    sign = 1 if value < 0 else 0
    mag = abs(value)
    raw = mag.to_bytes((mag.bit_length() + 7) // 8 or 1, "little")
    return bytes([sign]) + encode_bytes(raw)


class Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise WireError("truncated stream")
        out = self.data[self.offset:self.offset + n]
        self.offset += n
        return out

    def uint(self, width: int) -> int:
        return int.from_bytes(self.take(width), "little")

    def u8(self) -> int:
        return self.uint(1)

    def u32(self) -> int:
        return self.uint(4)

    def u64(self) -> int:
        return self.uint(8)

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def lp_bytes(self) -> bytes:
        return self.take(self.u32())

    def lp_str(self) -> str:
        return self.lp_bytes().decode("utf-8")

    def bigint(self) -> int:
        sign = self.u8()
        mag = int.from_bytes(self.lp_bytes(), "little")
        return -mag if sign else mag

    def done(self) -> bool:
        return self.offset == len(self.data)


def frame(kind: int, payload: bytes) -> bytes:
    return MAGIC + bytes([kind]) + payload


def unframe(data: bytes) -> tuple[int, Reader]:
    if data[:4] != MAGIC:
        raise WireError("bad magic")
    if len(data) < 5:
        raise WireError("missing kind byte")
    return data[4], Reader(data, 5)


# --- crypto blobs -----------------------------------------------------------

def _encode_params(params: FheParams) -> bytes:
    for name in ("ciphertext_modulus", "plaintext_modulus"):
        if getattr(params, name) >= 1 << 64:
            raise WireError(f"{name} does not fit the 64-bit wire header")
    return (encode_uint(params.ring_degree, 4)
            + encode_uint(params.ciphertext_modulus, 8)
            + encode_uint(params.plaintext_modulus, 8)
            + struct.pack("<d", params.gaussian_stddev))


def _decode_params(reader: Reader) -> FheParams:
    n = reader.u32()
    q = reader.u64()
    p = reader.u64()
    sigma = reader.f64()
    return FheParams(ring_degree=n, ciphertext_modulus=q,
                     plaintext_modulus=p, gaussian_stddev=sigma)


def _encode_element(elem: RingElement) -> bytes:
    width = (elem.modulus.bit_length() + 7) // 8
    out = [encode_uint(elem.modulus, 8), encode_uint(len(elem), 4),
           bytes([width])]
    out.extend(c.to_bytes(width, "little") for c in elem.residues())
    return b"".join(out)


def _decode_element(reader: Reader) -> RingElement:
    modulus = reader.u64()
    count = reader.u32()
    width = reader.u8()
    coeffs = [int.from_bytes(reader.take(width), "little") for _ in range(count)]
    return RingElement.from_coeffs(coeffs, modulus)


def encode_secret_key(secret: RingElement, params: FheParams) -> bytes:
    return frame(KIND_SECRET_KEY, _encode_params(params) + _encode_element(secret))


def encode_public_key(public_key: tuple[RingElement, RingElement],
                      params: FheParams) -> bytes:
    return frame(KIND_PUBLIC_KEY, _encode_params(params)
                 + _encode_element(public_key[0]) + _encode_element(public_key[1]))


def encode_ciphertext(ct: Ciphertext) -> bytes:
    return frame(KIND_CIPHERTEXT, _encode_params(ct.params)
                 + encode_bigint(ct.noise_budget)
                 + _encode_element(ct.ct0) + _encode_element(ct.ct1))


def decode_blob(data: bytes):
    """Decode any crypto blob; returns the matching fhe-layer object."""
    kind, reader = unframe(data)
    params = _decode_params(reader)
    if kind == KIND_SECRET_KEY:
        out = _decode_element(reader)
    elif kind == KIND_PUBLIC_KEY:
        out = (_decode_element(reader), _decode_element(reader))
    elif kind == KIND_CIPHERTEXT:
        budget = reader.bigint()
        out = Ciphertext(params, _decode_element(reader), _decode_element(reader), budget)
    else:
        raise WireError(f"unknown blob kind {kind:#x}")
    if not reader.done():
        raise WireError("trailing bytes after blob")
    return out


def encode_keys(keys: FheKeys, params: FheParams) -> tuple[bytes, bytes]:
    return (encode_secret_key(keys.secret_key, params),
            encode_public_key(keys.public_key, params))
