"""Desk-scale BFV encryption over the negacyclic ring Z_q[X]/(X^N + 1).

Everything here favours exactness and deterministic tests over speed or
cryptographic security: coefficients are Python integers, the noise carried
by every ciphertext is tracked as an analytic bound, and all randomness is
drawn from caller-supplied ``random.Random`` instances.

Noise accounting
----------------
A ciphertext satisfies ``ct0 + ct1*s = delta*m + E  (mod q)`` where ``E`` is
the accumulated noise term.  ``Ciphertext.noise_budget`` is an upper bound on
``max|E_i|``.  Decryption is reliable while the budget stays strictly below
``(q - p*r) / (2p)`` with ``r = q - p*delta``; with the default power-of-two
moduli ``r = 0`` and the bound is exactly ``q / (2p)``.

A fresh encryption has ``E = e*u + e0 + e1*s`` with ternary ``u`` and
Gaussian errors cut off at ``6*sigma``, so the recorded fresh budget is
``T*(2N + 1)`` where ``T = floor(6*sigma)`` and ``N`` is the expansion
factor of the ring.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field


class NoiseOverflow(Exception):
    """Tracked ciphertext noise reached the decryptability bound."""


def _center(value: int, modulus: int) -> int:
    value %= modulus
    if value > modulus // 2:
        value -= modulus
    return value


def negacyclic_multiply(a: list[int], b: list[int], n: int) -> list[int]:
    """Exact product of two coefficient vectors modulo X^n + 1.

    Packs both operands into big integers (one digit per coefficient, sized
    so digits never interfere) so CPython's Karatsuba multiply does the
    convolution; the wrap-around subtraction then folds degree >= n terms
    back with a sign flip.  ``a`` must be non-negative; ``b`` may be signed.
    """
    amax = max(a) if a else 0
    bmax = max((abs(x) for x in b), default=0)
    if amax == 0 or bmax == 0:
        return [0] * n
    width_bits = (n * amax * bmax + 1).bit_length() + 1
    w = (width_bits + 7) // 8
    packed_a = int.from_bytes(b"".join(x.to_bytes(w, "little") for x in a), "little")
    pos = b"".join((x if x > 0 else 0).to_bytes(w, "little") for x in b)
    neg = b"".join((-x if x < 0 else 0).to_bytes(w, "little") for x in b)
    total = (2 * n + 1) * w
    prod_pos = (packed_a * int.from_bytes(pos, "little")).to_bytes(total, "little")
    prod_neg = (packed_a * int.from_bytes(neg, "little")).to_bytes(total, "little")
    out = []
    for k in range(n):
        lo = k * w
        hi = (k + n) * w
        out.append(
            int.from_bytes(prod_pos[lo:lo + w], "little")
            - int.from_bytes(prod_neg[lo:lo + w], "little")
            - int.from_bytes(prod_pos[hi:hi + w], "little")
            + int.from_bytes(prod_neg[hi:hi + w], "little")
        )
    return out


@dataclass(frozen=True)
class FheParams:
    """Ring, modulus and sampler parameters.

    ``expansion_factor`` is the recorded analytic bound on the infinity-norm
    growth of a ring product (``N`` for this ring), not a measured value.
    ``gaussian_stddev = 0`` is allowed as a test hook that forces all error
    terms to zero.
    """

    ring_degree: int = 1024
    ciphertext_modulus: int = 1 << 54
    plaintext_modulus: int = 1 << 16
    gaussian_stddev: float = 3.2
    expansion_factor: float = field(default=0.0)

    def __post_init__(self):
        n = self.ring_degree
        if n < 2 or n & (n - 1):
            raise ValueError(f"ring degree must be a power of two >= 2, got {n}")
        if self.plaintext_modulus >= self.ciphertext_modulus:
            raise ValueError("plaintext modulus must be below ciphertext modulus")
        if self.ciphertext_modulus // self.plaintext_modulus < 2:
            raise ValueError("floor(q/p) must be at least 2")
        if self.gaussian_stddev < 0:
            raise ValueError("gaussian stddev must be non-negative")
        if self.expansion_factor == 0.0:
            object.__setattr__(self, "expansion_factor", float(n))

    @property
    def delta(self) -> int:
        return self.ciphertext_modulus // self.plaintext_modulus

    @property
    def plaintext_remainder(self) -> int:
        """r_p(q) = q - p*delta."""
        return self.ciphertext_modulus - self.plaintext_modulus * self.delta

    @property
    def noise_tail(self) -> int:
        """Cutoff for the discrete Gaussian sampler: samples stay <= 6*sigma."""
        return int(6 * self.gaussian_stddev)

    @property
    def fresh_noise_bound(self) -> int:
        """Analytic bound on |e*u + e0 + e1*s| for a fresh encryption."""
        n = self.ring_degree
        return self.noise_tail * (2 * n + 1)

    def decryptable(self, noise_budget: int) -> bool:
        """budget < (q - p*r) / (2p), compared exactly in integers."""
        q = self.ciphertext_modulus
        p = self.plaintext_modulus
        return 2 * p * noise_budget < q - p * self.plaintext_remainder


DEFAULT_PARAMS = FheParams()


@dataclass(frozen=True)
class RingElement:
    """Coefficient vector reduced to the symmetric interval (-m/2, m/2]."""

    coeffs: tuple[int, ...]
    modulus: int

    @classmethod
    def from_coeffs(cls, coeffs, modulus: int) -> "RingElement":
        return cls(tuple(_center(c, modulus) for c in coeffs), modulus)

    @classmethod
    def zero(cls, n: int, modulus: int) -> "RingElement":
        return cls((0,) * n, modulus)

    @classmethod
    def constant(cls, value: int, n: int, modulus: int) -> "RingElement":
        return cls((_center(value, modulus),) + (0,) * (n - 1), modulus)

    def __post_init__(self):
        if any(not (-self.modulus // 2 < c <= self.modulus // 2) for c in self.coeffs):
            raise ValueError("coefficients not in centered representation")

    def __len__(self) -> int:
        return len(self.coeffs)

    def _check(self, other: "RingElement"):
        if self.modulus != other.modulus or len(self) != len(other):
            raise ValueError("ring element mismatch")

    def __add__(self, other: "RingElement") -> "RingElement":
        self._check(other)
        m = self.modulus
        return RingElement(
            tuple(_center(a + b, m) for a, b in zip(self.coeffs, other.coeffs)), m)

    def __sub__(self, other: "RingElement") -> "RingElement":
        self._check(other)
        m = self.modulus
        return RingElement(
            tuple(_center(a - b, m) for a, b in zip(self.coeffs, other.coeffs)), m)

    def __neg__(self) -> "RingElement":
        m = self.modulus
        return RingElement(tuple(_center(-a, m) for a in self.coeffs), m)

    def __mul__(self, other: "RingElement") -> "RingElement":
        self._check(other)
        m = self.modulus
        raw = negacyclic_multiply(self.residues(), other.coeffs, len(self))
        return RingElement(tuple(_center(c, m) for c in raw), m)

    def scale(self, k: int) -> "RingElement":
        m = self.modulus
        return RingElement(tuple(_center(c * k, m) for c in self.coeffs), m)

    def residues(self) -> list[int]:
        """Coefficients as non-negative representatives in [0, m)."""
        return [c % self.modulus for c in self.coeffs]

    def infinity_norm(self) -> int:
        return max(abs(c) for c in self.coeffs)


@dataclass(frozen=True)
class FheKeys:
    secret_key: RingElement
    public_key: tuple[RingElement, RingElement]


@dataclass(frozen=True)
class Ciphertext:
    params: FheParams
    ct0: RingElement
    ct1: RingElement
    noise_budget: int

    @property
    def decryptable(self) -> bool:
        return self.params.decryptable(self.noise_budget)


def sample_ternary(params: FheParams, rng: random.Random) -> RingElement:
    return RingElement(
        tuple(rng.randrange(-1, 2) for _ in range(params.ring_degree)),
        params.ciphertext_modulus)


def sample_gaussian(params: FheParams, rng: random.Random) -> RingElement:
    """Discrete Gaussian with rejection beyond the 6*sigma tail."""
    sigma = params.gaussian_stddev
    tail = params.noise_tail
    coeffs = []
    for _ in range(params.ring_degree):
        while True:
            x = round(rng.gauss(0.0, sigma)) if sigma > 0 else 0
            if abs(x) <= tail:
                coeffs.append(x)
                break
    return RingElement(tuple(coeffs), params.ciphertext_modulus)


def sample_uniform(params: FheParams, rng: random.Random) -> RingElement:
    q = params.ciphertext_modulus
    return RingElement.from_coeffs(
        [rng.randrange(q) for _ in range(params.ring_degree)], q)


def secret_key_gen(params: FheParams, rng: random.Random) -> RingElement:
    """Ternary secret key: every coefficient in {-1, 0, 1}."""
    return sample_ternary(params, rng)


def public_key_gen(secret: RingElement, params: FheParams,
                   rng: random.Random) -> tuple[RingElement, RingElement]:
    """Key pair (-a*s + e, a) with uniform a and Gaussian e.

    ``pk0 + pk1*s`` therefore reduces to ``e``, whose infinity norm is at
    most the sampler tail (6*sigma).
    """
    a = sample_uniform(params, rng)
    e = sample_gaussian(params, rng)
    pk0 = -(a * secret) + e
    return pk0, a


def keygen(params: FheParams, rng: random.Random) -> FheKeys:
    secret = secret_key_gen(params, rng)
    return FheKeys(secret_key=secret, public_key=public_key_gen(secret, params, rng))


def _as_plaintext(message, params: FheParams) -> RingElement:
    p = params.plaintext_modulus
    if isinstance(message, RingElement):
        if message.modulus != p or len(message) != params.ring_degree:
            raise ValueError("plaintext must live in R_p with the configured degree")
        return message
    coeffs = list(message)
    if len(coeffs) != params.ring_degree:
        raise ValueError("plaintext length must equal the ring degree")
    if any(not (0 <= c < p) for c in coeffs):
        raise ValueError("plaintext coefficients must lie in [0, p)")
    return RingElement.from_coeffs(coeffs, p)


def encrypt(public_key: tuple[RingElement, RingElement], message, params: FheParams,
            rng: random.Random) -> Ciphertext:
    """Encrypt a plaintext in R_p.

    ct0 = pk0*u + delta*m + e0, ct1 = pk1*u + e1, both mod q.  The fresh
    noise budget is the analytic bound T*(2N+1) documented in the module
    docstring; the scaled term uses the non-negative representatives of m.
    """
    m = _as_plaintext(message, params)
    q = params.ciphertext_modulus
    u = sample_ternary(params, rng)
    e0 = sample_gaussian(params, rng)
    e1 = sample_gaussian(params, rng)
    scaled = RingElement.from_coeffs([params.delta * c for c in m.residues()], q)
    ct0 = public_key[0] * u + scaled + e0
    ct1 = public_key[1] * u + e1
    return Ciphertext(params, ct0, ct1, params.fresh_noise_bound)


def decrypt(secret: RingElement, ct: Ciphertext, *, allow_overflow: bool = False) -> RingElement:
    """Recover the plaintext: round(p * (ct0 + ct1*s) / q) mod p.

    Raises :class:`NoiseOverflow` when the tracked budget has reached the
    decryptability bound; pass ``allow_overflow=True`` to attempt the
    (unreliable) decryption anyway for diagnostics.
    """
    params = ct.params
    if not ct.decryptable and not allow_overflow:
        raise NoiseOverflow(
            f"noise budget {ct.noise_budget} at or above the decryptability bound")
    q = params.ciphertext_modulus
    p = params.plaintext_modulus
    raw = ct.ct0 + ct.ct1 * secret
    coeffs = [((p * v * 2 + q) // (2 * q)) % p for v in raw.coeffs]
    return RingElement.from_coeffs(coeffs, p)


def hom_add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Coefficient-wise sum; noise budgets add."""
    if a.params != b.params:
        raise ValueError("ciphertext parameter mismatch")
    return Ciphertext(a.params, a.ct0 + b.ct0, a.ct1 + b.ct1,
                      a.noise_budget + b.noise_budget)


def hom_mul_plain(ct: Ciphertext, k) -> Ciphertext:
    """Multiply by a plaintext polynomial (or integer constant).

    The budget scales by ``max(k) * N`` — the expansion-factor bound on how
    the plaintext polynomial stretches the noise term.
    """
    params = ct.params
    if isinstance(k, int):
        k = RingElement.constant(k % params.plaintext_modulus,
                                 params.ring_degree, params.plaintext_modulus)
    k = _as_plaintext(k, params)
    kres = k.residues()
    norm = max(kres)
    q = params.ciphertext_modulus
    lifted = RingElement.from_coeffs(kres, q)
    budget = ct.noise_budget * norm * int(params.expansion_factor)
    return Ciphertext(params, ct.ct0 * lifted, ct.ct1 * lifted, budget)


def encode_int(value: int, params: FheParams) -> RingElement:
    """Constant polynomial encoding for small tallies and vote bits."""
    if not 0 <= value < params.plaintext_modulus:
        raise ValueError("value out of plaintext range")
    return RingElement.constant(value, params.ring_degree, params.plaintext_modulus)


def decode_int(message: RingElement) -> int:
    return message.coeffs[0] % message.modulus
