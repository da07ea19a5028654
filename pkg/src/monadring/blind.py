"""Blind voting rounds: encrypted ballots, homomorphic tallies, threshold opening.

A round designates one aggregation key pair whose secret key is Shamir-shared
t-of-n among the members at setup; every ballot is encrypted under the
aggregation public key so ciphertexts combine homomorphically.  Each member
additionally owns a personal key pair (also t-of-n shared) for identity and
recovery purposes.  No API here decrypts an individual ballot: the only
plaintext ever produced is the aggregate tally, opened by threshold
decryption that emits a recomputable transcript in place of a zero-knowledge
proof.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

from . import wire
from .fhe import (
    Ciphertext,
    FheKeys,
    FheParams,
    RingElement,
    decrypt,
    encode_int,
    encrypt,
    hom_add,
    hom_mul_plain,
    keygen,
)
from .shamir import (
    FieldParams,
    InsufficientShares,
    SharingPolicy,
    evaluate_polynomial,
    lagrange_weights_at_zero,
)
from .voting import Vote


@dataclass(frozen=True)
class KeyShareBundle:
    """One holder's Shamir shares of every secret-key coefficient."""

    holder: int  # evaluation point, doubles as the player id
    values: tuple[int, ...]


@dataclass(frozen=True)
class PlayerCrypto:
    player_id: int
    keys: FheKeys
    key_shares: tuple[KeyShareBundle, ...]


@dataclass(frozen=True)
class RoundSetup:
    params: FheParams
    policy: SharingPolicy
    players: tuple[PlayerCrypto, ...]
    aggregation_keys: FheKeys
    aggregation_shares: tuple[KeyShareBundle, ...]


@dataclass(frozen=True)
class EncryptedStrategy:
    player_id: int
    ciphertext: Ciphertext
    nonce: int


@dataclass(frozen=True)
class DecryptionTranscript:
    """Recomputable record of a threshold decryption.

    ``recomputation_digest`` binds the ciphertext, the contributing share
    holders and the plaintext; verification reruns the decryption from the
    listed shares and compares.
    """

    ciphertext_digest: str
    contributors: tuple[int, ...]
    plaintext: tuple[int, ...]
    recomputation_digest: str


def share_secret_key(secret: RingElement, policy: SharingPolicy,
                     rng: random.Random) -> list[KeyShareBundle]:
    """Coefficient-wise Shamir sharing: one independent instance per coefficient."""
    prime = policy.prime
    per_holder: list[list[int]] = [[] for _ in policy.points]
    for coeff in secret.coeffs:
        poly = [coeff % prime] + [rng.randrange(prime) for _ in range(policy.t - 1)]
        for slot, x in enumerate(policy.points):
            per_holder[slot].append(evaluate_polynomial(poly, x, prime))
    return [KeyShareBundle(holder=x, values=tuple(vals))
            for x, vals in zip(policy.points, per_holder)]


def reconstruct_secret_key(bundles: list[KeyShareBundle], policy: SharingPolicy,
                           params: FheParams) -> RingElement:
    """Rebuild a ternary secret key from any t coefficient-share bundles."""
    if len(bundles) < policy.t:
        raise InsufficientShares(f"need {policy.t} bundles, got {len(bundles)}")
    chosen = sorted(bundles, key=lambda b: b.holder)[:policy.t]
    if len({b.holder for b in chosen}) != len(chosen):
        raise ValueError("duplicate share holders")
    prime = policy.prime
    weights = lagrange_weights_at_zero([b.holder for b in chosen], prime)
    coeffs = []
    for i in range(params.ring_degree):
        value = sum(w * b.values[i] for w, b in zip(weights, chosen)) % prime
        if value > prime // 2:
            value -= prime
        coeffs.append(value)
    return RingElement.from_coeffs(coeffs, params.ciphertext_modulus)


def reshare_key_bundles(bundles: list[KeyShareBundle], old_policy: SharingPolicy,
                        new_policy: SharingPolicy,
                        rng: random.Random) -> list[KeyShareBundle]:
    """Re-key the coefficient-wise sharing to a new member set.

    Each old holder re-shares every coefficient share under the new policy;
    the new bundles are the Lagrange-weighted column sums, so the underlying
    secret key never materialises.
    """
    if len(bundles) < old_policy.t:
        raise InsufficientShares(
            f"need {old_policy.t} bundles to reshare, got {len(bundles)}")
    if old_policy.prime != new_policy.prime:
        raise ValueError("resharing requires a common field")
    prime = old_policy.prime
    weights = lagrange_weights_at_zero([b.holder for b in bundles], prime)
    n_coeff = len(bundles[0].values)
    new_values = [[0] * n_coeff for _ in new_policy.points]
    for c in range(n_coeff):
        for w, bundle in zip(weights, bundles):
            poly = [bundle.values[c]] + [rng.randrange(prime)
                                         for _ in range(new_policy.t - 1)]
            for j, x in enumerate(new_policy.points):
                new_values[j][c] = (new_values[j][c]
                                    + w * evaluate_polynomial(poly, x, prime)) % prime
    return [KeyShareBundle(holder=x, values=tuple(vals))
            for x, vals in zip(new_policy.points, new_values)]


def setup_round(n: int, t: int, params: FheParams, rng: random.Random) -> RoundSetup:
    """Generate per-player key pairs plus the shared aggregation key.

    Every secret key (personal and aggregation) is Shamir-shared t-of-n
    across the member evaluation points 1..n.
    """
    if not 2 <= t <= n:
        raise ValueError(f"need 2 <= t <= n, got t={t}, n={n}")
    policy = SharingPolicy(n=n, t=t)
    players = []
    for player_id in policy.points:
        keys = keygen(params, rng)
        bundles = share_secret_key(keys.secret_key, policy, rng)
        players.append(PlayerCrypto(player_id=player_id, keys=keys,
                                    key_shares=tuple(bundles)))
    agg = keygen(params, rng)
    agg_shares = tuple(share_secret_key(agg.secret_key, policy, rng))
    return RoundSetup(params=params, policy=policy, players=tuple(players),
                      aggregation_keys=agg, aggregation_shares=agg_shares)


def _vote_bit(vote) -> int:
    if isinstance(vote, Vote):
        return 1 if vote is Vote.TOP else 0
    if vote in (0, 1):
        return int(vote)
    raise ValueError("vote must be Vote.TOP/Vote.BOT or a 0/1 bit")


def encrypt_strategy(setup: RoundSetup, player_id: int, vote,
                     rng: random.Random, nonce: int) -> EncryptedStrategy:
    """Encrypt a single vote bit under the round's aggregation key."""
    bit = _vote_bit(vote)
    ct = encrypt(setup.aggregation_keys.public_key, encode_int(bit, setup.params),
                 setup.params, rng)
    return EncryptedStrategy(player_id=player_id, ciphertext=ct, nonce=nonce)


def homomorphic_tally(strategies: list[EncryptedStrategy],
                      weights: list[int] | None = None) -> Ciphertext:
    """Ciphertext of the weighted vote sum; never touches a plaintext."""
    if not strategies:
        raise ValueError("nothing to tally")
    if weights is None:
        weights = [1] * len(strategies)
    if len(weights) != len(strategies):
        raise ValueError("one weight per ballot required")
    params = strategies[0].ciphertext.params
    if any(not 0 <= w < params.plaintext_modulus for w in weights):
        raise ValueError("weights must be plaintext-range integers")
    acc = None
    for strategy, weight in zip(strategies, weights):
        term = hom_mul_plain(strategy.ciphertext, weight)
        acc = term if acc is None else hom_add(acc, term)
    return acc


def ciphertext_digest(ct: Ciphertext) -> str:
    return hashlib.sha256(wire.encode_ciphertext(ct)).hexdigest()


def _binding_digest(ct_digest: str, contributors: tuple[int, ...],
                    plaintext: tuple[int, ...]) -> str:
    h = hashlib.sha256()
    h.update(ct_digest.encode())
    h.update(b"|" + ",".join(str(x) for x in contributors).encode())
    h.update(b"|" + ",".join(str(v) for v in plaintext).encode())
    return h.hexdigest()


def threshold_decrypt(ct: Ciphertext, bundles: list[KeyShareBundle],
                      policy: SharingPolicy,
                      params: FheParams) -> tuple[RingElement, DecryptionTranscript]:
    """Open a ciphertext from t key-share bundles, emitting a transcript.

    Uses the t lowest holder ids among the supplied bundles so the
    transcript names a deterministic contributor set.
    """
    secret = reconstruct_secret_key(bundles, policy, params)
    plaintext = decrypt(secret, ct)
    contributors = tuple(sorted(b.holder for b in bundles)[:policy.t])
    ct_digest = ciphertext_digest(ct)
    residues = tuple(plaintext.residues())
    transcript = DecryptionTranscript(
        ciphertext_digest=ct_digest,
        contributors=contributors,
        plaintext=residues,
        recomputation_digest=_binding_digest(ct_digest, contributors, residues),
    )
    return plaintext, transcript


def verify_transcript(transcript: DecryptionTranscript, ct: Ciphertext,
                      bundles: list[KeyShareBundle], policy: SharingPolicy,
                      params: FheParams) -> bool:
    """Rerun the threshold decryption from the listed shares and compare."""
    if ciphertext_digest(ct) != transcript.ciphertext_digest:
        return False
    by_holder = {b.holder: b for b in bundles}
    try:
        chosen = [by_holder[x] for x in transcript.contributors]
        secret = reconstruct_secret_key(chosen, policy, params)
        plaintext = decrypt(secret, ct)
    except (KeyError, InsufficientShares):
        return False
    residues = tuple(plaintext.residues())
    if residues != transcript.plaintext:
        return False
    expected = _binding_digest(transcript.ciphertext_digest,
                               transcript.contributors, residues)
    return expected == transcript.recomputation_digest
