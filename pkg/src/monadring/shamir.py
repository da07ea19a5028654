"""Shamir (n,t) threshold sharing over a prime field, with resharing.

The secret sits in the constant term of a random degree-(t-1) polynomial;
any t evaluations reconstruct it by Lagrange interpolation at zero.
Resharing converts an (n,t) sharing into an (n',t') one without ever
moving the original shares: each old holder re-shares its own share, and
the resulting share-of-share matrix collapses column-wise under the old
set's Lagrange weights.
"""

from __future__ import annotations

import random
from dataclasses import dataclass


class InsufficientShares(Exception):
    """Fewer shares supplied than the policy threshold."""


class DuplicatePoint(Exception):
    """Two shares claim the same evaluation point."""


DEFAULT_PRIME = (1 << 61) - 1  # Mersenne prime: fast reduction, ample headroom

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin for n < 3.3e24."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class FieldParams:
    prime: int = DEFAULT_PRIME

    def __post_init__(self):
        if not is_prime(self.prime):
            raise ValueError(f"{self.prime} is not prime")


@dataclass(frozen=True)
class Share:
    """One evaluation point (x, P(x)); x = 0 is the secret itself and is banned."""

    x: int
    y: int

    def __post_init__(self):
        if self.x == 0:
            raise ValueError("share point x must be nonzero")


@dataclass(frozen=True)
class SharingPolicy:
    n: int
    t: int
    field: FieldParams = FieldParams()
    points: tuple[int, ...] = ()

    def __post_init__(self):
        if not 1 <= self.t <= self.n:
            raise ValueError(f"need 1 <= t <= n, got t={self.t}, n={self.n}")
        if not self.points:
            object.__setattr__(self, "points", tuple(range(1, self.n + 1)))
        if len(self.points) != self.n:
            raise ValueError("policy needs one evaluation point per share")
        if len(set(self.points)) != self.n or 0 in self.points:
            raise ValueError("evaluation points must be distinct and nonzero")
        if any(not 0 < x < self.field.prime for x in self.points):
            raise ValueError("evaluation points must be reduced field elements")

    @property
    def prime(self) -> int:
        return self.field.prime


def evaluate_polynomial(coeffs: list[int], x: int, prime: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % prime
    return acc


def share(secret: int, policy: SharingPolicy, rng: random.Random,
          coefficients: list[int] | None = None) -> list[Share]:
    """Split a secret into policy.n shares.

    ``coefficients`` is a diagnostics hook pinning the whole polynomial
    (constant term must equal the secret); normally the t-1 non-constant
    coefficients are drawn uniformly from the field.
    """
    prime = policy.prime
    if not 0 <= secret < prime:
        raise ValueError("secret must be a reduced field element")
    if coefficients is None:
        coefficients = [secret] + [rng.randrange(prime) for _ in range(policy.t - 1)]
    else:
        coefficients = list(coefficients)
        if len(coefficients) != policy.t or coefficients[0] % prime != secret:
            raise ValueError("pinned coefficients must have length t and constant term == secret")
    return [Share(x, evaluate_polynomial(coefficients, x, prime)) for x in policy.points]


def lagrange_weights_at_zero(xs: list[int], prime: int) -> list[int]:
    """Weights w_i with sum(w_i * P(x_i)) == P(0) for deg(P) < len(xs)."""
    weights = []
    for i, xi in enumerate(xs):
        num = 1
        den = 1
        for j, xj in enumerate(xs):
            if i == j:
                continue
            num = num * (-xj) % prime
            den = den * (xi - xj) % prime
        weights.append(num * pow(den, -1, prime) % prime)
    return weights


def reconstruct(shares: list[Share], policy: SharingPolicy) -> int:
    """Interpolate P(0) from at least t shares with distinct points."""
    if len(shares) < policy.t:
        raise InsufficientShares(f"need {policy.t} shares, got {len(shares)}")
    xs = [s.x for s in shares]
    if len(set(xs)) != len(xs):
        raise DuplicatePoint("shares contain repeated evaluation points")
    prime = policy.prime
    weights = lagrange_weights_at_zero(xs, prime)
    return sum(w * s.y for w, s in zip(weights, shares)) % prime


@dataclass(frozen=True)
class ReshareMatrix:
    """Share-of-share cells s'_{i,j} for old holder x_i and new point x'_j.

    Any t rows combined with their own Lagrange weights give a consistent
    (n',t') sharing of the original secret, so any t x t' submatrix
    reconstructs it.
    """

    row_points: tuple[int, ...]
    col_points: tuple[int, ...]
    cells: tuple[tuple[int, ...], ...]
    old_policy: SharingPolicy
    new_policy: SharingPolicy

    def collapse(self, row_xs: list[int] | None = None) -> list[Share]:
        """New shares from the chosen rows (all rows by default)."""
        if row_xs is None:
            row_xs = list(self.row_points)
        if len(row_xs) < self.old_policy.t:
            raise InsufficientShares(
                f"need {self.old_policy.t} rows, got {len(row_xs)}")
        prime = self.old_policy.prime
        index = {x: i for i, x in enumerate(self.row_points)}
        rows = [index[x] for x in row_xs]
        weights = lagrange_weights_at_zero(row_xs, prime)
        shares = []
        for j, xj in enumerate(self.col_points):
            y = sum(w * self.cells[i][j] for w, i in zip(weights, rows)) % prime
            shares.append(Share(xj, y))
        return shares


def reshare(old_shares: list[Share], old_policy: SharingPolicy,
            new_policy: SharingPolicy, rng: random.Random) -> tuple[ReshareMatrix, list[Share]]:
    """Re-key an (n,t) sharing to (n',t') without revealing the secret.

    Every supplied old holder re-shares its own share value under the new
    policy; the original shares themselves never leave their rows.
    """
    if len(old_shares) < old_policy.t:
        raise InsufficientShares(
            f"need {old_policy.t} old shares, got {len(old_shares)}")
    if old_policy.prime != new_policy.prime:
        raise ValueError("resharing requires a common field")
    xs = [s.x for s in old_shares]
    if len(set(xs)) != len(xs):
        raise DuplicatePoint("old shares contain repeated evaluation points")
    rows = []
    for s in old_shares:
        row = share(s.y, new_policy, rng)
        rows.append(tuple(r.y for r in row))
    matrix = ReshareMatrix(
        row_points=tuple(xs),
        col_points=new_policy.points,
        cells=tuple(rows),
        old_policy=old_policy,
        new_policy=new_policy,
    )
    return matrix, matrix.collapse()
