"""Schnorr signatures and CoSi collective signing over a prime-order group.

Everything here is deterministic: key generation is driven by a seed and
nonces are derived from secret material plus a caller-supplied seed, so a
simulation replays bit-exactly.

Canonical encoding of signed material (see :func:`encode_fields`): every
field is rendered as a 4-byte big-endian length followed by its bytes;
integers are rendered big-endian in the minimal number of bytes (at least
one). Fields are concatenated in order.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Tuple, Union

try:
    from gmpy2 import powmod as _powmod

    def _pow(base: int, exp: int, mod: int) -> int:
        return int(_powmod(base, exp, mod))

except ImportError:  # pragma: no cover - gmpy2 is a declared dependency
    _pow = pow


class CryptoError(ValueError):
    pass


@dataclass(frozen=True)
class GroupParams:
    p: int
    q: int
    g: int

    def validate(self) -> None:
        if (self.p - 1) % self.q != 0:
            raise CryptoError("q must divide p - 1")
        if self.g % self.p == 1 or _pow(self.g, self.q, self.p) != 1:
            raise CryptoError("g must generate the order-q subgroup")

    def exp(self, base: int, e: int) -> int:
        return _pow(base, e, self.p)

    @property
    def element_size(self) -> int:
        return (self.p.bit_length() + 7) // 8


# Hand-checkable group for unit vectors.
TOY_GROUP = GroupParams(p=23, q=11, g=2)

# 256-bit safe prime p = 2q + 1, g = 4 generates the quadratic residues.
# Simulation-grade only: a 256-bit prime field is far too small for real use.
DEFAULT_GROUP = GroupParams(
    p=0xEC6324D37431177862614201F306819ED06C62E31709C5D35C2F89BC466CF317,
    q=0x76319269BA188BBC3130A100F98340CF683631718B84E2E9AE17C4DE2336798B,
    g=4,
)


Field = Union[int, bytes, str]


def encode_fields(*fields: Field) -> bytes:
    out = bytearray()
    for f in fields:
        if isinstance(f, bool):
            f = int(f)
        if isinstance(f, int):
            if f < 0:
                raise CryptoError("negative integers are not encodable")
            raw = f.to_bytes(max(1, (f.bit_length() + 7) // 8), "big")
        elif isinstance(f, str):
            raw = f.encode()
        elif isinstance(f, (tuple, list)):
            raw = encode_fields(*f)
        else:
            raw = bytes(f)
        out += len(raw).to_bytes(4, "big")
        out += raw
    return bytes(out)


def _hash_to_scalar(group: GroupParams, *fields: Field) -> int:
    return int.from_bytes(hashlib.sha256(encode_fields(*fields)).digest(), "big") % group.q


def challenge(group: GroupParams, commitment: int, message: bytes) -> int:
    """c = H(R || message) mod q."""
    return _hash_to_scalar(group, commitment, message)


@dataclass(frozen=True)
class KeyPair:
    sk: int
    pk: int


@dataclass(frozen=True)
class Signature:
    commitment: int
    response: int


def keypair_from_secret(sk: int, group: GroupParams = DEFAULT_GROUP) -> KeyPair:
    if not 1 <= sk < group.q:
        raise CryptoError("secret key outside [1, q-1]")
    return KeyPair(sk=sk, pk=group.exp(group.g, sk))


def keygen(seed: Union[int, str, bytes], group: GroupParams = DEFAULT_GROUP) -> KeyPair:
    rng = random.Random(encode_fields("keygen", seed))
    return keypair_from_secret(rng.randrange(1, group.q), group)


def derive_nonce(group: GroupParams, sk: int, *seed: Field) -> int:
    """Deterministic nonce in [1, q-1] bound to the secret key and seed."""
    return 1 + _hash_to_scalar(group, "nonce", sk, *seed) % (group.q - 1)


def sign_with_nonce(
    sk: int,
    k: int,
    message: bytes,
    group: GroupParams = DEFAULT_GROUP,
    forced_challenge: Optional[int] = None,
) -> Signature:
    if not 1 <= k < group.q:
        raise CryptoError("nonce outside [1, q-1]")
    r = group.exp(group.g, k)
    c = challenge(group, r, message) if forced_challenge is None else forced_challenge
    return Signature(commitment=r, response=(k + c * sk) % group.q)


def sign(
    sk: int,
    message: bytes,
    nonce_seed: Field = 0,
    group: GroupParams = DEFAULT_GROUP,
    forced_challenge: Optional[int] = None,
) -> Signature:
    k = derive_nonce(group, sk, nonce_seed, message)
    return sign_with_nonce(sk, k, message, group, forced_challenge)


def verify(
    pk: int,
    message: bytes,
    sig: Signature,
    group: GroupParams = DEFAULT_GROUP,
    forced_challenge: Optional[int] = None,
) -> bool:
    if not isinstance(sig, Signature):
        return False
    if forced_challenge is not None:
        return _verify_eq(group, pk, sig.commitment, sig.response, forced_challenge)
    return _verify_cached(group, pk, message, sig.commitment, sig.response)


def _verify_eq(group: GroupParams, pk: int, r: int, s: int, c: int) -> bool:
    if not (0 < r < group.p and 0 <= s < group.q):
        return False
    return group.exp(group.g, s) == (r * group.exp(pk, c)) % group.p


# Broadcast messages are verified by every recipient; the check is a pure
# function so memoising it does not change any outcome.
@lru_cache(maxsize=1 << 16)
def _verify_cached(group: GroupParams, pk: int, message: bytes, r: int, s: int) -> bool:
    return _verify_eq(group, pk, r, s, challenge(group, r, message))


# ---------------------------------------------------------------------------
# CoSi


@dataclass(frozen=True)
class ParticipationBitmap:
    bits: Tuple[bool, ...]

    @classmethod
    def from_members(cls, n: int, members: Iterable[int]) -> "ParticipationBitmap":
        m = set(members)
        if any(not 0 <= i < n for i in m):
            raise CryptoError("bitmap member outside cluster")
        return cls(tuple(i in m for i in range(n)))

    @property
    def popcount(self) -> int:
        return sum(self.bits)

    @property
    def members(self) -> Tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)

    def __contains__(self, node: int) -> bool:
        return 0 <= node < len(self.bits) and self.bits[node]

    def encode(self) -> bytes:
        out = 0
        for i, b in enumerate(self.bits):
            if b:
                out |= 1 << i
        return encode_fields(len(self.bits), out)

    def __str__(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


@dataclass(frozen=True)
class CollectiveSignature:
    bitmap: ParticipationBitmap
    aggregate_commitment: int
    aggregate_response: int


def cosi_commit(sk: int, round_seed: Field, group: GroupParams = DEFAULT_GROUP) -> Tuple[int, int]:
    """Pick the per-round secret ``v`` and its commitment ``V = g^v``."""
    v = derive_nonce(group, sk, "cosi", round_seed)
    return v, group.exp(group.g, v)


def cosi_aggregate_commitments(commitments: Sequence[int], group: GroupParams = DEFAULT_GROUP) -> int:
    if not commitments:
        raise CryptoError("cannot aggregate an empty participant set")
    acc = 1
    for v in commitments:
        acc = (acc * v) % group.p
    return acc


def cosi_challenge(aggregate_commitment: int, message: bytes, group: GroupParams = DEFAULT_GROUP) -> int:
    return challenge(group, aggregate_commitment, message)


def cosi_respond(v: int, c: int, sk: int, group: GroupParams = DEFAULT_GROUP) -> int:
    return (v + c * sk) % group.q


def cosi_verify_partial(
    pk: int, commitment: int, response: int, c: int, group: GroupParams = DEFAULT_GROUP
) -> bool:
    return _verify_eq(group, pk, commitment, response, c)


def cosi_aggregate_responses(responses: Sequence[int], group: GroupParams = DEFAULT_GROUP) -> int:
    if not responses:
        raise CryptoError("cannot aggregate an empty participant set")
    return sum(responses) % group.q


def aggregate_public_key(pks: Sequence[int], bitmap: ParticipationBitmap, group: GroupParams) -> int:
    acc = 1
    for i in bitmap.members:
        acc = (acc * pks[i]) % group.p
    return acc


def cosi_verify(
    pks: Sequence[int],
    bitmap: ParticipationBitmap,
    message: bytes,
    aggregate_commitment: int,
    aggregate_response: int,
    group: GroupParams = DEFAULT_GROUP,
    forced_challenge: Optional[int] = None,
) -> bool:
    if len(bitmap.bits) != len(pks) or bitmap.popcount == 0:
        return False
    agg_pk = aggregate_public_key(pks, bitmap, group)
    if forced_challenge is not None:
        return _verify_eq(group, agg_pk, aggregate_commitment, aggregate_response, forced_challenge)
    return _verify_cached(group, agg_pk, message, aggregate_commitment, aggregate_response)


def verify_collective(
    pks: Sequence[int], message: bytes, cosig: CollectiveSignature, group: GroupParams = DEFAULT_GROUP
) -> bool:
    return cosi_verify(
        pks, cosig.bitmap, message, cosig.aggregate_commitment, cosig.aggregate_response, group
    )

