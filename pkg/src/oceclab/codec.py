"""Fixed-width primitives and bit-exact packet layouts shared by both
protocol sides.

Every field the protocol hashes or XORs has a pinned width, so plain
concatenation is an unambiguous encoding.  The hash is standard SHA-256 for
cross-implementation packet compatibility.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Sequence

# Field widths in bytes.  The two 96-byte packets force the 32-byte triple;
# the 16-byte halves are forced by the concatenation structure of the
# ciphertext fields (E = 2 * RAND = K).
HASH_LEN = 32
ID_LEN = 32
C_LEN = 32
K_LEN = 32
V_LEN = 32
F_LEN = 32
E_LEN = 32
NONCE_LEN = 16
RAND_LEN = 16
MSG_LEN = 16

MSG1_LEN = ID_LEN + NONCE_LEN            # 48
MSG2_LEN = C_LEN + V_LEN + E_LEN         # 96
MSG3_LEN = F_LEN + E_LEN + V_LEN         # 96
SESSION_OVERHEAD = MSG2_LEN + MSG3_LEN   # 192; the 48B hello is not counted

FIELD_SIZES = {
    "HASH_LEN": HASH_LEN, "ID_LEN": ID_LEN, "C_LEN": C_LEN, "K_LEN": K_LEN,
    "V_LEN": V_LEN, "F_LEN": F_LEN, "E_LEN": E_LEN, "NONCE_LEN": NONCE_LEN,
    "RAND_LEN": RAND_LEN, "MSG_LEN": MSG_LEN,
}


class BadLength(ValueError):
    """A field or packet buffer has the wrong byte length."""


def _require(data: bytes, n: int, what: str) -> bytes:
    if len(data) != n:
        raise BadLength(f"{what} must be {n} bytes, got {len(data)}")
    return data


def hash_fields(fields: Sequence[bytes], widths: Sequence[int] | None = None) -> bytes:
    """SHA-256 over the plain concatenation of fixed-width fields.

    When ``widths`` is given, each field is checked against its declared
    width first; the concatenation is unambiguous because all widths are
    fixed for the protocol's lifetime.
    """
    if widths is not None:
        if len(widths) != len(fields):
            raise BadLength(f"{len(fields)} fields but {len(widths)} declared widths")
        for i, (f, w) in enumerate(zip(fields, widths)):
            _require(f, w, f"field {i}")
    return hashlib.sha256(b"".join(fields)).digest()


def xor_stream(data: bytes, pad: bytes) -> bytes:
    """Bytewise XOR of two equal-length strings (involutive)."""
    if len(data) != len(pad):
        raise BadLength(f"xor operands differ in length: {len(data)} vs {len(pad)}")
    return bytes(a ^ b for a, b in zip(data, pad))


def new_prng(seed: int | None = None) -> random.Random:
    """Draw-source for protocol randoms; seeded runs replay exactly,
    unseeded runs take OS entropy."""
    return random.Random(seed)


def prng_bytes(state: random.Random, n: int) -> bytes:
    """n pseudo-random bytes from the given generator."""
    return state.randbytes(n)


@dataclass(frozen=True)
class Msg1:
    """Session hello: current meter identity plus a fresh nonce."""

    sender_id: bytes
    nonce: bytes

    def __post_init__(self):
        _require(self.sender_id, ID_LEN, "sender_id")
        _require(self.nonce, NONCE_LEN, "nonce")

    def encode(self) -> bytes:
        return self.sender_id + self.nonce

    @classmethod
    def decode(cls, buf: bytes) -> "Msg1":
        _require(buf, MSG1_LEN, "msg1 buffer")
        return cls(sender_id=buf[:ID_LEN], nonce=buf[ID_LEN:])


@dataclass(frozen=True)
class Msg2:
    """Gateway packet: stored challenge, gateway verifier, gateway ciphertext."""

    challenge: bytes
    verifier: bytes
    cipher: bytes

    def __post_init__(self):
        _require(self.challenge, C_LEN, "challenge")
        _require(self.verifier, V_LEN, "verifier")
        _require(self.cipher, E_LEN, "cipher")

    def encode(self) -> bytes:
        return self.challenge + self.verifier + self.cipher

    @classmethod
    def decode(cls, buf: bytes) -> "Msg2":
        _require(buf, MSG2_LEN, "msg2 buffer")
        return cls(
            challenge=buf[:C_LEN],
            verifier=buf[C_LEN:C_LEN + V_LEN],
            cipher=buf[C_LEN + V_LEN:],
        )


@dataclass(frozen=True)
class Msg3:
    """Meter packet: next-key mask, meter ciphertext, meter verifier."""

    key_mask: bytes
    cipher: bytes
    verifier: bytes

    def __post_init__(self):
        _require(self.key_mask, F_LEN, "key_mask")
        _require(self.cipher, E_LEN, "cipher")
        _require(self.verifier, V_LEN, "verifier")

    def encode(self) -> bytes:
        return self.key_mask + self.cipher + self.verifier

    @classmethod
    def decode(cls, buf: bytes) -> "Msg3":
        _require(buf, MSG3_LEN, "msg3 buffer")
        return cls(
            key_mask=buf[:F_LEN],
            cipher=buf[F_LEN:F_LEN + E_LEN],
            verifier=buf[F_LEN + E_LEN:],
        )
