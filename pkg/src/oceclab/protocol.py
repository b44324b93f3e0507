"""Meter-side and gateway-side state machines for registration and the
per-interval authentication run, including identity/challenge/key evolution.

The meter keeps nothing in nonvolatile memory but its current 32-byte
identity; every session it regenerates the session key by re-running its PUF
on the gateway-stored challenge, proves freshness through the two verifiers,
derives next-interval identity/challenge/key, and commits the new identity.
The gateway holds one (id, challenge, key) record per meter and replaces it
atomically on a verified session.

Commit ordering is deliberately optimistic on the meter: the new identity is
committed as soon as the final packet is handed to the channel, so a lost
final packet desynchronizes the pair.  That behavior is the default; an
opt-in recovery extension (``recovery_mode``) keeps the previous identity as
a fallback on the meter and retains the superseded gateway record until the
new identity is first used.  Reports flag the extension whenever it is on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import puf as pufmod
from .codec import (
    C_LEN, ID_LEN, K_LEN, MSG_LEN, NONCE_LEN, RAND_LEN,
    Msg1, Msg2, Msg3, hash_fields, new_prng, prng_bytes, xor_stream,
)
from .keystore import Keystore, NgRecord
from .puf import PufInstance, ocec_response

EventSink = Callable[[dict], None] | None


class ProtocolError(Exception):
    """Base class for protocol-state violations."""


class AlreadyRegistered(ProtocolError):
    pass


class Busy(ProtocolError):
    """A session is already in progress on this meter."""


class NoSession(ProtocolError):
    """The meter received a gateway packet with no session open."""


class VerifierMismatch(ProtocolError):
    """A verifier failed to check out; possible tampering or desync."""


class NoPendingSession(ProtocolError):
    """The gateway received a final packet with no matching pending context."""


@dataclass
class OpCounters:
    """Cumulative operation tallies; consumers diff snapshots per session.

    The nonce drawn in the session hello is tallied separately from ``prng``,
    which counts only the meter's in-session random number.
    """

    hash: int = 0
    prng: int = 0
    puf: int = 0
    nonce: int = 0

    def snapshot(self) -> "OpCounters":
        return replace(self)

    def delta(self, earlier: "OpCounters") -> "OpCounters":
        return OpCounters(
            hash=self.hash - earlier.hash,
            prng=self.prng - earlier.prng,
            puf=self.puf - earlier.puf,
            nonce=self.nonce - earlier.nonce,
        )

    def as_dict(self) -> dict:
        return {"hash": self.hash, "prng": self.prng, "puf": self.puf, "nonce": self.nonce}


def _emit(sink: EventSink, event: dict) -> None:
    if sink is not None:
        sink(event)


class SmDevice:
    """One smart meter: a PUF plus a 32-byte nonvolatile identity.

    Single-owner, single-session.  Volatile session material lives in
    ``_scratch`` and is erased on commit and on abort; ``memory_dump``
    returns the nonvolatile contents only.
    """

    def __init__(
        self,
        puf: PufInstance,
        prng,
        noise_rng: np.random.Generator | None = None,
        name: str = "sm",
        temp_c: float = 25.0,
        response_len: int = pufmod.RESPONSE_LEN,
        t_max: int = pufmod.T_MAX,
        recovery_mode: bool = False,
        event_sink: EventSink = None,
    ):
        self.puf = puf
        self.prng = prng
        self.noise_rng = noise_rng
        self.name = name
        self.temp_c = temp_c
        self.response_len = response_len
        self.t_max = t_max
        self.recovery_mode = recovery_mode
        self.event_sink = event_sink
        self.counters = OpCounters()
        self.nonvolatile_id: bytes | None = None
        self.fallback_id: bytes | None = None  # recovery extension only
        self.audit_sink: dict | None = None
        self._scratch: dict | None = None

    # -- instrumented primitive helpers ------------------------------------

    def _hash(self, fields, widths) -> bytes:
        self.counters.hash += 1
        return hash_fields(fields, widths)

    def _ocec(self, challenge: bytes) -> bytes:
        self.counters.puf += 1
        resp = ocec_response(
            self.puf, challenge, temp_c=self.temp_c, rng=self.noise_rng,
            response_len=self.response_len, t_max=self.t_max,
        )
        return resp.to_bytes()

    def _audit(self, **values: bytes) -> None:
        if self.audit_sink is not None:
            self.audit_sink.update(values)

    # -- memory model -------------------------------------------------------

    @property
    def registered(self) -> bool:
        return self.nonvolatile_id is not None

    @property
    def in_session(self) -> bool:
        return self._scratch is not None

    def memory_dump(self) -> bytes:
        """Exactly the nonvolatile contents: the current identity, plus the
        fallback identity when the recovery extension holds one."""
        if self.nonvolatile_id is None:
            return b""
        dump = self.nonvolatile_id
        if self.recovery_mode and self.fallback_id is not None:
            dump += self.fallback_id
        return dump

    def _wipe(self) -> None:
        self._scratch = None

    def abort(self) -> None:
        """Local abort (timeout or reset): erase all session scratch."""
        if self._scratch is not None:
            self._wipe()
            _emit(self.event_sink, {"evt": "sm_abort", "meter": self.name})

    def fallback_to_previous(self) -> bool:
        """Recovery extension: retry under the previous identity after the
        gateway went silent.  Returns False when no fallback is held."""
        if not self.recovery_mode or self.fallback_id is None:
            return False
        if self.fallback_id == self.nonvolatile_id:
            return False
        self.nonvolatile_id = self.fallback_id
        _emit(self.event_sink, {"evt": "sm_fallback", "meter": self.name})
        return True

    # -- protocol steps -----------------------------------------------------

    def start(self) -> Msg1:
        """Open a session: send current identity plus a fresh nonce."""
        if not self.registered:
            raise ProtocolError("meter not registered")
        if self.in_session:
            raise Busy("session already in progress")
        self.counters.nonce += 1
        nonce = prng_bytes(self.prng, NONCE_LEN)
        self._scratch = {"nonce": nonce}
        _emit(self.event_sink, {"evt": "msg1", "meter": self.name,
                                "id": self.nonvolatile_id.hex()})
        return Msg1(sender_id=self.nonvolatile_id, nonce=nonce)

    def on_msg2(self, msg2: Msg2, report: bytes) -> Msg3:
        """Verify the gateway, evolve identity/challenge/key, emit the final
        packet carrying the 16-byte data report, and commit the new identity.

        On verifier mismatch the session aborts after exactly one PUF
        evaluation and two hashes, and all scratch is wiped.
        """
        if not self.in_session:
            raise NoSession("no session in progress")
        if len(report) != MSG_LEN:
            raise ValueError(f"report must be {MSG_LEN} bytes")
        nonce = self._scratch["nonce"]

        response = self._ocec(msg2.challenge)                              # puf 1
        key = self._hash([response], [self.response_len // 8])             # hash 1
        plain = xor_stream(msg2.cipher, key)
        r_ng = plain[RAND_LEN:]
        control = xor_stream(plain[:RAND_LEN], r_ng)
        expect = self._hash(                                               # hash 2
            [key, msg2.challenge, control, r_ng, nonce],
            [K_LEN, C_LEN, MSG_LEN, RAND_LEN, NONCE_LEN],
        )
        if expect != msg2.verifier:
            self._wipe()
            _emit(self.event_sink, {"evt": "sm_reject", "meter": self.name,
                                    "reason": "verifier_mismatch"})
            raise VerifierMismatch("gateway verifier mismatch")

        self.counters.prng += 1
        r_sm = prng_bytes(self.prng, RAND_LEN)
        current_id = self.nonvolatile_id
        next_id = self._hash([current_id, key, r_sm],                      # hash 3
                             [ID_LEN, K_LEN, RAND_LEN])
        next_challenge = self._hash([next_id, r_ng], [ID_LEN, RAND_LEN])   # hash 4
        next_response = self._ocec(next_challenge)                         # puf 2
        next_key = self._hash([next_response], [self.response_len // 8])   # hash 5
        key_mask = xor_stream(
            next_key, self._hash([key, r_sm], [K_LEN, RAND_LEN])           # hash 6
        )
        pad = self._hash([key], [K_LEN])                                   # hash 7
        cipher = xor_stream(
            r_sm + xor_stream(xor_stream(r_sm, r_ng), report), pad
        )
        verifier = self._hash(                                             # hash 8
            [next_key, next_challenge, report, next_id, r_sm],
            [K_LEN, C_LEN, MSG_LEN, ID_LEN, RAND_LEN],
        )
        msg3 = Msg3(key_mask=key_mask, cipher=cipher, verifier=verifier)

        self._audit(k=key, k_next=next_key, r_ng=r_ng, r_sm=r_sm, m=control,
                    d=report, response=response, response_next=next_response,
                    c=msg2.challenge, c_next=next_challenge, id_next=next_id)

        # Commit: identity evolves as soon as the packet leaves; everything
        # else is erased.  A lost final packet therefore desynchronizes the
        # pair unless the recovery extension is on.
        if self.recovery_mode:
            self.fallback_id = current_id
        self.nonvolatile_id = next_id
        self._wipe()
        _emit(self.event_sink, {"evt": "msg3", "meter": self.name,
                                "next_id": next_id.hex()})
        return msg3


@dataclass
class PendingCtx:
    link: str
    record: NgRecord
    nonce: bytes
    r_ng: bytes
    control: bytes


class NgState:
    """The neighborhood gateway: meter database plus per-meter pending
    session contexts.

    At most one pending context per meter id; a new hello supersedes the old
    one.  Unknown identities are dropped silently so the gateway never acts
    as an id-probing oracle.
    """

    def __init__(
        self,
        store: Keystore | None = None,
        prng=None,
        recovery_mode: bool = False,
        event_sink: EventSink = None,
    ):
        self.store = store if store is not None else Keystore()
        self.prng = prng if prng is not None else new_prng()
        self.recovery_mode = recovery_mode
        self.event_sink = event_sink
        self.counters = OpCounters()
        self.audit_sink: dict | None = None
        self._pending: dict[str, PendingCtx] = {}
        self._pending_link_of: dict[bytes, str] = {}
        # recovery extension bookkeeping
        self._retire_after_use: dict[bytes, bytes] = {}  # new id -> old id
        self._orphan_of: dict[bytes, bytes] = {}         # old id -> unused new id

    def _hash(self, fields, widths) -> bytes:
        self.counters.hash += 1
        return hash_fields(fields, widths)

    def _audit(self, **values: bytes) -> None:
        if self.audit_sink is not None:
            self.audit_sink.update(values)

    def _drop_pending_for(self, meter_id: bytes) -> None:
        link = self._pending_link_of.pop(meter_id, None)
        if link is not None:
            self._pending.pop(link, None)

    def on_msg1(self, msg1: Msg1, link: str, control_message: bytes) -> Msg2 | None:
        """Answer a session hello, or return None (silent drop) for an
        unknown identity."""
        if len(control_message) != MSG_LEN:
            raise ValueError(f"control_message must be {MSG_LEN} bytes")
        if self.recovery_mode and msg1.sender_id in self._retire_after_use:
            old_id = self._retire_after_use.pop(msg1.sender_id)
            if old_id in self.store:
                self.store.delete(old_id)
            self._orphan_of.pop(old_id, None)
        record = self.store.lookup(msg1.sender_id)
        if record is None:
            _emit(self.event_sink, {"evt": "ng_drop", "link": link,
                                    "reason": "unknown_id"})
            return None
        # Supersede any pending context for the same meter id.
        self._drop_pending_for(record.id)
        stale = self._pending.pop(link, None)
        if stale is not None:
            self._pending_link_of.pop(stale.record.id, None)

        self.counters.prng += 1
        r_ng = prng_bytes(self.prng, RAND_LEN)
        cipher = xor_stream(
            xor_stream(control_message, r_ng) + r_ng, record.key
        )
        verifier = self._hash(
            [record.key, record.challenge, control_message, r_ng, msg1.nonce],
            [K_LEN, C_LEN, MSG_LEN, RAND_LEN, NONCE_LEN],
        )
        ctx = PendingCtx(link=link, record=record, nonce=msg1.nonce,
                         r_ng=r_ng, control=control_message)
        self._pending[link] = ctx
        self._pending_link_of[record.id] = link
        self._audit(r_ng=r_ng, m=control_message, k=record.key, c=record.challenge)
        _emit(self.event_sink, {"evt": "msg2", "link": link})
        return Msg2(challenge=record.challenge, verifier=verifier, cipher=cipher)

    def on_msg3(self, msg3: Msg3, link: str) -> bytes:
        """Verify the meter's final packet; on success atomically replace the
        meter's record and return the delivered 16-byte report.

        The pending context is consumed either way; on failure the stored
        record is left untouched.
        """
        ctx = self._pending.pop(link, None)
        if ctx is None:
            _emit(self.event_sink, {"evt": "ng_reject", "link": link,
                                    "reason": "no_pending_session"})
            raise NoPendingSession(f"no pending session on link {link}")
        self._pending_link_of.pop(ctx.record.id, None)

        key = ctx.record.key
        pad = self._hash([key], [K_LEN])
        plain = xor_stream(msg3.cipher, pad)
        r_sm = plain[:RAND_LEN]
        report = xor_stream(xor_stream(plain[RAND_LEN:], r_sm), ctx.r_ng)
        next_key = xor_stream(msg3.key_mask,
                              self._hash([key, r_sm], [K_LEN, RAND_LEN]))
        next_id = self._hash([ctx.record.id, key, r_sm],
                             [ID_LEN, K_LEN, RAND_LEN])
        next_challenge = self._hash([next_id, ctx.r_ng], [ID_LEN, RAND_LEN])
        expect = self._hash(
            [next_key, next_challenge, report, next_id, r_sm],
            [K_LEN, C_LEN, MSG_LEN, ID_LEN, RAND_LEN],
        )
        if expect != msg3.verifier:
            _emit(self.event_sink, {"evt": "ng_reject", "link": link,
                                    "reason": "verifier_mismatch"})
            raise VerifierMismatch("meter verifier mismatch")

        new_record = NgRecord(id=next_id, challenge=next_challenge, key=next_key)
        old_id = ctx.record.id
        if self.recovery_mode:
            # Retain the superseded record until the new identity is first
            # used; garbage-collect any earlier unused successor of this id.
            prior_orphan = self._orphan_of.pop(old_id, None)
            if prior_orphan is not None and prior_orphan in self.store:
                self.store.delete(prior_orphan)
                self._retire_after_use.pop(prior_orphan, None)
            self.store.insert(new_record)
            self._orphan_of[old_id] = next_id
            self._retire_after_use[next_id] = old_id
        else:
            self.store.replace(old_id, new_record)
        self._audit(k_next=next_key, r_sm=r_sm, d=report,
                    id_next=next_id, c_next=next_challenge)
        _emit(self.event_sink, {"evt": "ng_accept", "link": link,
                                "next_id": next_id.hex()})
        return report


def register(sm: SmDevice, ng: NgState, temp_c: float | None = None) -> NgRecord:
    """Trusted-channel registration (in-process call).

    The gateway picks a random identity and challenge; the meter evaluates
    its PUF once, hashes the response into the initial key, and keeps only
    the identity in nonvolatile memory.
    """
    if sm.registered:
        raise AlreadyRegistered(f"meter {sm.name} already registered")
    if temp_c is not None:
        sm.temp_c = temp_c
    while True:
        meter_id = prng_bytes(ng.prng, ID_LEN)
        if ng.store.lookup(meter_id) is None:
            break
    challenge = prng_bytes(ng.prng, C_LEN)
    response = sm._ocec(challenge)
    key = sm._hash([response], [sm.response_len // 8])
    record = NgRecord(id=meter_id, challenge=challenge, key=key)
    ng.store.insert(record)
    sm.nonvolatile_id = meter_id
    _emit(ng.event_sink, {"evt": "registered", "meter": sm.name,
                          "id": meter_id.hex()})
    return record
