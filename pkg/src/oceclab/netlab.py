"""Deterministic channel between simulated meters and one gateway, with a
scripted adversary.

The lab owns every source of randomness (spawned from one master seed), so a
scenario is a pure function of (seed, script): identical inputs give
identical reports.  The adversary is scripted, not adaptive; the script
vocabulary (drop / duplicate / replay / tamper / inject / leak_ephemerals /
capture_sm) is enough to exercise every channel-control and capture claim
deterministically.

"Attack success" is structural: an adversary-originated packet that a
verifier accepts, or secret recovery beyond the documented ephemeral-leak
allowance.  Gateway replies to replayed hellos, idle-meter ignores, and
failed verifications are all non-successes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .codec import (
    MSG1_LEN, MSG2_LEN, MSG3_LEN, MSG_LEN, RAND_LEN, SESSION_OVERHEAD,
    BadLength, Msg1, Msg2, Msg3, hash_fields, new_prng, prng_bytes, xor_stream,
)
from .config import SimConfig
from .keystore import Keystore
from .protocol import (
    NgState, NoPendingSession, NoSession, OpCounters, SmDevice,
    VerifierMismatch, register,
)
from .puf import PufInstance

MAX_DETAILS = 1000


class ScriptError(ValueError):
    """Malformed adversary script; raised before any execution."""


_ACTION_KINDS = {
    "deliver", "drop", "duplicate", "replay", "tamper", "inject",
    "leak_ephemerals", "capture_sm",
}
_DIRECTIONS = {"sm->ng", "ng->sm"}
_KINDS = {"msg1", "msg2", "msg3"}


@dataclass(frozen=True)
class AdversaryAction:
    """One scripted channel manipulation.

    ``when`` is an AND-combined predicate over the traversing packet:
    ``index`` (global recorded-packet index), ``session``, ``mod``
    ([m, r]: session % m == r) and ``kinds`` (packet kinds).  An empty
    predicate matches every packet in the action's direction.
    """

    kind: str
    target: str = "sm->ng"
    when: dict = field(default_factory=dict)
    byte_offset: int = 0
    xor_mask: int = 0xFF
    stored_index: int = 0
    raw_bytes: bytes = b""

    def validate(self) -> None:
        if self.kind not in _ACTION_KINDS:
            raise ScriptError(f"unknown action kind {self.kind!r}")
        if self.target not in _DIRECTIONS:
            raise ScriptError(f"unknown target {self.target!r}")
        for key in self.when:
            if key not in ("index", "session", "mod", "kinds", "all"):
                raise ScriptError(f"unknown predicate key {key!r}")
        kinds = self.when.get("kinds")
        if kinds is not None and not set(kinds) <= _KINDS:
            raise ScriptError(f"unknown packet kinds {kinds!r}")
        mod = self.when.get("mod")
        if mod is not None and (len(mod) != 2 or mod[0] <= 0 or not 0 <= mod[1] < mod[0]):
            raise ScriptError(f"bad mod predicate {mod!r}")
        if self.kind == "tamper":
            if self.byte_offset < 0:
                raise ScriptError("tamper offset must be >= 0")
            if not 1 <= self.xor_mask <= 0xFF:
                raise ScriptError("tamper mask must be in [1, 255]")
        if self.kind == "replay" and self.stored_index < 0:
            raise ScriptError("replay index must be >= 0")
        if self.kind == "inject" and not self.raw_bytes:
            raise ScriptError("inject needs raw_bytes")

    def matches(self, index: int, session: int, kind: str, direction: str) -> bool:
        if self.target != direction:
            return False
        w = self.when
        if "index" in w and w["index"] != index:
            return False
        if "session" in w and w["session"] != session:
            return False
        if "mod" in w and session % w["mod"][0] != w["mod"][1]:
            return False
        if "kinds" in w and kind not in w["kinds"]:
            return False
        return True

    @classmethod
    def from_dict(cls, obj: dict) -> "AdversaryAction":
        try:
            action = cls(
                kind=obj["kind"],
                target=obj.get("target", "sm->ng"),
                when=obj.get("when", {}),
                byte_offset=obj.get("byte_offset", 0),
                xor_mask=obj.get("xor_mask", 0xFF),
                stored_index=obj.get("stored_index", 0),
                raw_bytes=bytes.fromhex(obj.get("raw_bytes", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScriptError(f"bad action object {obj!r}: {exc}") from exc
        action.validate()
        return action


def compile_script(raw: Sequence[dict | AdversaryAction]) -> tuple[AdversaryAction, ...]:
    """Validate a whole script up front; malformed scripts never execute."""
    out = []
    for item in raw:
        if isinstance(item, AdversaryAction):
            item.validate()
            out.append(item)
        else:
            out.append(AdversaryAction.from_dict(item))
    return tuple(out)


def make_temp_fn(spec) -> Callable[[int, np.random.Generator], float]:
    """Temperature schedule: a constant, a cycled list, or {"uniform": [lo, hi]}."""
    if spec is None:
        return lambda s, rng: 25.0
    if isinstance(spec, (int, float)):
        return lambda s, rng: float(spec)
    if isinstance(spec, (list, tuple)):
        values = [float(v) for v in spec]
        return lambda s, rng: values[s % len(values)]
    if isinstance(spec, dict) and "uniform" in spec:
        lo, hi = (float(v) for v in spec["uniform"])
        return lambda s, rng: float(rng.uniform(lo, hi))
    raise ScriptError(f"bad temperature schedule {spec!r}")


@dataclass
class Packet:
    index: int
    session: int
    kind: str
    direction: str
    link: str
    data: bytes


@dataclass
class Transcript:
    """One session's wire view plus (in audit mode) the intermediate secrets."""

    session: int
    meter: str
    msg1: bytes | None = None
    msg2: bytes | None = None
    msg3: bytes | None = None
    outcome: str = "rejected"
    reason: str | None = None
    report_sent: bytes | None = None
    report_delivered: bytes | None = None
    secrets: dict | None = None
    sm_ops: OpCounters | None = None


@dataclass
class ScenarioReport:
    name: str
    seed: int
    sessions_attempted: int = 0
    sessions_accepted: int = 0
    attacks_launched: int = 0
    attacks_succeeded: int = 0
    details: list = field(default_factory=list)
    bytes_counters: dict = field(default_factory=dict)
    op_counters: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    recovery_extension: bool = False

    def note(self, **detail) -> None:
        if len(self.details) < MAX_DETAILS:
            self.details.append(detail)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "recovery_extension": self.recovery_extension,
            "sessions_attempted": self.sessions_attempted,
            "sessions_accepted": self.sessions_accepted,
            "attacks_launched": self.attacks_launched,
            "attacks_succeeded": self.attacks_succeeded,
            "bytes": self.bytes_counters,
            "ops": self.op_counters,
            "extras": self.extras,
            "details": self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(2, np.uint32).view(np.uint64)[0])


class NetLab:
    """One gateway plus ``meters`` registered meters behind a scripted channel."""

    def __init__(
        self,
        meters: int,
        seed: int,
        config: SimConfig = SimConfig(),
        recovery: bool = False,
        audit: bool = True,
        temps=None,
        keystore: Keystore | None = None,
        event_sink=None,
    ):
        self.config = config
        self.seed = seed
        self.audit = audit
        self.recovery = recovery
        self._root_ss = np.random.SeedSequence(seed)
        ng_ss, temp_ss, payload_ss, adv_ss = self._root_ss.spawn(4)
        self.ng = NgState(
            store=keystore if keystore is not None else Keystore(),
            prng=new_prng(_int_seed(ng_ss)),
            recovery_mode=recovery,
            event_sink=event_sink,
        )
        self.temp_rng = np.random.default_rng(temp_ss)
        self.payload_rng = new_prng(_int_seed(payload_ss))
        self.adv_rng = np.random.default_rng(adv_ss)
        self.temp_fn = make_temp_fn(temps)
        self.event_sink = event_sink
        self.sms: list[SmDevice] = []
        self._ng_ids: list[bytes] = []
        for i in range(meters):
            self._add_meter(f"sm{i:03d}")
        self.recorded: list[Packet] = []

    def _add_meter(self, name: str) -> int:
        puf_ss, prng_ss, noise_ss = self._root_ss.spawn(1)[0].spawn(3)
        sm = SmDevice(
            puf=PufInstance.from_seed(_int_seed(puf_ss), **self.config.puf_kwargs()),
            prng=new_prng(_int_seed(prng_ss)),
            noise_rng=np.random.default_rng(noise_ss) if self.config.noise_enabled else None,
            name=name,
            response_len=self.config.response_len,
            t_max=self.config.t_max,
            recovery_mode=self.recovery,
            event_sink=self.event_sink,
        )
        record = register(sm, self.ng)
        self.sms.append(sm)
        self._ng_ids.append(record.id)
        return len(self.sms) - 1

    def reset_meter(self, idx: int) -> None:
        """Lab maintenance: decommission a desynchronized meter and enroll a
        replacement under the same name (fresh registration)."""
        old_id = self._ng_ids[idx]
        if old_id in self.ng.store:
            self.ng.store.delete(old_id)
        name = self.sms[idx].name
        replacement_idx = self._add_meter(name)
        self.sms[idx] = self.sms.pop(replacement_idx)
        self._ng_ids[idx] = self._ng_ids.pop(replacement_idx)

    def new_payload(self) -> bytes:
        return prng_bytes(self.payload_rng, MSG_LEN)

    # -- channel -------------------------------------------------------------

    def _channel(
        self,
        data: bytes,
        kind: str,
        direction: str,
        session: int,
        link: str,
        script: tuple[AdversaryAction, ...],
        report: ScenarioReport | None,
        effects: set | None = None,
    ) -> list[tuple[bytes, bool]]:
        """Record the as-sent packet, apply matching script actions, and
        return the (payload, adversarial) deliveries in order."""
        pkt = Packet(index=len(self.recorded), session=session, kind=kind,
                     direction=direction, link=link, data=data)
        self.recorded.append(pkt)
        primary: bytes | None = data
        primary_adv = False
        extras: list[tuple[bytes, bool]] = []
        for action in script:
            if not action.matches(pkt.index, session, kind, direction):
                continue
            if action.kind == "deliver":
                continue
            if report is not None:
                report.attacks_launched += 1
            if action.kind == "drop":
                primary = None
            elif action.kind == "duplicate":
                if primary is not None:
                    extras.append((primary, True))
            elif action.kind == "tamper":
                if primary is not None:
                    if action.byte_offset >= len(primary):
                        raise ScriptError(
                            f"tamper offset {action.byte_offset} outside packet "
                            f"of {len(primary)} bytes"
                        )
                    buf = bytearray(primary)
                    buf[action.byte_offset] ^= action.xor_mask
                    primary = bytes(buf)
                    primary_adv = True
            elif action.kind == "replay":
                if action.stored_index >= len(self.recorded):
                    raise ScriptError(
                        f"replay index {action.stored_index} not yet recorded"
                    )
                extras.append((self.recorded[action.stored_index].data, True))
            elif action.kind == "inject":
                extras.append((action.raw_bytes, True))
            elif action.kind in ("leak_ephemerals", "capture_sm"):
                if effects is not None:
                    effects.add(action.kind)
        out: list[tuple[bytes, bool]] = []
        if primary is not None:
            out.append((primary, primary_adv))
        out.extend(extras)
        return out

    # -- receivers -----------------------------------------------------------

    def _to_ng(self, data: bytes, link: str, control: bytes) -> dict:
        if len(data) == MSG1_LEN:
            msg2 = self.ng.on_msg1(Msg1.decode(data), link, control)
            if msg2 is None:
                return {"type": "dropped", "reason": "unknown_id"}
            return {"type": "msg2", "data": msg2.encode()}
        if len(data) == MSG3_LEN:
            try:
                delivered = self.ng.on_msg3(Msg3.decode(data), link)
            except VerifierMismatch:
                return {"type": "reject", "reason": "verifier_mismatch"}
            except NoPendingSession:
                return {"type": "reject", "reason": "no_pending_session"}
            return {"type": "accept", "report": delivered}
        return {"type": "ignored", "reason": "bad_length"}

    def _to_sm(self, data: bytes, sm: SmDevice, report_payload: bytes) -> dict:
        try:
            msg2 = Msg2.decode(data)
        except BadLength:
            return {"type": "ignored", "reason": "bad_length"}
        if not sm.in_session:
            return {"type": "ignored", "reason": "idle"}
        try:
            msg3 = sm.on_msg2(msg2, report_payload)
        except VerifierMismatch:
            return {"type": "reject", "reason": "verifier_mismatch"}
        except NoSession:
            return {"type": "ignored", "reason": "idle"}
        return {"type": "msg3", "data": msg3.encode()}

    # -- session pipeline ----------------------------------------------------

    def run_session(
        self,
        meter_idx: int,
        session: int = 0,
        temp_c: float | None = None,
        control: bytes | None = None,
        report_payload: bytes | None = None,
        script: tuple[AdversaryAction, ...] = (),
        report: ScenarioReport | None = None,
    ) -> Transcript:
        """Drive one full authentication run through the scripted channel."""
        sm = self.sms[meter_idx]
        sm.temp_c = temp_c if temp_c is not None else self.temp_fn(session, self.temp_rng)
        control = control if control is not None else self.new_payload()
        report_payload = report_payload if report_payload is not None else self.new_payload()
        t = Transcript(session=session, meter=sm.name, report_sent=report_payload)
        if self.audit:
            sm.audit_sink = {}
            self.ng.audit_sink = {}
        before = sm.counters.snapshot()
        effects: set = set()

        msg1 = sm.start()
        t.msg1 = msg1.encode()
        msg2_queue: list[tuple[bytes, bool]] = []
        for data, adv in self._channel(t.msg1, "msg1", "sm->ng", session,
                                       sm.name, script, report, effects):
            res = self._to_ng(data, sm.name, control)
            if res["type"] == "msg2":
                msg2_queue.append((res["data"], adv))
            elif not adv and res["type"] == "dropped":
                t.reason = "unknown_id"

        msg3_queue: list[tuple[bytes, bool]] = []
        for m2, tainted in msg2_queue:
            if not tainted and t.msg2 is None:
                t.msg2 = m2
            for data, adv in self._channel(m2, "msg2", "ng->sm", session,
                                           sm.name, script, report, effects):
                adversarial = tainted or adv
                res = self._to_sm(data, sm, report_payload)
                if res["type"] == "msg3":
                    if adversarial and report is not None:
                        report.attacks_succeeded += 1
                        report.note(session=session, kind="msg2",
                                    outcome="adversarial_packet_verified")
                    msg3_queue.append((res["data"], adversarial))
                elif res["type"] == "reject" and not adversarial:
                    t.reason = res["reason"]

        for m3, tainted in msg3_queue:
            if not tainted and t.msg3 is None:
                t.msg3 = m3
            for data, adv in self._channel(m3, "msg3", "sm->ng", session,
                                           sm.name, script, report, effects):
                adversarial = tainted or adv
                res = self._to_ng(data, sm.name, control)
                if res["type"] == "accept":
                    if adversarial:
                        if report is not None:
                            report.attacks_succeeded += 1
                            report.note(session=session, kind="msg3",
                                        outcome="adversarial_packet_verified")
                    else:
                        t.outcome = "accepted"
                        t.report_delivered = res["report"]
                        self._ng_ids[meter_idx] = sm.nonvolatile_id
                elif res["type"] == "reject" and not adversarial and t.reason is None:
                    t.reason = res["reason"]

        if sm.in_session:
            sm.abort()
            if t.reason is None:
                t.reason = "timeout"
        t.sm_ops = sm.counters.delta(before)
        if self.audit:
            t.secrets = {"sm": dict(sm.audit_sink or {}),
                         "ng": dict(self.ng.audit_sink or {})}
            sm.audit_sink = None
            self.ng.audit_sink = None
        if report is not None:
            self._apply_effects(effects, t, meter_idx, report)
        return t

    def _apply_effects(self, effects: set, t: Transcript, meter_idx: int,
                       report: ScenarioReport) -> None:
        if "leak_ephemerals" in effects and t.secrets:
            sm_secrets = t.secrets.get("sm", {})
            report.attacks_launched += 1
            report.note(session=t.session, kind="leak_ephemerals",
                        r_ng=sm_secrets.get("r_ng", b"").hex(),
                        r_sm=sm_secrets.get("r_sm", b"").hex())
        if "capture_sm" in effects:
            report.attacks_launched += 1
            dump = self.capture_sm(meter_idx)
            report.note(session=t.session, kind="capture_sm",
                        dump=dump.hex(), dump_len=len(dump))

    # -- honest soak ---------------------------------------------------------

    def run_honest(self, sessions: int, report: ScenarioReport | None = None,
                   keep_transcripts: bool = True) -> list[Transcript]:
        transcripts = []
        for s in range(sessions):
            t = self.run_session(s % len(self.sms), session=s, report=report)
            if report is not None:
                report.sessions_attempted += 1
                if t.outcome == "accepted":
                    report.sessions_accepted += 1
            if keep_transcripts:
                transcripts.append(t)
        return transcripts

    def capture_sm(self, meter_idx: int) -> bytes:
        """Physical capture: exactly the nonvolatile memory contents."""
        return self.sms[meter_idx].memory_dump()

    def bytes_counters(self) -> dict:
        counts = {"msg1": 0, "msg2": 0, "msg3": 0}
        for pkt in self.recorded:
            counts[pkt.kind] += 1
        return {
            "msg1_packets": counts["msg1"],
            "msg2_packets": counts["msg2"],
            "msg3_packets": counts["msg3"],
            "msg1_len": MSG1_LEN,
            "msg2_len": MSG2_LEN,
            "msg3_len": MSG3_LEN,
            "session_overhead": SESSION_OVERHEAD,
        }

    def op_counters(self) -> dict:
        total = OpCounters()
        for sm in self.sms:
            total.hash += sm.counters.hash
            total.prng += sm.counters.prng
            total.puf += sm.counters.puf
            total.nonce += sm.counters.nonce
        return {"sm_total": total.as_dict(), "ng": self.ng.counters.as_dict()}


# -- scenario specs and drivers -----------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """JSON-loadable description of a scripted run."""

    name: str = "custom"
    meters: int = 3
    sessions: int = 10
    seed: int = 0
    audit: bool = True
    recovery_mode: bool = False
    temps: object = None
    script: tuple[AdversaryAction, ...] = ()

    @classmethod
    def from_dict(cls, obj: dict) -> "ScenarioSpec":
        try:
            return cls(
                name=obj.get("name", "custom"),
                meters=int(obj.get("meters", 3)),
                sessions=int(obj.get("sessions", 10)),
                seed=int(obj.get("seed", 0)),
                audit=bool(obj.get("audit", True)),
                recovery_mode=bool(obj.get("recovery_mode", False)),
                temps=obj.get("temps"),
                script=compile_script(obj.get("script", [])),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScriptError):
                raise
            raise ScriptError(f"bad scenario spec: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScriptError(f"scenario is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ScriptError("scenario JSON must be an object")
        return cls.from_dict(obj)


def run_scenario(spec: ScenarioSpec, config: SimConfig = SimConfig()) -> ScenarioReport:
    """Execute a scripted scenario: ``spec.sessions`` runs over the scripted
    channel, with temperature schedule and adversary actions applied."""
    make_temp_fn(spec.temps)  # validate before building the lab
    lab = NetLab(meters=spec.meters, seed=spec.seed, config=config,
                 recovery=spec.recovery_mode, audit=spec.audit, temps=spec.temps)
    report = ScenarioReport(name=spec.name, seed=spec.seed,
                            recovery_extension=spec.recovery_mode)
    for s in range(spec.sessions):
        t = lab.run_session(s % len(lab.sms), session=s, script=spec.script,
                            report=report)
        report.sessions_attempted += 1
        if t.outcome == "accepted":
            report.sessions_accepted += 1
    report.bytes_counters = lab.bytes_counters()
    report.op_counters = lab.op_counters()
    return report


def soak_scenario(meters: int, sessions: int, seed: int,
                  config: SimConfig = SimConfig(), temps=None,
                  audit: bool = True) -> tuple[ScenarioReport, NetLab, list[Transcript]]:
    """Honest sessions only; the baseline every attack driver builds on."""
    lab = NetLab(meters=meters, seed=seed, config=config, audit=audit, temps=temps)
    report = ScenarioReport(name="soak", seed=seed)
    transcripts = lab.run_honest(sessions, report=report)
    report.bytes_counters = lab.bytes_counters()
    report.op_counters = lab.op_counters()
    return report, lab, transcripts


def replay_scenario(
    meters: int,
    honest_sessions: int,
    seed: int,
    config: SimConfig = SimConfig(),
    max_replays: int | None = None,
    substitution_sessions: int = 0,
) -> ScenarioReport:
    """Capture honest traffic, then replay it.

    Phase 1 records honest sessions.  Phase 2 re-injects every captured
    packet once at its original receiver.  Phase 3 (optional) replays stale
    packets *inside* live sessions, where the verifier actually runs: an old
    gateway packet in place of the fresh one, and an old meter final packet
    ahead of the fresh one.  No replayed packet may verify.
    """
    lab = NetLab(meters=meters, seed=seed, config=config, audit=False)
    report = ScenarioReport(name="replay", seed=seed)
    lab.run_honest(honest_sessions, report=report, keep_transcripts=False)
    captured = list(lab.recorded)
    if max_replays is not None:
        captured = captured[:max_replays]

    for pkt in captured:
        report.attacks_launched += 1
        if pkt.direction == "sm->ng":
            res = lab._to_ng(pkt.data, pkt.link, control=lab.new_payload())
            accepted = res["type"] == "accept"
            responded = res["type"] == "msg2"
        else:
            idx = next(i for i, sm in enumerate(lab.sms) if sm.name == pkt.link)
            res = lab._to_sm(pkt.data, lab.sms[idx], report_payload=lab.new_payload())
            accepted = res["type"] == "msg3"
            responded = False
        if accepted:
            report.attacks_succeeded += 1
            report.note(kind=pkt.kind, index=pkt.index, outcome="replay_verified")
        elif responded:
            report.note(kind=pkt.kind, index=pkt.index, outcome="gateway_responded")

    session = honest_sessions
    old_msg2 = [p for p in captured if p.kind == "msg2"]
    old_msg3 = [p for p in captured if p.kind == "msg3"]
    if not (old_msg2 and old_msg3):
        substitution_sessions = 0
    for s in range(substitution_sessions):
        midx = s % len(lab.sms)
        sm = lab.sms[midx]
        # Stale gateway packet swapped in for the fresh one.
        msg1 = sm.start()
        msg2 = lab.ng.on_msg1(msg1, sm.name, lab.new_payload())
        assert msg2 is not None
        stale = old_msg2[int(lab.adv_rng.integers(len(old_msg2)))]
        report.attacks_launched += 1
        res = lab._to_sm(stale.data, sm, report_payload=lab.new_payload())
        if res["type"] == "msg3":
            report.attacks_succeeded += 1
            report.note(session=session, kind="msg2", outcome="stale_packet_verified")
        sm.abort()
        session += 1
        # Stale meter final packet delivered right after the fresh one: the
        # pending context is already consumed, so it must be rejected.
        t = lab.run_session(midx, session=session,
                            script=(AdversaryAction(
                                kind="replay", target="sm->ng",
                                when={"kinds": ["msg3"], "session": session},
                                stored_index=stale_msg3_index(old_msg3, lab.adv_rng)),),
                            report=report)
        session += 1
        if t.outcome != "accepted":
            lab.reset_meter(midx)
            report.note(session=t.session, kind="msg3",
                        outcome="meter_reset_after_desync")
    report.bytes_counters = lab.bytes_counters()
    report.op_counters = lab.op_counters()
    return report


def stale_msg3_index(old_msg3: list, rng: np.random.Generator) -> int:
    return old_msg3[int(rng.integers(len(old_msg3)))].index


def tamper_scenario(
    meters: int,
    sessions: int,
    seed: int,
    config: SimConfig = SimConfig(),
    target: str = "both",
) -> ScenarioReport:
    """Flip one random byte of each targeted packet; no tampered packet may
    verify.  A tampered final packet desynchronizes its meter (the meter has
    already committed), so the lab re-enrolls that meter afterwards."""
    lab = NetLab(meters=meters, seed=seed, config=config, audit=False)
    report = ScenarioReport(name="tamper", seed=seed)
    targets = {"msg2": ["msg2"], "msg3": ["msg3"],
               "both": ["msg2", "msg3"]}[target]
    for s in range(sessions):
        kind = targets[s % len(targets)]
        size = MSG2_LEN if kind == "msg2" else MSG3_LEN
        action = AdversaryAction(
            kind="tamper",
            target="ng->sm" if kind == "msg2" else "sm->ng",
            when={"kinds": [kind], "session": s},
            byte_offset=int(lab.adv_rng.integers(size)),
            xor_mask=int(lab.adv_rng.integers(1, 256)),
        )
        midx = s % len(lab.sms)
        t = lab.run_session(midx, session=s, script=(action,), report=report)
        report.sessions_attempted += 1
        if t.outcome == "accepted":
            report.sessions_accepted += 1
        elif kind == "msg3":
            # Meter committed, gateway rejected the tampered packet: desync.
            lab.reset_meter(midx)
    report.bytes_counters = lab.bytes_counters()
    report.op_counters = lab.op_counters()
    return report


def dos_probe(
    lab: NetLab,
    meter_idx: int,
    bogus_packets: int,
    packets: Sequence[bytes] | None = None,
) -> dict:
    """Feed spurious gateway packets to one meter and report the per-packet
    processing cost: each must cost exactly one PUF evaluation plus two
    hashes before rejection, with zero acceptances."""
    sm = lab.sms[meter_idx]
    costs = []
    accepts = 0
    for i in range(bogus_packets):
        if not sm.in_session:
            sm.start()
        before = sm.counters.snapshot()
        data = packets[i] if packets is not None else bytes(
            lab.adv_rng.integers(0, 256, size=MSG2_LEN, dtype=np.uint8)
        )
        res = lab._to_sm(data, sm, report_payload=lab.new_payload())
        if res["type"] == "msg3":
            accepts += 1
        delta = sm.counters.delta(before)
        costs.append({"puf": delta.puf, "hash": delta.hash})
    if sm.in_session:
        sm.abort()
    exact = all(c == {"puf": 1, "hash": 2} for c in costs)
    return {
        "bogus_packets": bogus_packets,
        "accepts": accepts,
        "cost_per_packet": {"puf": 1, "hash": 2} if exact else None,
        "all_costs_exact": exact,
        "costs_observed": costs[:32],
    }


def leak_scenario(
    meters: int,
    seed: int,
    config: SimConfig = SimConfig(),
    forgery_attempts: int = 100,
    guess_trials: int = 100,
    full_key_control: bool = False,
) -> ScenarioReport:
    """Leak one session's ephemerals and evaluate the adversary.

    Asserts the recovered knowledge is exactly the documented allowance (one
    half of the session key from the gateway random, one half of the hashed
    key from the meter random), that the next session key stays unpredicted,
    and that forging the following session fails.  With
    ``full_key_control=True`` the adversary is handed the full session key
    instead, which must make the forgery succeed (positive control).
    """
    lab = NetLab(meters=meters, seed=seed, config=config, audit=True)
    report = ScenarioReport(name="leak", seed=seed)
    t = lab.run_session(0, session=0, report=report)
    report.sessions_attempted += 1
    assert t.outcome == "accepted", "baseline session must succeed"
    report.sessions_accepted += 1

    secrets = t.secrets["sm"]
    r_ng, r_sm = secrets["r_ng"], secrets["r_sm"]
    key, key_next = secrets["k"], secrets["k_next"]
    msg2 = Msg2.decode(t.msg2)
    msg3 = Msg3.decode(t.msg3)

    # Allowance from the gateway random: one half of the session key.
    recovered_k_half = xor_stream(msg2.cipher[RAND_LEN:], r_ng)
    k_half_ok = recovered_k_half == key[RAND_LEN:]
    # Allowance from the meter random: one half of the hashed session key.
    recovered_hk_half = xor_stream(msg3.cipher[:RAND_LEN], r_sm)
    hk_half_ok = recovered_hk_half == hash_fields([key])[:RAND_LEN]

    # The next session key must stay unpredicted: guess the unknown key half,
    # unmask the key carrier, count exact hits.
    guess_hits = 0
    for _ in range(guess_trials):
        k_guess = bytes(lab.adv_rng.integers(0, 256, size=RAND_LEN,
                                             dtype=np.uint8)) + recovered_k_half
        candidate = xor_stream(msg3.key_mask, hash_fields([k_guess, r_sm]))
        if candidate == key_next:
            guess_hits += 1

    sm = lab.sms[0]
    forgery_accepts = 0
    for _ in range(forgery_attempts):
        msg1 = sm.start()
        fresh_msg2 = lab.ng.on_msg1(msg1, sm.name, lab.new_payload())
        assert fresh_msg2 is not None
        if full_key_control:
            k_base = key
        else:
            k_base = bytes(lab.adv_rng.integers(0, 256, size=RAND_LEN,
                                                dtype=np.uint8)) + recovered_k_half
        forged = _forge_msg3(msg1, fresh_msg2, msg3, k_base, r_sm, lab.adv_rng)
        report.attacks_launched += 1
        try:
            lab.ng.on_msg3(forged, sm.name)
        except (VerifierMismatch, NoPendingSession):
            pass
        else:
            forgery_accepts += 1
            report.attacks_succeeded += 1
            sm.abort()
            # The gateway record now belongs to the adversary; the meter is
            # hijacked and no further attempt makes sense.
            break
        sm.abort()

    if not full_key_control:
        follow_up = lab.run_session(0, session=1, report=report)
        report.sessions_attempted += 1
        if follow_up.outcome == "accepted":
            report.sessions_accepted += 1
        report.extras["follow_up_session"] = follow_up.outcome
    report.extras.update({
        "recovered_key_half_ok": k_half_ok,
        "recovered_hashed_key_half_ok": hk_half_ok,
        "next_key_guess_hits": guess_hits,
        "guess_trials": guess_trials,
        "forgery_attempts": forgery_attempts,
        "forgery_accepts": forgery_accepts,
    })
    report.bytes_counters = lab.bytes_counters()
    report.op_counters = lab.op_counters()
    return report


def _forge_msg3(msg1: Msg1, msg2: Msg2, leaked_msg3: Msg3, k_base: bytes,
                r_sm_leaked: bytes, rng: np.random.Generator) -> Msg3:
    """Best-effort forgery given a (possibly guessed) previous session key.

    Derives the current key from the leaked key carrier, decrypts the fresh
    gateway packet with it, then builds a fully consistent final packet.
    Succeeds exactly when ``k_base`` is the true previous key.
    """
    k_cur = xor_stream(leaked_msg3.key_mask, hash_fields([k_base, r_sm_leaked]))
    plain = xor_stream(msg2.cipher, k_cur)
    r_ng = plain[RAND_LEN:]
    r_new = bytes(rng.integers(0, 256, size=RAND_LEN, dtype=np.uint8))
    d_new = bytes(rng.integers(0, 256, size=MSG_LEN, dtype=np.uint8))
    id_next = hash_fields([msg1.sender_id, k_cur, r_new])
    c_next = hash_fields([id_next, r_ng])
    k_next = bytes(rng.integers(0, 256, size=32, dtype=np.uint8))
    key_mask = xor_stream(k_next, hash_fields([k_cur, r_new]))
    cipher = xor_stream(r_new + xor_stream(xor_stream(r_new, r_ng), d_new),
                        hash_fields([k_cur]))
    verifier = hash_fields([k_next, c_next, d_new, id_next, r_new])
    return Msg3(key_mask=key_mask, cipher=cipher, verifier=verifier)


def capture_scenario(
    meters: int,
    sessions: int,
    seed: int,
    config: SimConfig = SimConfig(),
) -> ScenarioReport:
    """Run audited sessions, then physically capture every meter: each dump
    must be exactly the current 32-byte identity and contain no recorded
    secret as a substring."""
    lab = NetLab(meters=meters, seed=seed, config=config, audit=True)
    report = ScenarioReport(name="capture", seed=seed)
    transcripts = lab.run_honest(sessions, report=report)
    secret_keys = ("k", "k_next", "r_ng", "r_sm", "m", "d",
                   "response", "response_next", "c", "c_next")
    secrets: set[bytes] = set()
    for t in transcripts:
        for side in (t.secrets or {}).values():
            for key in secret_keys:
                val = side.get(key)
                if val:
                    secrets.add(val)
    hits = 0
    dumps_ok = 0
    for idx, sm in enumerate(lab.sms):
        report.attacks_launched += 1
        dump = lab.capture_sm(idx)
        if len(dump) == 32 and dump == sm.nonvolatile_id:
            dumps_ok += 1
        for secret in secrets:
            if secret in dump or dump in secret:
                hits += 1
                report.attacks_succeeded += 1
                report.note(meter=sm.name, outcome="secret_in_dump")
    report.extras.update({
        "meters_captured": meters,
        "dumps_well_formed": dumps_ok,
        "secrets_scanned": len(secrets),
        "substring_hits": hits,
    })
    report.bytes_counters = lab.bytes_counters()
    report.op_counters = lab.op_counters()
    return report


def desync_scenario(
    seed: int,
    config: SimConfig = SimConfig(),
    recovery: bool = False,
) -> ScenarioReport:
    """Drop a meter's final packet and document the aftermath.

    Default (strict) mode: the meter committed but the gateway never
    saw the packet, so every later attempt dies silently -- a permanent
    desynchronization.  Recovery mode (extension, flagged): the meter falls
    back to its previous identity and re-authenticates.
    """
    lab = NetLab(meters=1, seed=seed, config=config, recovery=recovery, audit=False)
    report = ScenarioReport(name="desync", seed=seed, recovery_extension=recovery)
    drop = AdversaryAction(kind="drop", target="sm->ng",
                           when={"kinds": ["msg3"], "session": 1})

    t0 = lab.run_session(0, session=0, report=report)
    t1 = lab.run_session(0, session=1, script=(drop,), report=report)
    t2 = lab.run_session(0, session=2, report=report)
    report.sessions_attempted += 3
    report.sessions_accepted += sum(
        t.outcome == "accepted" for t in (t0, t1, t2))
    recovered = False
    if recovery and t2.outcome != "accepted":
        sm = lab.sms[0]
        if sm.fallback_to_previous():
            t3 = lab.run_session(0, session=3, report=report)
            report.sessions_attempted += 1
            recovered = t3.outcome == "accepted"
            if recovered:
                report.sessions_accepted += 1
    retry = lab.run_session(0, session=4, report=report)
    report.sessions_attempted += 1
    if retry.outcome == "accepted":
        report.sessions_accepted += 1
    report.extras.update({
        "session_before_loss": t0.outcome,
        "session_with_lost_final": t1.outcome,
        "session_after_loss": t2.outcome,
        "recovered_via_fallback": recovered,
        "later_session": retry.outcome,
        "permanently_blocked": (not recovery) and retry.outcome != "accepted",
    })
    report.bytes_counters = lab.bytes_counters()
    report.op_counters = lab.op_counters()
    return report
