"""Gateway-side meter database: JSON-lines file with atomic whole-file
rewrites (write-temporary-then-rename), or a pure in-memory store when no
path is given.

File format ("ocec-keystore/1"): a header line, then one record object per
line with 64-hex-char ``id``/``c``/``k`` fields.  The file parses completely
or the store refuses to open.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .codec import C_LEN, ID_LEN, K_LEN

FORMAT_VERSION = "ocec-keystore/1"


class KeystoreError(Exception):
    """Corrupt file, duplicate id, or other store-level failure."""


class NotFound(KeystoreError):
    """The requested record id is not in the store."""


@dataclass(frozen=True)
class NgRecord:
    """Per-meter tuple: current identity, stored challenge, session key."""

    id: bytes
    challenge: bytes
    key: bytes

    def __post_init__(self):
        for name, val, want in (
            ("id", self.id, ID_LEN),
            ("challenge", self.challenge, C_LEN),
            ("key", self.key, K_LEN),
        ):
            if len(val) != want:
                raise ValueError(f"{name} must be {want} bytes, got {len(val)}")


def _decode_record(obj: dict, lineno: int) -> NgRecord:
    try:
        raw = {k: bytes.fromhex(obj[k]) for k in ("id", "c", "k")}
    except (KeyError, ValueError) as exc:
        raise KeystoreError(f"line {lineno}: bad record: {exc}") from exc
    try:
        return NgRecord(id=raw["id"], challenge=raw["c"], key=raw["k"])
    except ValueError as exc:
        raise KeystoreError(f"line {lineno}: {exc}") from exc


class Keystore:
    """Mapping of 32-byte meter ids to :class:`NgRecord`.

    Mutations stage a full copy, persist it, then swap it in, so an I/O
    failure leaves both memory and disk at the pre-call state.  One writer at
    a time; per-meter serialization is the caller's job.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[bytes, NgRecord] = {}

    @classmethod
    def open(cls, path: str | Path, create: bool = False) -> "Keystore":
        store = cls(path)
        if store.path.exists():
            store._load()
        elif create:
            store._persist(store._records)
        else:
            raise KeystoreError(f"no keystore at {path}")
        return store

    def _load(self) -> None:
        lines = self.path.read_text().splitlines()
        if not lines:
            raise KeystoreError("empty keystore file (missing header)")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise KeystoreError(f"bad header line: {exc}") from exc
        if header.get("format") != FORMAT_VERSION:
            raise KeystoreError(f"unsupported format {header.get('format')!r}")
        records: dict[bytes, NgRecord] = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                raise KeystoreError(f"line {lineno}: blank line in keystore")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise KeystoreError(f"line {lineno}: bad JSON: {exc}") from exc
            rec = _decode_record(obj, lineno)
            if rec.id in records:
                raise KeystoreError(f"line {lineno}: duplicate id {rec.id.hex()}")
            records[rec.id] = rec
        self._records = records

    def _persist(self, records: dict[bytes, NgRecord]) -> None:
        if self.path is None:
            return
        payload = json.dumps({"format": FORMAT_VERSION}) + "\n"
        for rec in records.values():
            payload += json.dumps(
                {"id": rec.id.hex(), "c": rec.challenge.hex(), "k": rec.key.hex()}
            ) + "\n"
        fd, tmp = tempfile.mkstemp(
            dir=self.path.parent, prefix=self.path.name, suffix=".tmp"
        )
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(payload)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def _commit(self, staged: dict[bytes, NgRecord]) -> None:
        self._persist(staged)
        self._records = staged

    def lookup(self, record_id: bytes) -> NgRecord | None:
        return self._records.get(record_id)

    def insert(self, record: NgRecord) -> None:
        if record.id in self._records:
            raise KeystoreError(f"duplicate id {record.id.hex()}")
        staged = dict(self._records)
        staged[record.id] = record
        self._commit(staged)

    def replace(self, old_id: bytes, new_record: NgRecord) -> None:
        """Atomically swap one meter's record for its successor."""
        if old_id not in self._records:
            raise NotFound(f"no record for id {old_id.hex()}")
        if new_record.id != old_id and new_record.id in self._records:
            raise KeystoreError(f"replacement id {new_record.id.hex()} already present")
        staged = dict(self._records)
        del staged[old_id]
        staged[new_record.id] = new_record
        self._commit(staged)

    def delete(self, record_id: bytes) -> None:
        if record_id not in self._records:
            raise NotFound(f"no record for id {record_id.hex()}")
        staged = dict(self._records)
        del staged[record_id]
        self._commit(staged)

    def dump(self) -> list[NgRecord]:
        return list(self._records.values())

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, record_id: bytes) -> bool:
        return record_id in self._records
