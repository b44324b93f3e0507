import json
import os

import pytest
from hypothesis import given, settings, strategies as st

import oceclab.keystore as ks_mod
from oceclab.keystore import Keystore, KeystoreError, NgRecord, NotFound


def rec(tag: int) -> NgRecord:
    return NgRecord(id=bytes([tag]) * 32, challenge=bytes([tag + 1]) * 32,
                    key=bytes([tag + 2]) * 32)


@pytest.fixture
def store(tmp_path):
    return Keystore.open(tmp_path / "ks.jsonl", create=True)


class TestBasicOps:
    def test_lookup_roundtrip(self, store):
        store.insert(rec(1))
        assert store.lookup(rec(1).id) == rec(1)

    def test_absent_is_a_value(self, store):
        assert store.lookup(bytes(32)) is None

    def test_duplicate_insert_rejected(self, store):
        store.insert(rec(1))
        with pytest.raises(KeystoreError):
            store.insert(rec(1))

    def test_replace_swaps_record(self, store):
        store.insert(rec(1))
        store.replace(rec(1).id, rec(5))
        assert store.lookup(rec(1).id) is None
        assert store.lookup(rec(5).id) == rec(5)

    def test_replace_missing_old_id(self, store):
        with pytest.raises(NotFound):
            store.replace(bytes(32), rec(1))

    def test_replace_preserves_other_records_byte_for_byte(self, store):
        store.insert(rec(1))
        store.insert(rec(10))
        before = store.path.read_text().splitlines()
        store.replace(rec(1).id, rec(5))
        after = store.path.read_text().splitlines()
        keep = json.dumps({"id": rec(10).id.hex(), "c": rec(10).challenge.hex(),
                           "k": rec(10).key.hex()})
        assert keep in before and keep in after

    def test_delete(self, store):
        store.insert(rec(1))
        store.delete(rec(1).id)
        assert store.lookup(rec(1).id) is None
        with pytest.raises(NotFound):
            store.delete(rec(1).id)

    def test_memory_only_store(self):
        s = Keystore()
        s.insert(rec(1))
        assert s.lookup(rec(1).id) == rec(1)


class TestFileFormat:
    def test_reopen_sees_committed_state(self, tmp_path):
        path = tmp_path / "ks.jsonl"
        s = Keystore.open(path, create=True)
        s.insert(rec(1))
        s.insert(rec(10))
        again = Keystore.open(path)
        assert again.dump() == s.dump()

    def test_header_is_format_versioned(self, store):
        header = json.loads(store.path.read_text().splitlines()[0])
        assert header == {"format": "ocec-keystore/1"}

    def test_unknown_format_refused(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"format": "ocec-keystore/2"}\n')
        with pytest.raises(KeystoreError):
            Keystore.open(path)

    def test_garbage_line_refused(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"format": "ocec-keystore/1"}\nnot json\n')
        with pytest.raises(KeystoreError):
            Keystore.open(path)

    def test_short_hex_refused(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"format": "ocec-keystore/1"}\n'
                        + json.dumps({"id": "ab", "c": "cd", "k": "ef"}) + "\n")
        with pytest.raises(KeystoreError):
            Keystore.open(path)

    def test_duplicate_id_in_file_refused(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        line = json.dumps({"id": "11" * 32, "c": "22" * 32, "k": "33" * 32})
        path.write_text('{"format": "ocec-keystore/1"}\n' + line + "\n" + line + "\n")
        with pytest.raises(KeystoreError):
            Keystore.open(path)

    def test_missing_file_without_create_refused(self, tmp_path):
        with pytest.raises(KeystoreError):
            Keystore.open(tmp_path / "absent.jsonl")


class TestCrashConsistency:
    def test_failure_before_rename_keeps_old_state(self, store, monkeypatch):
        store.insert(rec(1))

        def boom(src, dst):
            raise OSError("injected crash before rename")

        monkeypatch.setattr(ks_mod.os, "replace", boom)
        with pytest.raises(OSError):
            store.insert(rec(10))
        monkeypatch.undo()
        # in-memory state rolled back
        assert store.lookup(rec(10).id) is None
        # on-disk state is the previously committed one
        again = Keystore.open(store.path)
        assert again.lookup(rec(1).id) == rec(1)
        assert again.lookup(rec(10).id) is None

    def test_orphan_temp_file_does_not_break_reopen(self, store):
        store.insert(rec(1))
        (store.path.parent / (store.path.name + "orphan.tmp")).write_bytes(b"junk")
        again = Keystore.open(store.path)
        assert again.lookup(rec(1).id) == rec(1)

    def test_interrupted_write_never_mixes_states(self, store, monkeypatch):
        store.insert(rec(1))
        committed = [store.path.read_bytes()]
        real_replace = os.replace
        calls = {"n": 0}

        def flaky(src, dst):
            calls["n"] += 1
            if calls["n"] % 2 == 0:
                raise OSError("injected")
            real_replace(src, dst)

        monkeypatch.setattr(ks_mod.os, "replace", flaky)
        for tag in (5, 10, 20, 40):
            try:
                store.insert(rec(tag))
                committed.append(store.path.read_bytes())
            except OSError:
                pass
            assert store.path.read_bytes() in committed
        monkeypatch.undo()
        Keystore.open(store.path)  # still parses completely


@given(st.lists(st.sampled_from([1, 5, 10, 20]), min_size=1, max_size=12))
@settings(max_examples=25, deadline=None)
def test_uniqueness_over_operation_sequences(tags):
    s = Keystore()
    for tag in tags:
        try:
            s.insert(rec(tag))
        except KeystoreError:
            s.delete(rec(tag).id)
            s.insert(rec(tag))
        ids = [r.id for r in s.dump()]
        assert len(ids) == len(set(ids))
