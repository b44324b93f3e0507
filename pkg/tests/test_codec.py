import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oceclab.codec import (
    E_LEN, K_LEN, MSG1_LEN, MSG2_LEN, MSG3_LEN, RAND_LEN, SESSION_OVERHEAD,
    BadLength, Msg1, Msg2, Msg3, hash_fields, new_prng, prng_bytes, xor_stream,
)

SHA256_EMPTY = bytes.fromhex(
    "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
)


class TestHashFields:
    def test_empty_list_known_answer(self):
        assert hash_fields([]) == SHA256_EMPTY

    def test_deterministic(self):
        fields = [b"a" * 32, b"b" * 16]
        assert hash_fields(fields) == hash_fields(fields)

    def test_width_mismatch_rejected(self):
        with pytest.raises(BadLength):
            hash_fields([b"abc"], widths=[4])
        with pytest.raises(BadLength):
            hash_fields([b"abc"], widths=[3, 3])

    def test_nonce_sensitivity_sampled(self):
        rng = new_prng(7)
        base = [prng_bytes(rng, n) for n in (32, 32, 16, 16)]
        seen = set()
        for _ in range(10_000):
            nonce = prng_bytes(rng, 16)
            seen.add(hash_fields(base + [nonce]))
        assert len(seen) == 10_000  # no collisions across distinct nonces

    def test_digest_monobit_uniformity(self):
        rng = new_prng(8)
        blob = b"".join(hash_fields([prng_bytes(rng, 24)]) for _ in range(4000))
        bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8))
        assert abs(bits.mean() - 0.5) <= 3 * 0.5 / np.sqrt(bits.size)


class TestXorStream:
    @given(st.binary(min_size=0, max_size=96), st.binary(min_size=0, max_size=96))
    @settings(max_examples=50, deadline=None)
    def test_involution(self, m, k):
        if len(m) != len(k):
            with pytest.raises(BadLength):
                xor_stream(m, k)
        else:
            assert xor_stream(xor_stream(m, k), k) == m

    def test_zero_pad_is_identity(self):
        m = bytes(range(16))
        assert xor_stream(m, bytes(16)) == m

    def test_bytewise_arithmetic(self):
        assert xor_stream(b"\xff" * 4, b"\x0f" * 4) == b"\xf0" * 4


class TestPrng:
    def test_seeded_runs_replay(self):
        a, b = new_prng(42), new_prng(42)
        assert [prng_bytes(a, 16) for _ in range(5)] == \
               [prng_bytes(b, 16) for _ in range(5)]

    def test_distinct_seeds_diverge(self):
        assert prng_bytes(new_prng(1), 16) != prng_bytes(new_prng(2), 16)

    def test_monobit_frequency(self):
        bits = np.unpackbits(np.frombuffer(prng_bytes(new_prng(3), 125_000),
                                           dtype=np.uint8))
        frac = bits.mean()
        assert abs(frac - 0.5) <= 3 * 0.5 / np.sqrt(bits.size)


FIELD32 = st.binary(min_size=32, max_size=32)
FIELD16 = st.binary(min_size=16, max_size=16)


class TestPackets:
    def test_fixed_widths(self):
        assert MSG1_LEN == 48
        assert MSG2_LEN == 96
        assert MSG3_LEN == 96
        assert SESSION_OVERHEAD == 192
        assert E_LEN == 2 * RAND_LEN == K_LEN

    @given(FIELD32, FIELD16)
    @settings(max_examples=25, deadline=None)
    def test_msg1_roundtrip(self, sender, nonce):
        m = Msg1(sender, nonce)
        assert Msg1.decode(m.encode()) == m
        assert len(m.encode()) == MSG1_LEN

    @given(FIELD32, FIELD32, FIELD32)
    @settings(max_examples=25, deadline=None)
    def test_msg2_roundtrip(self, c, v, e):
        m = Msg2(c, v, e)
        assert Msg2.decode(m.encode()) == m
        assert len(m.encode()) == MSG2_LEN

    @given(FIELD32, FIELD32, FIELD32)
    @settings(max_examples=25, deadline=None)
    def test_msg3_roundtrip(self, f, e, v):
        m = Msg3(f, e, v)
        assert Msg3.decode(m.encode()) == m
        assert len(m.encode()) == MSG3_LEN

    def test_decode_rejects_wrong_length(self):
        with pytest.raises(BadLength):
            Msg2.decode(bytes(95))
        with pytest.raises(BadLength):
            Msg3.decode(bytes(97))
        with pytest.raises(BadLength):
            Msg1.decode(bytes(47))

    def test_field_width_enforced_on_construction(self):
        with pytest.raises(BadLength):
            Msg1(bytes(31), bytes(16))
        with pytest.raises(BadLength):
            Msg2(bytes(32), bytes(32), bytes(31))
