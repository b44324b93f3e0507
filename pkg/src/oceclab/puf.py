"""Simulated 32-stage arbiter PUF with a delay-line margin and on-chip
reliability filtering.

The device is modeled with the standard additive delay abstraction: each
multiplexer stage contributes a signed delay difference, challenge bits decide
whether later stages see the running difference inverted, and the arbiter
outputs the sign of the total.  A per-instance weight vector (drawn standard
normal from the instance seed) plays the role of manufacturing variation, so
one unit of delay equals one stage-delay standard deviation.

On top of the bare race the simulated chip adds a delay generator: a chain of
``n_not_gates`` inverters contributing ``delay_margin = n_not_gates *
delta_not`` extra delay that is switched onto the upper and then the lower
path.  Comparing the two biased races classifies a sub-challenge as *stable*
exactly when ``|delay difference| > delay_margin``; only stable positions emit
response bits.  Because every emitted bit then carries a sign margin of at
least ``delay_margin`` against arbiter jitter, the per-bit flip probability is
bounded by ``Phi(-delay_margin / sigma(T))`` -- below 1e-9 for the default
calibration at four inverters across the 0..80 degC sweep.

Evaluation noise is Gaussian arbiter jitter whose standard deviation grows
linearly with distance from the 25 degC reference temperature.  Passing
``rng=None`` disables jitter entirely, which makes every operation
bit-for-bit deterministic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

RESPONSE_LEN = 128
T_MAX = 4096
TEMP_MIN_C = -20.0
TEMP_MAX_C = 100.0


class YieldExhausted(RuntimeError):
    """Raised when the reliability filter rejects too many sub-challenges.

    Signals that the configured delay margin is too large for this instance:
    the derivation counter hit ``t_max`` before ``response_len`` stable bits
    were collected.
    """

    def __init__(self, collected: int, needed: int, t_max: int):
        super().__init__(
            f"only {collected}/{needed} stable bits within {t_max} sub-challenges"
        )
        self.collected = collected
        self.needed = needed
        self.t_max = t_max


@dataclass(frozen=True)
class PufInstance:
    """One simulated device: delay weights plus noise/temperature calibration.

    Immutable after construction and safe to share between threads; every
    evaluation takes its own draw-source.
    """

    stage_weights: np.ndarray
    n_stages: int = 32
    n_not_gates: int = 4
    delta_not: float = 0.25
    noise_sigma0: float = 0.05
    noise_alpha: float = 0.04
    temp_ref_c: float = 25.0
    instance_seed: int | None = None

    def __post_init__(self):
        w = np.asarray(self.stage_weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != self.n_stages + 1:
            raise ValueError(
                f"stage_weights must have length n_stages+1={self.n_stages + 1}, "
                f"got {w.shape}"
            )
        if self.n_stages < 1:
            raise ValueError("n_stages must be positive")
        if not 0 <= self.n_not_gates <= 8:
            raise ValueError("n_not_gates must be in [0, 8]")
        if self.delta_not <= 0:
            raise ValueError("delta_not must be > 0")
        if self.noise_sigma0 < 0 or self.noise_alpha < 0:
            raise ValueError("noise parameters must be >= 0")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "stage_weights", w)

    @classmethod
    def from_seed(cls, instance_seed: int, **kwargs) -> "PufInstance":
        """Build an instance whose weights are fully determined by the seed."""
        n_stages = kwargs.pop("n_stages", 32)
        rng = np.random.default_rng(instance_seed)
        weights = rng.standard_normal(n_stages + 1)
        return cls(
            stage_weights=weights,
            n_stages=n_stages,
            instance_seed=instance_seed,
            **kwargs,
        )

    @property
    def delay_margin(self) -> float:
        """Extra delay of the inverter chain, in stage-delay units."""
        return self.n_not_gates * self.delta_not

    def sigma_at(self, temp_c: float) -> float:
        """Arbiter jitter standard deviation at the given temperature."""
        return self.noise_sigma0 * (1.0 + self.noise_alpha * abs(temp_c - self.temp_ref_c))


def _check_temp(temp_c: float) -> None:
    if not TEMP_MIN_C <= temp_c <= TEMP_MAX_C:
        raise ValueError(
            f"temperature {temp_c} degC outside simulated range "
            f"[{TEMP_MIN_C}, {TEMP_MAX_C}]"
        )


def _as_bit_matrix(bits, n_stages: int) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.shape[1] != n_stages:
        raise ValueError(f"sub-challenge must have exactly {n_stages} bits, got {arr.shape[1]}")
    if arr.size and arr.max() > 1:
        raise ValueError("sub-challenge bits must be 0 or 1")
    return arr


def parity_features(bits, n_stages: int) -> np.ndarray:
    """Map 0/1 sub-challenges (rows) to the additive-model feature vectors.

    Feature i is the product of (1 - 2*c_j) over stages j >= i; a constant
    1 column is appended for the bias weight.
    """
    arr = _as_bit_matrix(bits, n_stages)
    signs = 1.0 - 2.0 * arr.astype(np.float64)
    feat = np.cumprod(signs[:, ::-1], axis=1)[:, ::-1]
    return np.hstack([feat, np.ones((arr.shape[0], 1))])


def delta_d(puf: PufInstance, sub_challenge) -> float:
    """Noise-free nominal delay difference for one sub-challenge.

    Positive means the upper path is slower; the arbiter then outputs 0.
    """
    feat = parity_features(sub_challenge, puf.n_stages)
    return float((feat @ puf.stage_weights)[0])


def delta_d_batch(puf: PufInstance, bit_matrix: np.ndarray) -> np.ndarray:
    """Vectorized :func:`delta_d` over rows of a 0/1 bit matrix."""
    return parity_features(bit_matrix, puf.n_stages) @ puf.stage_weights


def evaluate_ocec_bit(
    puf: PufInstance,
    sub_challenge,
    temp_c: float = 25.0,
    rng: np.random.Generator | None = None,
) -> tuple[int, int]:
    """One full two-pass query: (response bit, reliability test bit).

    Pass 0 races with the inverter chain on the upper path (margin +D), pass
    1 with the chain on the lower path (margin -D); each pass sees its own
    jitter draw.  The reliability bit is the XOR of the two passes: 0 marks a
    stable position (the bare delay difference clears the margin), 1 an
    unstable one.
    """
    _check_temp(temp_c)
    m = delta_d(puf, sub_challenge)
    d = puf.delay_margin
    if rng is not None:
        sigma = puf.sigma_at(temp_c)
        e0, e1 = rng.normal(0.0, sigma, size=2) if sigma > 0 else (0.0, 0.0)
    else:
        e0 = e1 = 0.0
    r = 0 if m + d + e0 > 0 else 1
    r_prime = 0 if m - d + e1 > 0 else 1
    return r, r ^ r_prime


@dataclass(frozen=True)
class OcecResponse:
    """Reliable response bits plus the derivation indices that produced them."""

    bits: tuple[int, ...]
    source_indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) != len(self.source_indices):
            raise ValueError("bits and source_indices must have equal length")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0 or 1")
        if any(a >= b for a, b in zip(self.source_indices, self.source_indices[1:])):
            raise ValueError("source_indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.bits)

    def to_bytes(self) -> bytes:
        """Pack bits MSB-first into bytes; length must be a multiple of 8."""
        if len(self.bits) % 8:
            raise ValueError("bit length must be a multiple of 8 to pack")
        return bytes(np.packbits(np.array(self.bits, dtype=np.uint8)))


def derive_subchallenges(challenge: bytes, ts: Iterable[int], n_stages: int) -> np.ndarray:
    """Expand a 32-byte challenge into fixed-width sub-challenges.

    Sub-challenge t is the first ceil(n_stages/8) bytes of
    SHA-256(challenge || t as 4-byte big-endian), truncated to n_stages bits
    (MSB-first within each byte).
    """
    if len(challenge) != 32:
        raise ValueError(f"challenge must be exactly 32 bytes, got {len(challenge)}")
    nbytes = (n_stages + 7) // 8
    ts = list(ts)
    sha256 = hashlib.sha256
    buf = bytearray(nbytes * len(ts))
    pos = 0
    for t in ts:
        buf[pos:pos + nbytes] = sha256(challenge + int(t).to_bytes(4, "big")).digest()[:nbytes]
        pos += nbytes
    packed = np.frombuffer(bytes(buf), dtype=np.uint8).reshape(len(ts), nbytes)
    return np.unpackbits(packed, axis=1)[:, :n_stages]


def _stable_mask(delays: np.ndarray, margin: float) -> np.ndarray:
    # Noise-free two-pass classification: stable iff both biased races agree.
    return (delays + margin > 0) == (delays - margin > 0)


def _race_bits(delays: np.ndarray, sigma: float, rng: np.random.Generator | None) -> np.ndarray:
    # Bare-race sign with optional jitter; 0 when the upper path is slower.
    if rng is not None and sigma > 0:
        delays = delays + rng.normal(0.0, sigma, size=delays.shape)
    return (delays <= 0).astype(np.uint8)


def ocec_response(
    puf: PufInstance,
    challenge: bytes,
    temp_c: float = 25.0,
    rng: np.random.Generator | None = None,
    response_len: int = RESPONSE_LEN,
    t_max: int = T_MAX,
) -> OcecResponse:
    """Produce ``response_len`` reliable bits for a 32-byte challenge.

    Sub-challenges are derived by hash-counter expansion and classified by
    the reliability filter; positions failing the filter are discarded and
    derivation continues until enough stable bits are collected.

    The filter decision is the noise-free two-pass classification (the
    enrollment-grade outcome: a position is kept iff its bare delay
    difference exceeds the delay margin), which makes the selected index set
    a deterministic function of (instance, challenge).  The emitted bit is
    the bare arbiter race with jitter, so every kept bit carries a sign
    margin of at least ``delay_margin`` and reproduces across temperature
    with error probability below Phi(-delay_margin/sigma).  With ``rng=None``
    the result is fully deterministic.

    Raises :class:`YieldExhausted` when fewer than ``response_len`` stable
    bits exist among the first ``t_max`` sub-challenges.
    """
    _check_temp(temp_c)
    margin = puf.delay_margin
    sigma = puf.sigma_at(temp_c)
    bits: list[int] = []
    indices: list[int] = []
    t = 0
    # First batch slightly overshoots the request to cover typical filter
    # rejection rates in one pass; later batches grow in fixed steps.
    batch = response_len + max(8, response_len // 8)
    while len(bits) < response_len and t < t_max:
        count = min(batch, t_max - t)
        batch = max(32, response_len // 2)
        sub = derive_subchallenges(challenge, range(t, t + count), puf.n_stages)
        delays = delta_d_batch(puf, sub)
        stable = _stable_mask(delays, margin)
        sel = np.nonzero(stable)[0]
        if sel.size:
            sel_bits = _race_bits(delays[sel], sigma, rng)
            for off, b in zip(sel, sel_bits):
                if len(bits) >= response_len:
                    break
                bits.append(int(b))
                indices.append(t + int(off))
        t += count
    if len(bits) < response_len:
        raise YieldExhausted(len(bits), response_len, t_max)
    return OcecResponse(bits=tuple(bits), source_indices=tuple(indices))


def reliability_mask(puf: PufInstance, challenge: bytes, count: int) -> np.ndarray:
    """Boolean stability classification of the first ``count`` sub-challenges
    (True where the filter would keep the position)."""
    sub = derive_subchallenges(challenge, range(count), puf.n_stages)
    return _stable_mask(delta_d_batch(puf, sub), puf.delay_margin)


def raw_response(
    puf: PufInstance,
    challenge: bytes,
    temp_c: float = 25.0,
    rng: np.random.Generator | None = None,
    response_len: int = RESPONSE_LEN,
) -> np.ndarray:
    """Unfiltered response: the bare race over the first ``response_len``
    sub-challenges, no margin, no reliability filtering."""
    _check_temp(temp_c)
    sub = derive_subchallenges(challenge, range(response_len), puf.n_stages)
    delays = delta_d_batch(puf, sub)
    return _race_bits(delays, puf.sigma_at(temp_c), rng)


def reevaluate_bits(
    puf: PufInstance,
    challenge: bytes,
    source_indices: Sequence[int],
    temp_c: float = 25.0,
    rng: np.random.Generator | None = None,
    rounds: int = 1,
) -> np.ndarray:
    """Re-run the bit-production race at committed positions.

    Returns a (rounds, len(source_indices)) 0/1 matrix drawn through the same
    race model :func:`ocec_response` uses, for flip-count experiments against
    a committed response.
    """
    _check_temp(temp_c)
    sub = derive_subchallenges(challenge, source_indices, puf.n_stages)
    delays = delta_d_batch(puf, sub)
    if not np.all(_stable_mask(delays, puf.delay_margin)):
        raise ValueError("source_indices contain positions the filter rejects")
    sigma = puf.sigma_at(temp_c)
    out = np.empty((rounds, len(source_indices)), dtype=np.uint8)
    for r in range(rounds):
        out[r] = _race_bits(delays, sigma, rng)
    return out
