"""
TK-SLT uplink/downlink accounting, the wireless latency model and the
binary packet codec.

Payload accounting is the idealized bit count of the analysis (probabilities
only, optionally plus token indices); the serialized packet size is reported
separately since the wire format uses byte-aligned u32 ids.
See docs/wire-format.md for the packet layout.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass
from typing import Union

import numpy as np

from dsdsim.dsd_dist import SparseTopK
from dsdsim.dsd_specdec import DownlinkVerdict, DraftPacket, VerifyOutcome

logger = logging.getLogger(__name__)

default_channel_file = (
    f"{os.path.dirname(os.path.realpath(__file__))}/data/default_channel.json"
)

MAGIC = b"TKSL"
WIRE_VERSION = 1
FLAG_PROB32 = 0x01

# magic, version, flags, vocab_size, gamma, k
HEADER = struct.Struct("<4sBBIHH")
VERDICT = struct.Struct("<HIH")
DRAFT_ID = struct.Struct("<I")

# Idealized downlink payload: token index (32 bits) + position j (16 bits)
DOWNLINK_BITS = 32 + 16

# Allowed total mass of decoded probabilities before renormalization
DECODE_MASS_RANGE = (0.98, 1.02)


class MalformedPacketError(ValueError):
    """Raised when a byte buffer is not a valid TK-SLT packet or verdict."""


@dataclass(frozen=True)
class ChannelConfig:
    """Link rates, model step times and payload format.

    Attributes
    ----------
    uplink_rate, downlink_rate : float
        Link rates in bits/second.
    prob_bits : int
        Bits per transmitted probability, 16 (binary16) or 32 (binary32).
    vocab_size : int
        Shared vocabulary size |V|.
    t_llm, t_slm : float
        Seconds per forward step of the target and draft models.
    include_index_bits : bool
        Count ceil(log2 |V|) index bits per sparse entry in the payload.
    include_downlink : bool
        Add the verdict's downlink time to every round.
    """

    uplink_rate: float
    downlink_rate: float
    prob_bits: int
    vocab_size: int
    t_llm: float
    t_slm: float
    include_index_bits: bool = False
    include_downlink: bool = False

    def __post_init__(self):
        for name in ("uplink_rate", "downlink_rate", "t_llm", "t_slm"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value}")
        if self.prob_bits not in (16, 32):
            raise ValueError(f"prob_bits must be 16 or 32, got {self.prob_bits}")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")

    @classmethod
    def from_ratios(
        cls,
        b_full: float,
        c: float,
        vocab_size: int = 32000,
        prob_bits: int = 16,
        uplink_rate: float = 50e6,
        downlink_rate: float = 50e6,
        **kwargs,
    ) -> ChannelConfig:
        """Build a channel whose full-vocabulary b and compute ratio c are given.

        T_LLM is chosen so that transmitting the dense distribution costs
        `b_full` LLM steps, and T_SLM = c * T_LLM.
        """
        if not (b_full > 0 and c > 0):
            raise ValueError(f"b_full and c must be > 0, got {b_full}, {c}")
        if not (uplink_rate > 0 and math.isfinite(uplink_rate)):
            raise ValueError(f"uplink_rate must be a positive finite number, got {uplink_rate}")
        t_vocab = vocab_size * prob_bits / uplink_rate
        t_llm = t_vocab / b_full
        return cls(
            uplink_rate=uplink_rate,
            downlink_rate=downlink_rate,
            prob_bits=prob_bits,
            vocab_size=vocab_size,
            t_llm=t_llm,
            t_slm=c * t_llm,
            **kwargs,
        )

    @classmethod
    def default(cls) -> ChannelConfig:
        """The FP16, 50 Mbit/s, 32k-vocabulary channel with b_full=0.23, c=0.07."""
        with open(default_channel_file, "r") as f:
            params = json.load(f)
        return cls.from_ratios(**params)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LatencyParams:
    """Per-token costs relative to one LLM step: b (uplink), c (SLM), L = b + c."""

    b: float
    c: float

    def __post_init__(self):
        if not (self.b > 0 and self.c > 0):
            raise ValueError(f"b and c must be > 0, got b={self.b}, c={self.c}")

    @property
    def L(self) -> float:
        return self.b + self.c


def _index_bits(vocab_size: int) -> int:
    return math.ceil(math.log2(vocab_size))


def _check_k(k: int, cfg: ChannelConfig):
    if not 1 <= k <= cfg.vocab_size:
        raise ValueError(f"k must be in [1, {cfg.vocab_size}], got {k}")


def ideal_uplink_bits(gamma: int, k: int, cfg: ChannelConfig) -> int:
    """Idealized uplink payload of one round, in bits.

    gamma * k probabilities of `prob_bits` each, plus gamma * k token indices
    of ceil(log2 |V|) bits when `include_index_bits` is set.
    """
    _check_k(k, cfg)
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    bits_per_entry = cfg.prob_bits
    if cfg.include_index_bits:
        bits_per_entry += _index_bits(cfg.vocab_size)
    return gamma * k * bits_per_entry


def downlink_bits() -> int:
    return DOWNLINK_BITS


def serialized_uplink_bytes(gamma: int, k: int, cfg: ChannelConfig) -> int:
    """Size in bytes of an encoded draft packet."""
    _check_k(k, cfg)
    entry = 4 + cfg.prob_bits // 8
    return HEADER.size + gamma * (DRAFT_ID.size + k * entry)


def latency_params(cfg: ChannelConfig, k: int) -> LatencyParams:
    """b, c and L for top-K transmission over `cfg`."""
    t_vocab = ideal_uplink_bits(1, k, cfg) / cfg.uplink_rate
    return LatencyParams(b=t_vocab / cfg.t_llm, c=cfg.t_slm / cfg.t_llm)


def round_latency(cfg: ChannelConfig, gamma: int, k: int) -> float:
    """Wall-clock seconds of one draft-verify round.

    gamma * (T_SLM + T_V) + T_LLM, plus the downlink time when enabled.
    """
    t_vocab = ideal_uplink_bits(1, k, cfg) / cfg.uplink_rate
    t_round = gamma * (cfg.t_slm + t_vocab) + cfg.t_llm
    if cfg.include_downlink:
        t_round += DOWNLINK_BITS / cfg.downlink_rate
    return t_round


def _prob_dtype(prob_bits: int) -> np.dtype:
    return np.dtype("<f2") if prob_bits == 16 else np.dtype("<f4")


def _entry_dtype(prob_bits: int) -> np.dtype:
    return np.dtype([("token_id", "<u4"), ("prob", _prob_dtype(prob_bits))])


def encode_draft(packet: DraftPacket, cfg: ChannelConfig) -> bytes:
    """Serialize a draft packet (all fields little-endian)."""
    if packet.vocab_size != cfg.vocab_size:
        raise ValueError(
            f"Packet vocabulary {packet.vocab_size} != channel vocabulary {cfg.vocab_size}"
        )
    if packet.gamma > 0xFFFF or packet.k > 0xFFFF:
        raise ValueError(f"gamma={packet.gamma} / k={packet.k} do not fit in u16")
    flags = FLAG_PROB32 if cfg.prob_bits == 32 else 0
    parts = [
        HEADER.pack(MAGIC, WIRE_VERSION, flags, cfg.vocab_size, packet.gamma, packet.k)
    ]
    entry_dtype = _entry_dtype(cfg.prob_bits)
    for token, dist in zip(packet.draft_tokens, packet.dists):
        parts.append(DRAFT_ID.pack(token))
        entries = np.empty(dist.k, dtype=entry_dtype)
        entries["token_id"] = dist.token_ids
        entries["prob"] = dist.probs
        parts.append(entries.tobytes())
    return b"".join(parts)


def decode_draft(data: bytes, cfg: ChannelConfig) -> DraftPacket:
    """Parse a draft packet; the inverse of `encode_draft` up to prob quantization.

    Decoded probabilities are renormalized to sum to 1 and re-sorted into
    canonical order (quantization can turn distinct probabilities into ties).

    Raises
    ------
    MalformedPacketError
        Bad magic or version, truncated or oversized buffer, out-of-range
        token ids, or probability mass outside [0.98, 1.02].
    """
    data = bytes(data)
    if len(data) < HEADER.size:
        raise MalformedPacketError(
            f"Buffer of {len(data)} bytes is shorter than the {HEADER.size}-byte header"
        )
    magic, version, flags, vocab_size, gamma, k = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MalformedPacketError(f"Bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise MalformedPacketError(f"Unsupported wire version {version}")
    if vocab_size != cfg.vocab_size:
        raise MalformedPacketError(
            f"Packet vocabulary {vocab_size} != channel vocabulary {cfg.vocab_size}"
        )
    if gamma < 1 or not 1 <= k <= vocab_size:
        raise MalformedPacketError(f"Invalid gamma={gamma} or k={k}")
    prob_bits = 32 if flags & FLAG_PROB32 else 16
    entry_dtype = _entry_dtype(prob_bits)

    expected = HEADER.size + gamma * (DRAFT_ID.size + k * entry_dtype.itemsize)
    if len(data) != expected:
        raise MalformedPacketError(
            f"Buffer holds {len(data)} bytes, header implies {expected}"
        )

    offset = HEADER.size
    tokens = []
    dists = []
    for i in range(gamma):
        (token,) = DRAFT_ID.unpack_from(data, offset)
        offset += DRAFT_ID.size
        entries = np.frombuffer(data, dtype=entry_dtype, count=k, offset=offset)
        offset += k * entry_dtype.itemsize

        ids = entries["token_id"].astype(np.int64)
        probs = entries["prob"].astype(np.float64)
        if token >= vocab_size or np.any(ids >= vocab_size):
            raise MalformedPacketError(f"Token id out of range at position {i}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise MalformedPacketError(f"Invalid probability values at position {i}")
        mass = probs.sum()
        if not DECODE_MASS_RANGE[0] <= mass <= DECODE_MASS_RANGE[1]:
            raise MalformedPacketError(
                f"Probabilities at position {i} sum to {mass:.6f}"
            )
        try:
            dist = SparseTopK.from_entries(zip(ids, probs / mass), vocab_size)
        except ValueError as e:
            raise MalformedPacketError(f"Invalid sparse distribution at position {i}: {e}")
        tokens.append(int(token))
        dists.append(dist)

    try:
        return DraftPacket(tuple(tokens), tuple(dists), gamma, k)
    except ValueError as e:
        raise MalformedPacketError(str(e))


def encode_verdict(verdict: Union[VerifyOutcome, DownlinkVerdict]) -> bytes:
    """Serialize the downlink verdict: position_j u16, token u32, accepted u16."""
    if isinstance(verdict, VerifyOutcome):
        verdict = verdict.verdict
    return VERDICT.pack(verdict.position_j, verdict.token, verdict.accepted_count)


def decode_verdict(data: bytes) -> DownlinkVerdict:
    data = bytes(data)
    if len(data) != VERDICT.size:
        raise MalformedPacketError(
            f"Verdict must be {VERDICT.size} bytes, got {len(data)}"
        )
    position_j, token, accepted_count = VERDICT.unpack(data)
    if position_j != accepted_count + 1:
        raise MalformedPacketError(
            f"position_j={position_j} inconsistent with accepted_count={accepted_count}"
        )
    return DownlinkVerdict(position_j, token, accepted_count)
