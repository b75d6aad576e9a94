"""Wire format for model updates and the compressed index metadata.

Every message starts with a fixed 13-byte header: round (u32), sender (u32),
kind (u8), entry count K (u32), all little-endian. The payload depends on the
kind:

* FULL            -- K float32 values, nothing else.
* JWINS_INDICES   -- Elias-gamma coded index gaps (byte-aligned), then K
                     float32 values.
* RANDOM_SEED     -- one u64 seed, then K float32 values. The receiver
                     regenerates the index set from (seed, K).
* RAW_INDICES     -- K u32 indices, then K float32 values. Same content as
                     JWINS_INDICES without metadata compression; kept for the
                     compression-off ablation.

Gap coding: for sorted indices i_0 < i_1 < ..., the gaps are i_0 + 1 followed
by the successive differences, so every gap is a positive integer. Elias
gamma writes each gap g as floor(log2 g) zero bits, then g's binary digits
MSB first. The bit stream is packed MSB-first and zero-padded to a whole
byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .sparsify import random_indices


class CodecError(ValueError):
    """Malformed message or metadata stream."""


class UpdateKind(IntEnum):
    FULL = 0
    JWINS_INDICES = 1
    RANDOM_SEED = 2
    RAW_INDICES = 3


HEADER = struct.Struct("<IIBI")
HEADER_LEN = HEADER.size  # 13
_SEED = struct.Struct("<Q")
_U32_MAX = 2**32 - 1
_MAX_GAMMA_ZEROS = 64


@dataclass(eq=False)
class SparseUpdate:
    """One decoded (or to-be-encoded) update message.

    ``indices`` is None for FULL (implicitly all slots) and for RANDOM_SEED
    before regeneration. ``byte_size`` and ``meta_bytes`` are the exact wire
    cost; ``meta_bytes`` counts only the index metadata portion.
    """

    round_no: int
    sender: int
    kind: UpdateKind
    values: np.ndarray
    indices: np.ndarray | None = None
    seed: int | None = None
    index_payload: bytes | None = None
    byte_size: int = 0
    meta_bytes: int = 0

    @property
    def k(self) -> int:
        return int(self.values.size)


def indices_to_gaps(indices: np.ndarray) -> np.ndarray:
    """Strictly increasing non-negative indices -> positive gap sequence."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return np.empty(0, dtype=np.int64)
    if idx[0] < 0 or (idx.size > 1 and np.any(np.diff(idx) <= 0)):
        raise CodecError("indices not strictly increasing")
    gaps = np.empty(idx.size, dtype=np.int64)
    gaps[0] = idx[0] + 1
    gaps[1:] = np.diff(idx)
    return gaps


def gaps_to_indices(gaps: np.ndarray) -> np.ndarray:
    gaps = np.asarray(gaps, dtype=np.int64)
    if gaps.size and np.any(gaps <= 0):
        raise CodecError("gaps must be positive")
    return np.cumsum(gaps) - 1


def elias_gamma_encode(gaps) -> bytes:
    """Pack positive integers into a byte-aligned Elias-gamma bit stream."""
    g = np.asarray(gaps, dtype=np.int64)
    if g.size == 0:
        return b""
    if np.any(g <= 0):
        raise CodecError("gamma code is undefined for non-positive integers")
    # bit_length via frexp; exact for anything below 2**53, far beyond any
    # index gap a u32-indexed message can produce.
    _, exp = np.frexp(g.astype(np.float64))
    blen = exp.astype(np.int64)
    starts = np.zeros(g.size + 1, dtype=np.int64)
    np.cumsum(2 * blen - 1, out=starts[1:])
    bits = np.zeros(int(starts[-1]), dtype=np.uint8)
    # Codeword i spans [starts[i], starts[i+1]); its blen[i] payload bits
    # (leading 1 included) start after blen[i] - 1 zeros.
    total_payload = int(blen.sum())
    payload_start = starts[:-1] + blen - 1
    csum = np.cumsum(blen) - blen
    intra = np.arange(total_payload, dtype=np.int64) - np.repeat(csum, blen)
    pos = np.repeat(payload_start, blen) + intra
    shift = np.repeat(blen, blen) - 1 - intra
    bits[pos] = ((np.repeat(g, blen) >> shift) & 1).astype(np.uint8)
    return np.packbits(bits).tobytes()


def elias_gamma_decode(data: bytes, count: int) -> np.ndarray:
    """Read ``count`` gamma codewords; trailing pad bits are ignored.

    Raises CodecError("truncated stream") when the data runs out mid-codeword
    and CodecError("corrupt codeword") on a zero run of 64 or more bits.
    Never returns a partial result.
    """
    if count < 0:
        raise CodecError("negative codeword count")
    if count > 8 * len(data):
        # Every codeword needs at least one bit; reject before allocating.
        raise CodecError("truncated stream")
    gaps, _ = _scan_gamma(data, 0, count)
    return gaps


def encode_indices(indices: np.ndarray) -> bytes:
    """Sorted indices -> gamma-coded gap bytes."""
    return elias_gamma_encode(indices_to_gaps(indices))


def decode_indices(data: bytes, count: int) -> np.ndarray:
    """Gamma-coded gap bytes -> sorted indices."""
    return gaps_to_indices(elias_gamma_decode(data, count))


def compression_ratio(indices: np.ndarray) -> float:
    """Raw u32 index bits over gamma-coded bits for one selection.

    An empty selection costs nothing either way; that ratio is reported as
    +inf.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return float("inf")
    coded = encode_indices(idx)
    return (32.0 * idx.size) / (8.0 * len(coded))


def _as_f32(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float32)
    if v.ndim != 1:
        raise CodecError("values must be a 1-D vector")
    return v


def _check_ids(round_no: int, sender: int) -> None:
    if not 0 <= round_no <= _U32_MAX:
        raise CodecError("round out of range")
    if not 0 <= sender <= _U32_MAX:
        raise CodecError("sender out of range")


def make_full_update(round_no: int, sender: int, values) -> SparseUpdate:
    """Dense update: every slot, values in slot order."""
    _check_ids(round_no, sender)
    v = _as_f32(values)
    size = HEADER_LEN + 4 * v.size
    return SparseUpdate(round_no, sender, UpdateKind.FULL, v, byte_size=size, meta_bytes=0)


def make_indexed_update(
    round_no: int,
    sender: int,
    indices,
    values,
    compressed: bool = True,
) -> SparseUpdate:
    """Sparse update carrying explicit indices, gamma-coded unless disabled."""
    _check_ids(round_no, sender)
    v = _as_f32(values)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size != v.size:
        raise CodecError("index and value counts differ")
    if idx.size and (idx[0] < 0 or int(idx[-1]) > _U32_MAX):
        raise CodecError("index out of range")
    if compressed:
        payload = encode_indices(idx)
        kind = UpdateKind.JWINS_INDICES
    else:
        if idx.size and (idx[0] < 0 or np.any(np.diff(idx) <= 0)):
            raise CodecError("indices not strictly increasing")
        payload = idx.astype("<u4").tobytes()
        kind = UpdateKind.RAW_INDICES
    size = HEADER_LEN + len(payload) + 4 * v.size
    return SparseUpdate(
        round_no,
        sender,
        kind,
        v,
        indices=idx,
        index_payload=payload,
        byte_size=size,
        meta_bytes=len(payload),
    )


def make_seed_update(round_no: int, sender: int, seed: int, values) -> SparseUpdate:
    """Sparse update whose index set is regenerated from a shared seed."""
    _check_ids(round_no, sender)
    if not 0 <= seed < 2**64:
        raise CodecError("seed out of range")
    v = _as_f32(values)
    size = HEADER_LEN + 8 + 4 * v.size
    return SparseUpdate(
        round_no,
        sender,
        UpdateKind.RANDOM_SEED,
        v,
        seed=int(seed),
        byte_size=size,
        meta_bytes=8,
    )


def serialize(update: SparseUpdate) -> bytes:
    """Exact wire bytes for an update; length always equals ``byte_size``."""
    head = HEADER.pack(update.round_no, update.sender, int(update.kind), update.k)
    body = update.values.astype("<f4").tobytes()
    if update.kind == UpdateKind.FULL:
        out = head + body
    elif update.kind == UpdateKind.JWINS_INDICES:
        payload = update.index_payload
        if payload is None:
            payload = encode_indices(update.indices)
        out = head + payload + body
    elif update.kind == UpdateKind.RAW_INDICES:
        payload = update.index_payload
        if payload is None:
            payload = np.asarray(update.indices, dtype="<u4").tobytes()
        out = head + payload + body
    elif update.kind == UpdateKind.RANDOM_SEED:
        out = head + _SEED.pack(update.seed) + body
    else:
        raise CodecError("unknown update kind %r" % (update.kind,))
    if update.byte_size and len(out) != update.byte_size:
        raise CodecError("serialized length disagrees with byte_size")
    return out


def deserialize(data: bytes) -> SparseUpdate:
    """Parse one message occupying the whole buffer.

    Rejects unknown kinds, short buffers ("truncated stream"), trailing bytes
    ("length overrun"), and index metadata that is not strictly increasing.
    """
    if len(data) < HEADER_LEN:
        raise CodecError("truncated stream")
    round_no, sender, kind_raw, k = HEADER.unpack_from(data, 0)
    try:
        kind = UpdateKind(kind_raw)
    except ValueError:
        raise CodecError("unknown update kind %d" % kind_raw) from None
    body_at = HEADER_LEN
    indices = None
    seed = None
    payload = None
    meta = 0
    if kind == UpdateKind.JWINS_INDICES:
        # A valid message needs >= 1 metadata bit and 4 value bytes per entry;
        # reject impossible counts before the scanner allocates anything.
        if len(data) < HEADER_LEN + (k + 7) // 8 + 4 * k:
            raise CodecError("truncated stream")
        gaps, body_at = _scan_gamma(data, HEADER_LEN, k)
        indices = gaps_to_indices(gaps)
        if indices.size and int(indices[-1]) > _U32_MAX:
            raise CodecError("index out of range")
        payload = data[HEADER_LEN:body_at]
        meta = len(payload)
    elif kind == UpdateKind.RAW_INDICES:
        body_at = HEADER_LEN + 4 * k
        if len(data) < body_at:
            raise CodecError("truncated stream")
        indices = np.frombuffer(data, dtype="<u4", count=k, offset=HEADER_LEN).astype(np.int64)
        if indices.size > 1 and np.any(np.diff(indices) <= 0):
            raise CodecError("indices not strictly increasing")
        payload = data[HEADER_LEN:body_at]
        meta = 4 * k
    elif kind == UpdateKind.RANDOM_SEED:
        body_at = HEADER_LEN + 8
        if len(data) < body_at:
            raise CodecError("truncated stream")
        (seed,) = _SEED.unpack_from(data, HEADER_LEN)
        meta = 8
    end = body_at + 4 * k
    if len(data) < end:
        raise CodecError("truncated stream")
    if len(data) > end:
        raise CodecError("length overrun")
    values = np.frombuffer(data, dtype="<f4", count=k, offset=body_at).copy()
    return SparseUpdate(
        round_no,
        sender,
        kind,
        values,
        indices=indices,
        seed=seed,
        index_payload=payload,
        byte_size=len(data),
        meta_bytes=meta,
    )


def _scan_gamma(data: bytes, start: int, count: int) -> tuple[np.ndarray, int]:
    """Decode ``count`` codewords starting at byte ``start``.

    Returns the gaps and the byte offset just past the (padded) stream. Bytes
    are pulled into the bit window greedily, so the stream end is computed
    from the codeword bits actually consumed, not the read position.
    """
    gaps = np.empty(count, dtype=np.int64)
    acc = 0
    n_acc = 0
    pos = start
    n = len(data)
    bits_used = 0
    for i in range(count):
        zeros = 0
        while True:
            if n_acc == 0:
                if pos >= n:
                    raise CodecError("truncated stream")
                take = min(8, n - pos)
                acc = int.from_bytes(data[pos : pos + take], "big")
                n_acc = 8 * take
                pos += take
            top = acc.bit_length()
            if top == 0:
                zeros += n_acc
                n_acc = 0
                if zeros >= _MAX_GAMMA_ZEROS:
                    raise CodecError("corrupt codeword")
                continue
            zeros += n_acc - top
            n_acc = top
            break
        if zeros >= _MAX_GAMMA_ZEROS:
            raise CodecError("corrupt codeword")
        while n_acc < zeros + 1:
            if pos >= n:
                raise CodecError("truncated stream")
            take = min(8, n - pos)
            acc = (acc << (8 * take)) | int.from_bytes(data[pos : pos + take], "big")
            n_acc += 8 * take
            pos += take
        gaps[i] = acc >> (n_acc - (zeros + 1))
        n_acc -= zeros + 1
        acc &= (1 << n_acc) - 1
        bits_used += 2 * zeros + 1
    return gaps, start + (bits_used + 7) // 8


def resolve_indices(update: SparseUpdate, coeff_len: int) -> np.ndarray | None:
    """Index set a receiver should scatter the values into.

    FULL (and any update covering every slot) resolves to None, meaning "all
    slots in order". RANDOM_SEED regenerates the set from the carried seed.
    Raises CodecError when indices fall outside [0, coeff_len) or the entry
    count is inconsistent with the slot count.
    """
    if update.k > coeff_len:
        raise CodecError("more entries than coefficient slots")
    if update.kind == UpdateKind.FULL:
        if update.k != coeff_len:
            raise CodecError("dense update with wrong slot count")
        return None
    if update.kind == UpdateKind.RANDOM_SEED:
        idx = random_indices(coeff_len, update.k, update.seed)
    else:
        idx = update.indices
        if idx is None:
            raise CodecError("indexed update without indices")
        if idx.size and (int(idx[0]) < 0 or int(idx[-1]) >= coeff_len):
            raise CodecError("index out of range")
    if idx.size == coeff_len:
        return None
    return idx


def write_message_dump(path, updates) -> None:
    """Length-prefixed record stream: u32 LE byte length, then the message."""
    with open(path, "wb") as fh:
        for u in updates:
            blob = serialize(u)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)


def read_message_dump(path) -> list[SparseUpdate]:
    out = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) < 4:
                raise CodecError("truncated stream")
            (length,) = struct.unpack("<I", head)
            blob = fh.read(length)
            if len(blob) < length:
                raise CodecError("truncated stream")
            out.append(deserialize(blob))
    return out
