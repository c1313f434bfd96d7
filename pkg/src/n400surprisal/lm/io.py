"""Versioned binary weight files.

Layout (all integers little-endian uint32 unless noted):

    magic ``N400LMPS`` (8 bytes), format version, n_layers, vocab_size,
    embedding_size, hidden sizes (n_layers entries), seed (uint64),
    vocabulary SHA-256 (32 bytes), config SHA-256 (32 bytes, zeros when
    unset), then the parameter arrays as little-endian float64 in a fixed
    order: embedding, per-layer w_x / w_h / bias, output projection, output
    bias.  A trailing length check rejects truncated files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from n400surprisal import WEIGHT_FORMAT_VERSION
from n400surprisal.lm.network import LstmParams

MAGIC = b"N400LMPS"
_ZERO_HASH = bytes(32)


class WeightFormatError(ValueError):
    """Weight file is malformed or inconsistent with the caller's model."""


@dataclass(frozen=True)
class WeightFileHeader:
    format_version: int
    vocab_size: int
    embedding_size: int
    hidden_sizes: tuple[int, ...]
    seed: int
    vocab_hash: str      # hex
    config_hash: str     # hex, "" when unset


def save_params(
    params: LstmParams,
    path,
    vocab_hash: str,
    seed: int = 0,
    config_hash: str = "",
) -> None:
    """Write parameters with their dimensions and vocabulary hash."""
    vocab_digest = bytes.fromhex(vocab_hash)
    if len(vocab_digest) != 32:
        raise ValueError("vocab_hash must be a 64-character hex SHA-256")
    config_digest = bytes.fromhex(config_hash) if config_hash else _ZERO_HASH
    if len(config_digest) != 32:
        raise ValueError("config_hash must be a 64-character hex SHA-256")
    header = struct.pack(
        f"<4I{params.n_layers}IQ",
        WEIGHT_FORMAT_VERSION,
        params.n_layers,
        params.vocab_size,
        params.embedding_size,
        *params.hidden_sizes,
        seed,
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header)
        fh.write(vocab_digest)
        fh.write(config_digest)
        for arr in params.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_header(path) -> WeightFileHeader:
    with open(path, "rb") as fh:
        return _read_header(fh)


def _read_header(fh) -> WeightFileHeader:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise WeightFormatError(f"bad magic {magic!r}; not a weight file")
    fixed = fh.read(16)
    if len(fixed) != 16:
        raise WeightFormatError("truncated header")
    version, n_layers, vocab_size, embedding_size = struct.unpack("<4I", fixed)
    if version != WEIGHT_FORMAT_VERSION:
        raise WeightFormatError(
            f"format version {version} unsupported (expected {WEIGHT_FORMAT_VERSION})"
        )
    rest = fh.read(4 * n_layers + 8 + 64)
    if len(rest) != 4 * n_layers + 8 + 64:
        raise WeightFormatError("truncated header")
    hidden_sizes = struct.unpack(f"<{n_layers}I", rest[: 4 * n_layers])
    (seed,) = struct.unpack("<Q", rest[4 * n_layers: 4 * n_layers + 8])
    vocab_digest = rest[4 * n_layers + 8: 4 * n_layers + 40]
    config_digest = rest[4 * n_layers + 40:]
    return WeightFileHeader(
        format_version=version,
        vocab_size=vocab_size,
        embedding_size=embedding_size,
        hidden_sizes=hidden_sizes,
        seed=seed,
        vocab_hash=vocab_digest.hex(),
        config_hash="" if config_digest == _ZERO_HASH else config_digest.hex(),
    )


def load_params(path, expected_vocab_hash: str | None = None) -> tuple[LstmParams, WeightFileHeader]:
    """Read a weight file back into LstmParams (bit-identical round trip).

    When ``expected_vocab_hash`` is given, a mismatch with the stored hash is
    an error: the weights were trained against a different vocabulary.
    """
    with open(path, "rb") as fh:
        header = _read_header(fh)
        if expected_vocab_hash is not None and header.vocab_hash != expected_vocab_hash:
            raise WeightFormatError(
                "vocabulary hash mismatch: weight file was trained against a "
                f"different vocabulary (file {header.vocab_hash[:12]}…, "
                f"caller {expected_vocab_hash[:12]}…)"
            )
        payload = fh.read()

    shapes = [(header.vocab_size, header.embedding_size)]
    in_dim = header.embedding_size
    for hidden in header.hidden_sizes:
        shapes.append((4 * hidden, in_dim))
        in_dim = hidden
    for hidden in header.hidden_sizes:
        shapes.append((4 * hidden, hidden))
    for hidden in header.hidden_sizes:
        shapes.append((4 * hidden,))
    shapes.append((header.vocab_size, in_dim))
    shapes.append((header.vocab_size,))

    expected_floats = sum(int(np.prod(s)) for s in shapes)
    if len(payload) != expected_floats * 8:
        raise WeightFormatError(
            f"payload length {len(payload)} bytes does not match the declared "
            f"dimensions ({expected_floats * 8} bytes expected)"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    arrays = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[offset: offset + size].reshape(shape))
        offset += size
    n_layers = len(header.hidden_sizes)
    params = LstmParams(
        embedding=arrays[0],
        w_x=tuple(arrays[1: 1 + n_layers]),
        w_h=tuple(arrays[1 + n_layers: 1 + 2 * n_layers]),
        bias=tuple(arrays[1 + 2 * n_layers: 1 + 3 * n_layers]),
        w_out=arrays[-2],
        b_out=arrays[-1],
    )
    return params, header
