"""2-bit packing of ternary weight matrices, four values per byte.

Encoding: code = value + 1, so -1 -> 0b00, 0 -> 0b01, +1 -> 0b10.
Code 0b11 is reserved and treated as corruption. Within a byte, the
value for column offset i (i = 0..3) occupies bits [2i, 2i+1]. Rows
are packed independently: each row starts on a byte boundary and is
ceil(cols/4) bytes long, with trailing padding fields set to the code
for 0. The layout is defined at the bit level and is therefore
identical across platforms; it is also the on-disk tensor payload.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CorruptDataError, InvalidInputError
from .quant import TernaryWeights

RESERVED_CODE = 0b11
PAD_CODE = 0b01

# Decode table: byte -> 4 signed values (code 3 decodes to 2, the
# out-of-range sentinel checked by validation).
_FIELD_SHIFTS = np.array([0, 2, 4, 6], dtype=np.uint8)
_BYTE_TO_VALUES = (
    ((np.arange(256, dtype=np.uint8)[:, None] >> _FIELD_SHIFTS) & 0x3).astype(np.int8) - 1
)


def packed_size_bytes(rows: int, cols: int) -> int:
    """Payload size in bytes for a rows x cols packed ternary matrix."""
    if rows < 1 or cols < 1:
        raise InvalidInputError("rows and cols must be >= 1")
    return rows * ((cols + 3) // 4)


@dataclass(frozen=True, eq=False)
class PackedTernaryTensor:
    """Packed ternary matrix: immutable bytes plus shape and scale.

    validated=True marks payloads already checked for reserved codes
    (set by pack_ternary and by the model-file reader), letting kernels
    skip a redundant scan on the hot path.
    """

    data: bytes
    rows: int
    cols: int
    weight_scale: float
    validated: bool = False

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidInputError("rows and cols must be >= 1")
        if not isinstance(self.data, (bytes, bytearray)):
            raise InvalidInputError("data must be a byte sequence")
        expected = packed_size_bytes(self.rows, self.cols)
        if len(self.data) != expected:
            raise InvalidInputError(
                f"payload is {len(self.data)} bytes, layout requires {expected}"
            )
        s = float(self.weight_scale)
        if not np.isfinite(s) or s < 0.0:
            raise InvalidInputError("weight_scale must be finite and >= 0")
        object.__setattr__(self, "data", bytes(self.data))
        object.__setattr__(self, "weight_scale", s)

    @property
    def row_bytes(self) -> int:
        return (self.cols + 3) // 4

    @property
    def payload_bytes(self) -> int:
        return len(self.data)


def pack_ternary(tw: TernaryWeights) -> PackedTernaryTensor:
    """Pack a ternary matrix into the 4-values-per-byte layout."""
    values = np.asarray(tw.values)
    if values.dtype != np.int8 or np.any(np.abs(values.astype(np.int32)) > 1):
        raise InvalidInputError("pack input entries must be int8 in {-1, 0, +1}")
    rows, cols = values.shape
    row_bytes = (cols + 3) // 4
    # Pad columns with 0 so padding fields encode as PAD_CODE.
    padded = np.zeros((rows, row_bytes * 4), dtype=np.int8)
    padded[:, :cols] = values
    codes = (padded + 1).astype(np.uint8).reshape(rows, row_bytes, 4)
    shifted = codes << np.array([0, 2, 4, 6], dtype=np.uint8)
    data = shifted[:, :, 0] | shifted[:, :, 1] | shifted[:, :, 2] | shifted[:, :, 3]
    return PackedTernaryTensor(
        data=data.tobytes(),
        rows=rows,
        cols=cols,
        weight_scale=tw.weight_scale,
        validated=True,
    )


def _payload_matrix(pt: PackedTernaryTensor) -> np.ndarray:
    return np.frombuffer(pt.data, dtype=np.uint8).reshape(pt.rows, pt.row_bytes)


def validate_payload(pt: PackedTernaryTensor) -> None:
    """Check every 2-bit field of a packed payload.

    Raises CorruptDataError (with the offset of the first bad byte) if
    any real column holds the reserved code or any padding field holds
    a code other than the zero code.
    """
    mat = _payload_matrix(pt)
    decoded = _BYTE_TO_VALUES[mat].reshape(pt.rows, -1)
    bad = decoded[:, : pt.cols] == 2
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        offset = int(r) * pt.row_bytes + int(c) // 4
        raise CorruptDataError(
            f"reserved ternary code at byte offset {offset}", byte_offset=offset
        )
    pad = decoded[:, pt.cols :]
    if pad.size and np.any(pad != 0):
        r, c = np.argwhere(pad != 0)[0]
        offset = int(r) * pt.row_bytes + (pt.cols + int(c)) // 4
        raise CorruptDataError(
            f"padding field is not the zero code at byte offset {offset}",
            byte_offset=offset,
        )


def unpack_ternary(pt: PackedTernaryTensor) -> TernaryWeights:
    """Decode a packed tensor back to its ternary matrix.

    Exact inverse of pack_ternary; padding fields are discarded after
    validation.
    """
    validate_payload(pt)
    decoded = _BYTE_TO_VALUES[_payload_matrix(pt)].reshape(pt.rows, -1)
    return TernaryWeights(
        values=np.ascontiguousarray(decoded[:, : pt.cols]),
        weight_scale=pt.weight_scale,
    )
