"""On-disk model container and the float-checkpoint converter.

Layout (all integers little-endian):

  magic "BT58" | version u32 = 1 | config_len u32 | config JSON (UTF-8)
  | tensor_count u32 | tensor records | aligned payloads

Each tensor record is: name_len u32, name bytes, dtype u8 (0 = packed
ternary, 1 = float32), rows u32, cols u32, weight_scale f32 (packed
only), payload offset u64, payload length u64. Payload offsets are
64-byte aligned and payloads never overlap. Writes are deterministic:
identical inputs produce identical bytes (fixed tensor ordering,
canonical JSON, zero padding).
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CorruptDataError,
    InvalidInputError,
    InvalidRecordError,
    OverlappingRecordsError,
    TernkitError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .model import _GAIN_DIMS, _LINEAR_SHAPES, LAYER_TENSOR_ORDER, ModelConfig
from .pack import PackedTernaryTensor, packed_size_bytes, validate_payload
from .quant import absmean_quantize_weights, round_half_away_from_zero
from . import pack as packmod

MAGIC = b"BT58"
VERSION = 1
DTYPE_PACKED = 0
DTYPE_REAL32 = 1
ALIGNMENT = 64

_LAYER_RANK = {part: i for i, part in enumerate(LAYER_TENSOR_ORDER)}


@dataclass(frozen=True)
class TensorRecord:
    """Parsed description of one stored tensor."""

    name: str
    dtype: int
    rows: int
    cols: int
    weight_scale: float | None
    offset: int
    length: int


def _sort_key(name: str):
    """Canonical ordering: embedding, then layers in index order with a
    fixed within-layer part order, then remaining names alphabetically."""
    if name == "embedding":
        return (0, 0, 0, "")
    parts = name.split(".")
    if len(parts) == 3 and parts[0] == "layers" and parts[1].isdigit():
        return (1, int(parts[1]), _LAYER_RANK.get(parts[2], len(_LAYER_RANK)), name)
    return (2, 0, 0, name)


def _expected_shape(name: str, config: ModelConfig):
    """Known canonical names map to config-determined shapes; None otherwise."""
    if name == "embedding" or name == "lm_head":
        return (config.vocab_size, config.d_model)
    if name == "final_norm":
        return (1, config.d_model)
    parts = name.split(".")
    if len(parts) == 3 and parts[0] == "layers" and parts[1].isdigit():
        part = parts[2]
        if part in _LINEAR_SHAPES:
            rname, cname = _LINEAR_SHAPES[part]
            return (getattr(config, rname), getattr(config, cname))
        if part in _GAIN_DIMS:
            return (1, getattr(config, _GAIN_DIMS[part]))
    return None


def _align(offset: int) -> int:
    return (offset + ALIGNMENT - 1) // ALIGNMENT * ALIGNMENT


def config_to_json_bytes(config: ModelConfig) -> bytes:
    return json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_model(path, config: ModelConfig, tensors: dict) -> None:
    """Serialize named tensors deterministically.

    tensors maps name -> PackedTernaryTensor or 2-D float32 ndarray.
    Canonical model tensor names are shape-checked against the config;
    other names are stored as given.
    """
    ordered = sorted(tensors, key=_sort_key)
    entries = []
    for name in ordered:
        if not name:
            raise InvalidInputError("tensor names must be non-empty")
        t = tensors[name]
        if isinstance(t, PackedTernaryTensor):
            shape = (t.rows, t.cols)
            payload = t.data
            dtype = DTYPE_PACKED
            scale = t.weight_scale
        elif isinstance(t, np.ndarray):
            arr = np.asarray(t, dtype=np.float32)
            if arr.ndim != 2 or arr.size == 0:
                raise InvalidInputError(f"tensor {name!r} must be a non-empty 2-D matrix")
            shape = arr.shape
            payload = np.ascontiguousarray(arr).astype("<f4").tobytes()
            dtype = DTYPE_REAL32
            scale = None
        else:
            raise InvalidInputError(f"tensor {name!r} has unsupported type {type(t).__name__}")
        expected = _expected_shape(name, config)
        if expected is not None and tuple(shape) != expected:
            raise InvalidInputError(
                f"tensor {name!r} is {tuple(shape)}, config requires {expected}"
            )
        entries.append((name, dtype, shape, scale, payload))

    cfg_bytes = config_to_json_bytes(config)
    header = MAGIC + struct.pack("<I", VERSION)
    header += struct.pack("<I", len(cfg_bytes)) + cfg_bytes
    header += struct.pack("<I", len(entries))

    rec_sizes = []
    for name, dtype, _, _, _ in entries:
        name_b = name.encode("utf-8")
        rec_sizes.append(4 + len(name_b) + 1 + 4 + 4 + (4 if dtype == DTYPE_PACKED else 0) + 8 + 8)
    cursor = len(header) + sum(rec_sizes)

    offsets = []
    for _, _, _, _, payload in entries:
        off = _align(cursor)
        offsets.append(off)
        cursor = off + len(payload)

    blob = bytearray(header)
    for (name, dtype, shape, scale, payload), off in zip(entries, offsets):
        name_b = name.encode("utf-8")
        blob += struct.pack("<I", len(name_b)) + name_b
        blob += struct.pack("<B", dtype)
        blob += struct.pack("<II", shape[0], shape[1])
        if dtype == DTYPE_PACKED:
            blob += struct.pack("<f", scale)
        blob += struct.pack("<QQ", off, len(payload))
    for (_, _, _, _, payload), off in zip(entries, offsets):
        blob += b"\x00" * (off - len(blob))
        blob += payload
    Path(path).write_bytes(bytes(blob))


class _Cursor:
    """Bounds-checked little-endian reader over an in-memory file image."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise TruncatedFileError(f"file ends inside {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.take(4, what))[0]


def _parse(data: bytes) -> tuple[ModelConfig, list[TensorRecord]]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a ternary model container (bad magic)")
    cur = _Cursor(data)
    cur.pos = 4
    version = cur.u32("version field")
    if version != VERSION:
        raise UnsupportedVersionError(f"container version {version} is not supported")
    cfg_len = cur.u32("config length")
    cfg_bytes = cur.take(cfg_len, "config block")
    try:
        cfg_obj = json.loads(cfg_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InvalidRecordError(f"config block is not valid JSON: {e}") from e
    try:
        config = ModelConfig.from_dict(cfg_obj)
    except TernkitError as e:
        raise InvalidRecordError(f"config block invalid: {e}") from e

    n_tensors = cur.u32("tensor count")
    records = []
    seen = set()
    for i in range(n_tensors):
        where = f"tensor record {i}"
        name_len = cur.u32(where)
        name_b = cur.take(name_len, where)
        try:
            name = name_b.decode("utf-8")
        except UnicodeDecodeError as e:
            raise InvalidRecordError(f"{where}: name is not valid UTF-8") from e
        if not name:
            raise InvalidRecordError(f"{where}: empty tensor name")
        if name in seen:
            raise InvalidRecordError(f"{where}: duplicate tensor name {name!r}")
        seen.add(name)
        dtype = cur.u8(where)
        if dtype not in (DTYPE_PACKED, DTYPE_REAL32):
            raise InvalidRecordError(f"tensor {name!r}: unknown dtype code {dtype}")
        rows = cur.u32(where)
        cols = cur.u32(where)
        if rows < 1 or cols < 1:
            raise InvalidRecordError(f"tensor {name!r}: rows and cols must be >= 1")
        scale = None
        if dtype == DTYPE_PACKED:
            scale = cur.f32(where)
            if not np.isfinite(scale) or scale < 0.0:
                raise InvalidRecordError(f"tensor {name!r}: weight scale must be finite and >= 0")
        offset = cur.u64(where)
        length = cur.u64(where)
        if dtype == DTYPE_PACKED:
            expected = packed_size_bytes(rows, cols)
        else:
            expected = 4 * rows * cols
        if length != expected:
            raise InvalidRecordError(
                f"tensor {name!r}: payload length {length} does not match "
                f"{rows}x{cols} (expected {expected})"
            )
        if offset % ALIGNMENT != 0:
            raise InvalidRecordError(f"tensor {name!r}: payload offset {offset} not {ALIGNMENT}-byte aligned")
        records.append(TensorRecord(name, dtype, rows, cols, scale, offset, length))

    records_end = cur.pos
    for rec in records:
        if rec.offset < records_end:
            raise InvalidRecordError(
                f"tensor {rec.name!r}: payload offset {rec.offset} overlaps the header"
            )
        if rec.offset + rec.length > len(data):
            raise TruncatedFileError(
                f"tensor {rec.name!r}: payload of {rec.length} bytes at offset "
                f"{rec.offset} runs past end of file"
            )
    by_offset = sorted(records, key=lambda r: (r.offset, r.name))
    for a, b in zip(by_offset[:-1], by_offset[1:]):
        if a.offset + a.length > b.offset:
            raise OverlappingRecordsError(
                f"payloads of {a.name!r} and {b.name!r} overlap"
            )
    return config, records


def read_model(path) -> tuple[ModelConfig, dict]:
    """Parse and fully validate a container file.

    Returns (config, tensors) where packed tensors come back as
    PackedTernaryTensor (payloads pre-validated) and float tensors as
    2-D float32 arrays. Every failure raises a typed error; no partial
    result escapes.
    """
    data = Path(path).read_bytes()
    config, records = _parse(data)
    tensors: dict = {}
    for rec in records:
        payload = data[rec.offset : rec.offset + rec.length]
        if rec.dtype == DTYPE_PACKED:
            pt = PackedTernaryTensor(
                data=payload,
                rows=rec.rows,
                cols=rec.cols,
                weight_scale=rec.weight_scale,
                validated=False,
            )
            try:
                validate_payload(pt)
            except CorruptDataError as e:
                raise CorruptDataError(
                    f"tensor {rec.name!r}: {e}", byte_offset=e.byte_offset
                ) from e
            tensors[rec.name] = PackedTernaryTensor(
                data=payload,
                rows=rec.rows,
                cols=rec.cols,
                weight_scale=rec.weight_scale,
                validated=True,
            )
        else:
            arr = np.frombuffer(payload, dtype="<f4").reshape(rec.rows, rec.cols)
            tensors[rec.name] = arr.astype(np.float32)
    return config, tensors


def inspect_model(path) -> dict:
    """Structural summary of a container: header, config, tensor table.

    Validates as thoroughly as read_model (including packed payload
    codes) and reports per-tensor byte accounting.
    """
    data = Path(path).read_bytes()
    config, records = _parse(data)
    rows = []
    total_payload = 0
    total_fp32 = 0
    for rec in records:
        payload = data[rec.offset : rec.offset + rec.length]
        entry = {
            "name": rec.name,
            "dtype": "packed_ternary" if rec.dtype == DTYPE_PACKED else "real32",
            "rows": rec.rows,
            "cols": rec.cols,
            "payload_bytes": rec.length,
            "offset": rec.offset,
            "fp32_bytes": 4 * rec.rows * rec.cols,
        }
        if rec.dtype == DTYPE_PACKED:
            pt = PackedTernaryTensor(
                data=payload, rows=rec.rows, cols=rec.cols, weight_scale=rec.weight_scale
            )
            try:
                validate_payload(pt)
            except CorruptDataError as e:
                raise CorruptDataError(f"tensor {rec.name!r}: {e}", byte_offset=e.byte_offset) from e
            entry["weight_scale"] = rec.weight_scale
            entry["compression_vs_fp32"] = entry["fp32_bytes"] / rec.length
        rows.append(entry)
        total_payload += rec.length
        total_fp32 += entry["fp32_bytes"]
    return {
        "magic": MAGIC.decode("ascii"),
        "version": VERSION,
        "config": config.to_dict(),
        "tensor_count": len(records),
        "tensors": rows,
        "total_payload_bytes": total_payload,
        "total_fp32_bytes": total_fp32,
    }


@dataclass(frozen=True)
class ConversionEntry:
    name: str
    role: str
    rows: int
    cols: int
    payload_bytes: int
    gamma: float | None = None
    clipping_fraction: float | None = None

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "role": self.role,
            "rows": self.rows,
            "cols": self.cols,
            "payload_bytes": self.payload_bytes,
        }
        if self.role == "quantize":
            d["gamma"] = self.gamma
            d["clipping_fraction"] = self.clipping_fraction
        return d


@dataclass(frozen=True)
class ConversionReport:
    output_path: str
    entries: tuple

    def to_dict(self) -> dict:
        return {
            "output_path": self.output_path,
            "tensors": [e.to_dict() for e in self.entries],
        }


def _clipping_fraction(w: np.ndarray, gamma: float) -> float:
    """Fraction of entries whose rounded ratio falls outside the ternary range."""
    if gamma == 0.0:
        return 0.0
    rounded = round_half_away_from_zero(w.astype(np.float64) / gamma)
    return float(np.mean(np.abs(rounded) > 1.0))


def convert_checkpoint(manifest_path, output_path) -> ConversionReport:
    """Quantize a raw float checkpoint into a container file.

    The manifest is JSON: {"config": {...}, "tensors": [{"name",
    "file", "rows", "cols", "role"}]} with role "quantize" (ternarize
    and pack) or "keep-real" (store as float32). Tensor file paths are
    resolved relative to the manifest's directory and must hold exactly
    rows*cols little-endian float32 values.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"manifest is not valid JSON: {e}") from e
    if not isinstance(manifest, dict) or "config" not in manifest or "tensors" not in manifest:
        raise InvalidInputError('manifest must be an object with "config" and "tensors"')
    config = ModelConfig.from_dict(manifest["config"])
    specs = manifest["tensors"]
    if not isinstance(specs, list):
        raise InvalidInputError('"tensors" must be a list')

    tensors: dict = {}
    entries = []
    for spec in specs:
        if not isinstance(spec, dict):
            raise InvalidInputError("each tensor spec must be an object")
        missing = {"name", "file", "rows", "cols", "role"} - set(spec)
        if missing:
            raise InvalidInputError(f"tensor spec missing keys: {sorted(missing)}")
        name = spec["name"]
        role = spec["role"]
        rows, cols = int(spec["rows"]), int(spec["cols"])
        if rows < 1 or cols < 1:
            raise InvalidInputError(f"tensor {name!r}: rows and cols must be >= 1")
        if role not in ("quantize", "keep-real"):
            raise InvalidInputError(f"tensor {name!r}: unknown role {role!r}")
        if name in tensors:
            raise InvalidInputError(f"duplicate tensor name {name!r}")
        raw = (manifest_path.parent / spec["file"]).read_bytes()
        if len(raw) != 4 * rows * cols:
            raise InvalidInputError(
                f"tensor {name!r}: file holds {len(raw)} bytes, "
                f"{rows}x{cols} float32 requires {4 * rows * cols}"
            )
        w = np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(np.float32)
        if role == "quantize":
            tw = absmean_quantize_weights(w)
            pt = packmod.pack_ternary(tw)
            tensors[name] = pt
            entries.append(
                ConversionEntry(
                    name=name,
                    role=role,
                    rows=rows,
                    cols=cols,
                    payload_bytes=pt.payload_bytes,
                    gamma=tw.weight_scale,
                    clipping_fraction=_clipping_fraction(w, tw.weight_scale),
                )
            )
        else:
            tensors[name] = w
            entries.append(
                ConversionEntry(
                    name=name, role=role, rows=rows, cols=cols, payload_bytes=4 * rows * cols
                )
            )
    write_model(output_path, config, tensors)
    return ConversionReport(output_path=str(output_path), entries=tuple(entries))
