"""Integer matmul kernels over packed ternary weights and int8 activations.

Three routes compute the same T x N accumulator exactly:

  gemm_reference  unpacked ternary matrix, plain int32 matmul (oracle)
  gemm_packed     tile-wise unpack of the 2-bit payload, int32 matmul
  gemm_lut        per-token lookup tables indexed by whole weight bytes

All accumulation is 32-bit integer arithmetic, so results are
bit-identical across routes, tile sizes, and worker counts
(|acc| <= 127 * K keeps sums far from overflow for any K < 2**24).
Multithreading partitions output rows; each output cell is written by
exactly one worker. The dequantization epilogue has a fixed operation
order so every route also produces bit-identical float32 outputs.
"""

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError
from .pack import _BYTE_TO_VALUES, PackedTernaryTensor, _payload_matrix, validate_payload
from .quant import QuantizedActivations, TernaryWeights

DEFAULT_TILE_COLS = 64

# Work smaller than this (output cells * depth) is not worth fanning
# out; running it inline keeps tiny decode steps fast. Results do not
# depend on this threshold, only speed does.
_PARALLEL_MIN_OPS = 1 << 18

_EXECUTORS: dict[int, ThreadPoolExecutor] = {}
_EXECUTORS_LOCK = threading.Lock()

# Byte -> half-byte split used by the LUT route.
_LO_NIBBLE = np.arange(256, dtype=np.intp) & 0xF
_HI_NIBBLE = np.arange(256, dtype=np.intp) >> 4


@dataclass(frozen=True, eq=False)
class AccumulatorMatrix:
    """T x N int32 dot products of quantized activations with ternary rows."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.dtype != np.int32:
            raise InvalidInputError("accumulator must be a 2-D int32 matrix")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _executor(n_workers: int) -> ThreadPoolExecutor:
    with _EXECUTORS_LOCK:
        pool = _EXECUTORS.get(n_workers)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=n_workers)
            _EXECUTORS[n_workers] = pool
        return pool


def _row_partition(n_rows: int, n_workers: int) -> list[tuple[int, int]]:
    n_chunks = min(n_workers, n_rows)
    bounds = np.linspace(0, n_rows, n_chunks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _run_partitioned(n_rows: int, n_workers: int, total_ops: int, work) -> None:
    """Apply work(row_start, row_stop) over a disjoint row partition."""
    if n_workers <= 1 or n_rows < 2 or total_ops < _PARALLEL_MIN_OPS:
        work(0, n_rows)
        return
    parts = _row_partition(n_rows, n_workers)
    futures = [_executor(n_workers).submit(work, a, b) for a, b in parts]
    for f in futures:
        f.result()


def gemm_reference(tw: TernaryWeights, qa: QuantizedActivations) -> AccumulatorMatrix:
    """Oracle kernel: plain int32 matmul of activations with ternary rows."""
    n, k = tw.values.shape
    t, ka = qa.values.shape
    if k != ka:
        raise ShapeError(f"weight cols {k} != activation cols {ka}")
    acc = qa.values.astype(np.int32) @ tw.values.astype(np.int32).T
    return AccumulatorMatrix(acc)


def _check_packed_shapes(pt: PackedTernaryTensor, qa: QuantizedActivations) -> None:
    if pt.cols != qa.values.shape[1]:
        raise ShapeError(f"weight cols {pt.cols} != activation cols {qa.values.shape[1]}")
    if not pt.validated:
        validate_payload(pt)


def gemm_packed(
    pt: PackedTernaryTensor,
    qa: QuantizedActivations,
    n_workers: int = 1,
    tile_cols: int = DEFAULT_TILE_COLS,
) -> AccumulatorMatrix:
    """Unpack the payload in column tiles and accumulate in int32.

    Bit-identical to gemm_reference on the unpacked matrix for every
    tile size and worker count.
    """
    if tile_cols < 4 or tile_cols % 4 != 0:
        raise InvalidInputError("tile_cols must be a positive multiple of 4")
    _check_packed_shapes(pt, qa)
    rows, cols = pt.rows, pt.cols
    t = qa.values.shape[0]
    payload = _payload_matrix(pt)
    acts = qa.values.astype(np.int32)
    acc = np.zeros((t, rows), dtype=np.int32)

    def work(r0: int, r1: int) -> None:
        block = payload[r0:r1]
        for c0 in range(0, cols, tile_cols):
            c1 = min(c0 + tile_cols, cols)
            decoded = _BYTE_TO_VALUES[block[:, c0 // 4 : (c1 + 3) // 4]]
            w_tile = decoded.reshape(r1 - r0, -1)[:, : c1 - c0].astype(np.int32)
            acc[:, r0:r1] += acts[:, c0:c1] @ w_tile.T

    _run_partitioned(rows, n_workers, t * rows * cols, work)
    return AccumulatorMatrix(acc)


def _build_byte_tables(qa: QuantizedActivations, n_groups: int) -> np.ndarray:
    """Per-token tables mapping a weight byte to its 4-column partial sum.

    Returns int32 [T, 256, n_groups]. Built from two 16-entry half-byte
    tables, then composed, which costs fewer integer ops than evaluating
    all 256 codes directly.
    """
    t, k = qa.values.shape
    padded = np.zeros((t, n_groups * 4), dtype=np.int32)
    padded[:, :k] = qa.values
    fields = padded.reshape(t, n_groups, 4)

    codes16 = np.arange(16, dtype=np.int32)
    w_even = (codes16 & 3) - 1
    w_odd = (codes16 >> 2) - 1
    lo = (
        w_even[None, :, None] * fields[:, None, :, 0]
        + w_odd[None, :, None] * fields[:, None, :, 1]
    )
    hi = (
        w_even[None, :, None] * fields[:, None, :, 2]
        + w_odd[None, :, None] * fields[:, None, :, 3]
    )
    return lo[:, _LO_NIBBLE, :] + hi[:, _HI_NIBBLE, :]


def gemm_lut(
    pt: PackedTernaryTensor,
    qa: QuantizedActivations,
    n_workers: int = 1,
) -> AccumulatorMatrix:
    """Byte-indexed lookup kernel.

    For each token, a 256-entry table maps every feasible weight byte to
    the partial sum of its 4-column group; the matmul then reduces to
    one table gather per weight byte plus int32 additions.
    """
    _check_packed_shapes(pt, qa)
    rows = pt.rows
    t = qa.values.shape[0]
    payload = _payload_matrix(pt)
    n_groups = pt.row_bytes
    tables = _build_byte_tables(qa, n_groups)
    group_idx = np.arange(n_groups, dtype=np.intp)
    acc = np.empty((t, rows), dtype=np.int32)

    def work(r0: int, r1: int) -> None:
        gathered = tables[:, payload[r0:r1].astype(np.intp), group_idx]
        acc[:, r0:r1] = gathered.sum(axis=2, dtype=np.int32)

    _run_partitioned(rows, n_workers, t * rows * n_groups * 4, work)
    return AccumulatorMatrix(acc)


def dequantize_output(acc, weight_scale: float, act_scales) -> np.ndarray:
    """Scale integer accumulators back to float32 activations.

    Normative order: factor[t] = float32(weight_scale) / act_scales[t]
    computed once per token in float32, then y[t] = float32(acc[t]) *
    factor[t]. Every kernel route shares this epilogue, so float outputs
    are bit-identical across routes.
    """
    values = acc.values if isinstance(acc, AccumulatorMatrix) else np.asarray(acc)
    scales = np.asarray(act_scales, dtype=np.float32)
    if scales.ndim != 1 or scales.shape[0] != values.shape[0]:
        raise ShapeError("act_scales length must match the accumulator token count")
    factors = np.float32(weight_scale) / scales
    return values.astype(np.float32) * factors[:, None]
