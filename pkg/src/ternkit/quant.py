"""Quantization primitives.

Weights are quantized to ternary values {-1, 0, +1} with a single positive
per-tensor scale, activations to int8 with one scale per row (per token).
Both schemes round half-away-from-zero, which is not numpy's default
rounding mode, so rounding is implemented explicitly here.

All scale arithmetic is done in float32 at the boundaries; the mean used
for the weight scale is accumulated in float64 so results do not depend
on summation order.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

ACT_QMAX = 127


def round_half_away_from_zero(x: np.ndarray) -> np.ndarray:
    """Round to the nearest integer, ties going away from zero.

    np.round rounds ties to even (0.5 -> 0.0); this rounds 0.5 -> 1.0
    and -0.5 -> -1.0. Returns a float array of the input dtype.
    """
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True, eq=False)
class TernaryWeights:
    """A ternary weight matrix and its scalar scale.

    values is int8 with entries in {-1, 0, +1}; weight_scale is the
    float32-rounded mean absolute value of the source matrix. A zero
    scale is only valid for an all-zero matrix.
    """

    values: np.ndarray
    weight_scale: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise InvalidInputError("ternary weights must be a 2-D matrix")
        if v.dtype != np.int8:
            v = v.astype(np.int8)
        if v.size == 0:
            raise InvalidInputError("ternary weights must be non-empty")
        if np.any(np.abs(v.astype(np.int32)) > 1):
            raise InvalidInputError("ternary weight entries must be in {-1, 0, +1}")
        s = float(self.weight_scale)
        if not np.isfinite(s) or s < 0.0:
            raise InvalidInputError("weight_scale must be finite and >= 0")
        if s == 0.0 and np.any(v != 0):
            raise InvalidInputError("weight_scale 0 requires an all-zero matrix")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weight_scale", s)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class QuantizedActivations:
    """Int8 activation rows with one float32 scale per row.

    values[t, k] = clamp(round(x[t, k] * act_scales[t]), -127, 127);
    -128 never occurs. act_scales[t] is 127 / max|row| for a nonzero
    row and exactly 1.0 for an all-zero row.
    """

    values: np.ndarray
    act_scales: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int8)
        s = np.asarray(self.act_scales, dtype=np.float32)
        if v.ndim != 2 or s.ndim != 1 or s.shape[0] != v.shape[0]:
            raise InvalidInputError("activation values (T, K) need act_scales of shape (T,)")
        if np.any(v == -128):
            raise InvalidInputError("activation value -128 is outside the symmetric range")
        if not np.all(np.isfinite(s)) or np.any(s <= 0.0):
            raise InvalidInputError("act_scales must be finite and > 0")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "act_scales", s)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _as_finite_f32(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must contain only finite values")
    return arr


def absmean_quantize_weights(w) -> TernaryWeights:
    """Quantize a real matrix to ternary values with an absmean scale.

    The scale is the mean absolute entry (float64 accumulation, stored
    as float32). Each entry is divided by the scale, rounded half away
    from zero, then clamped to [-1, 1]. An all-zero matrix gets scale 0
    and all-zero output.
    """
    w = _as_finite_f32(w, "weights")
    if w.ndim != 2 or w.size == 0:
        raise InvalidInputError("weights must be a non-empty 2-D matrix")
    gamma = np.float32(np.mean(np.abs(w), dtype=np.float64))
    if gamma == 0.0:
        return TernaryWeights(np.zeros(w.shape, dtype=np.int8), 0.0)
    # Ratios in float64: float32 division can overflow to inf when the
    # scale underflows relative to the largest entry.
    ratios = w.astype(np.float64) / float(gamma)
    q = np.clip(round_half_away_from_zero(ratios), -1.0, 1.0).astype(np.int8)
    return TernaryWeights(q, float(gamma))


def absmax_quantize(x) -> QuantizedActivations:
    """Quantize activation rows to int8 with per-row absmax scales.

    For each row, scale = 127 / max|row| (float32 division) and entries
    are rounded half away from zero then clamped to [-127, 127], so the
    int8 value -128 is never produced. An all-zero row maps to zeros
    with scale exactly 1.0.
    """
    x = _as_finite_f32(x, "activations")
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] == 0:
        raise InvalidInputError("activations must be non-empty rows")
    maxabs = np.max(np.abs(x), axis=1)
    safe = np.where(maxabs == 0.0, np.float32(1.0), maxabs)
    scales = np.where(maxabs == 0.0, np.float32(1.0), np.float32(ACT_QMAX) / safe)
    scales = scales.astype(np.float32)
    scaled = x.astype(np.float64) * scales.astype(np.float64)[:, None]
    q = np.clip(round_half_away_from_zero(scaled), -ACT_QMAX, ACT_QMAX).astype(np.int8)
    return QuantizedActivations(q, scales)


def absmax_quantize_row(x) -> tuple[np.ndarray, float]:
    """Quantize a single activation vector; returns (int8 values, scale)."""
    qa = absmax_quantize(np.asarray(x, dtype=np.float32).reshape(1, -1))
    return qa.values[0], float(qa.act_scales[0])


def dequantize_weights(tw: TernaryWeights) -> np.ndarray:
    """Reconstruct the float32 approximation scale * values."""
    return tw.values.astype(np.float32) * np.float32(tw.weight_scale)


def dequantize_activations(qa: QuantizedActivations) -> np.ndarray:
    """Reconstruct float32 activations values / act_scales, row-wise."""
    return qa.values.astype(np.float32) / qa.act_scales[:, None]
