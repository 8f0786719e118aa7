"""Ternary-weight transformer: forward pass and autoregressive decoding.

Architecture: pre-norm residual blocks; every linear projection is a
ternary-weight, int8-activation layer with no bias; normalization is
gain-only rmsnorm, including one extra norm inside each sub-layer
applied just before its output projection; the FFN is non-gated
up -> squared ReLU -> down; rotary embeddings on query/key pairs;
grouped-query attention with a KV cache; full-precision float32
embedding table and untied output head.

Softmax, norms, residual adds, and the output head run in float32;
only linear-projection inputs are quantized.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CapacityError,
    InvalidInputError,
    InvalidTokenError,
    ShapeError,
)
from .kernel import dequantize_output, gemm_lut, gemm_packed, gemm_reference
from .pack import PackedTernaryTensor, pack_ternary, unpack_ternary
from .quant import absmax_quantize, absmean_quantize_weights

KERNEL_ROUTES = ("packed", "reference", "lut")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    n_layers may be 0 (a degenerate norm-plus-head model), which keeps
    arithmetic accounting and forward-pass edge cases testable.
    """

    n_layers: int
    d_model: int
    n_heads: int
    n_kv_heads: int
    d_ff: int
    vocab_size: int
    max_seq_len: int
    rope_theta: float = 10000.0
    norm_eps: float = 1e-5

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_kv_heads", "d_ff", "vocab_size", "max_seq_len"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise InvalidInputError(f"{name} must be a positive integer")
        if not isinstance(self.n_layers, int) or isinstance(self.n_layers, bool) or self.n_layers < 0:
            raise InvalidInputError("n_layers must be a non-negative integer")
        if self.d_model % self.n_heads != 0:
            raise InvalidInputError("d_model must be divisible by n_heads")
        if (self.d_model // self.n_heads) % 2 != 0:
            raise InvalidInputError("head_dim must be even for rotary pairs")
        if self.n_heads % self.n_kv_heads != 0:
            raise InvalidInputError("n_heads must be divisible by n_kv_heads")
        if not (float(self.rope_theta) > 0.0 and math.isfinite(self.rope_theta)):
            raise InvalidInputError("rope_theta must be positive and finite")
        if not (float(self.norm_eps) > 0.0 and math.isfinite(self.norm_eps)):
            raise InvalidInputError("norm_eps must be positive and finite")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def kv_dim(self) -> int:
        return self.head_dim * self.n_kv_heads

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_kv_heads": self.n_kv_heads,
            "d_ff": self.d_ff,
            "vocab_size": self.vocab_size,
            "max_seq_len": self.max_seq_len,
            "rope_theta": float(self.rope_theta),
            "norm_eps": float(self.norm_eps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        if not isinstance(d, dict):
            raise InvalidInputError("config must be a JSON object")
        required = ("n_layers", "d_model", "n_heads", "n_kv_heads", "d_ff", "vocab_size", "max_seq_len")
        kwargs = {}
        for key in required:
            if key not in d:
                raise InvalidInputError(f"config is missing required key {key!r}")
            v = d[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
                raise InvalidInputError(f"config key {key!r} must be an integer")
            kwargs[key] = int(v)
        for key in ("rope_theta", "norm_eps"):
            if key in d:
                v = d[key]
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise InvalidInputError(f"config key {key!r} must be a number")
                kwargs[key] = float(v)
        # Unknown keys are ignored for forward compatibility.
        return cls(**kwargs)


@dataclass(eq=False)
class LayerWeights:
    """One transformer block: packed projections and norm gains."""

    wq: PackedTernaryTensor
    wk: PackedTernaryTensor
    wv: PackedTernaryTensor
    wo: PackedTernaryTensor
    w_up: PackedTernaryTensor
    w_down: PackedTernaryTensor
    attn_norm: np.ndarray
    ffn_norm: np.ndarray
    attn_subln: np.ndarray
    ffn_subln: np.ndarray


# Canonical per-layer tensor name order for serialization.
LAYER_TENSOR_ORDER = (
    "attn_norm",
    "wq",
    "wk",
    "wv",
    "attn_subln",
    "wo",
    "ffn_norm",
    "w_up",
    "ffn_subln",
    "w_down",
)


@dataclass(eq=False)
class Model:
    """Loaded weights plus kernel routing settings.

    Weights are immutable after construction and shareable across
    threads; kernel and n_workers only steer the compute route.
    """

    config: ModelConfig
    embedding: np.ndarray
    layers: list[LayerWeights]
    final_norm: np.ndarray
    lm_head: np.ndarray
    kernel: str = "packed"
    n_workers: int = 1

    def named_parameters(self):
        """Yield (name, tensor) for every parameter in canonical order."""
        yield "embedding", self.embedding
        for i, layer in enumerate(self.layers):
            for part in LAYER_TENSOR_ORDER:
                yield f"layers.{i}.{part}", getattr(layer, part)
        yield "final_norm", self.final_norm
        yield "lm_head", self.lm_head


@dataclass(eq=False)
class KVCache:
    """Per-layer key/value storage for incremental decoding."""

    keys: np.ndarray
    values: np.ndarray
    length: int = 0

    @classmethod
    def for_config(cls, config: ModelConfig) -> "KVCache":
        shape = (config.n_layers, config.n_kv_heads, config.max_seq_len, config.head_dim)
        return cls(keys=np.zeros(shape, dtype=np.float32), values=np.zeros(shape, dtype=np.float32))

    @property
    def max_seq_len(self) -> int:
        return self.keys.shape[2]


def rmsnorm(x, gain, eps: float) -> np.ndarray:
    """Gain-only root-mean-square normalization over the last axis."""
    x = np.asarray(x, dtype=np.float32)
    gain = np.asarray(gain, dtype=np.float32)
    if gain.ndim != 1 or gain.shape[0] != x.shape[-1]:
        raise ShapeError("gain length must match the last axis of x")
    ms = np.mean(np.square(x), axis=-1, keepdims=True, dtype=np.float32)
    return gain * (x / np.sqrt(ms + np.float32(eps)))


def relu_squared(x) -> np.ndarray:
    """max(x, 0) squared, elementwise."""
    x = np.asarray(x, dtype=np.float32)
    r = np.maximum(x, np.float32(0.0))
    return r * r


def _rope_tables(head_dim: int, positions: np.ndarray, theta: float):
    """cos/sin rotation tables, float32, shape (len(positions), head_dim/2).

    Pair j rotates by angle position * theta**(-2j/head_dim); angles are
    evaluated in float64 before the trig call.
    """
    half = head_dim // 2
    j = np.arange(half, dtype=np.float64)
    inv_freq = float(theta) ** (-2.0 * j / head_dim)
    angles = positions.astype(np.float64)[:, None] * inv_freq[None, :]
    return np.cos(angles).astype(np.float32), np.sin(angles).astype(np.float32)


def _rope_rotate(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # x: (T, n_heads, head_dim); cos/sin: (T, head_dim/2)
    even = x[..., 0::2]
    odd = x[..., 1::2]
    c = cos[:, None, :]
    s = sin[:, None, :]
    out = np.empty_like(x)
    out[..., 0::2] = even * c - odd * s
    out[..., 1::2] = even * s + odd * c
    return out


def rope_apply(q, k, position: int, theta: float = 10000.0):
    """Rotate one query and one key vector to a given position."""
    q = np.asarray(q, dtype=np.float32)
    k = np.asarray(k, dtype=np.float32)
    if q.ndim != 1 or k.ndim != 1 or q.shape != k.shape:
        raise ShapeError("q and k must be 1-D vectors of equal length")
    if q.shape[0] % 2 != 0:
        raise ShapeError("rotary vectors need an even dimension")
    if position < 0:
        raise InvalidInputError("position must be non-negative")
    cos, sin = _rope_tables(q.shape[0], np.array([position]), theta)
    rq = _rope_rotate(q[None, None, :], cos, sin)[0, 0]
    rk = _rope_rotate(k[None, None, :], cos, sin)[0, 0]
    return rq, rk


def bitlinear_forward(x, pt: PackedTernaryTensor, kernel: str = "packed", n_workers: int = 1) -> np.ndarray:
    """Quantized linear layer: int8 rows x ternary weights, no bias.

    Per token: absmax int8 quantization, exact integer matmul against
    the packed ternary matrix, then the fixed dequantization epilogue.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2:
        raise ShapeError("bitlinear input must be (tokens, features)")
    if x.shape[1] != pt.cols:
        raise ShapeError(f"input features {x.shape[1]} != weight cols {pt.cols}")
    qa = absmax_quantize(x)
    if kernel == "packed":
        acc = gemm_packed(pt, qa, n_workers=n_workers)
    elif kernel == "lut":
        acc = gemm_lut(pt, qa, n_workers=n_workers)
    elif kernel == "reference":
        acc = gemm_reference(unpack_ternary(pt), qa)
    else:
        raise InvalidInputError(f"unknown kernel route {kernel!r}")
    return dequantize_output(acc, pt.weight_scale, qa.act_scales)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    # float32 with max subtraction; masked entries arrive as -inf and
    # contribute exact zeros.
    m = np.max(scores, axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def attention_forward(
    x,
    layer: LayerWeights,
    cache: KVCache,
    start_pos: int,
    *,
    layer_idx: int,
    config: ModelConfig,
    kernel: str = "packed",
    n_workers: int = 1,
) -> np.ndarray:
    """Causal grouped-query attention for tokens at start_pos onward.

    New keys/values are written into the cache, then each query attends
    over cache positions 0..start_pos+T-1 with a causal mask. The
    concatenated head output is normalized (the in-sublayer norm) before
    the output projection.
    """
    x = np.asarray(x, dtype=np.float32)
    t = x.shape[0]
    if start_pos < 0 or start_pos + t > cache.max_seq_len:
        raise CapacityError(
            f"positions {start_pos}..{start_pos + t} exceed capacity {cache.max_seq_len}"
        )
    cfg = config
    h = rmsnorm(x, layer.attn_norm, cfg.norm_eps)
    q = bitlinear_forward(h, layer.wq, kernel, n_workers)
    k = bitlinear_forward(h, layer.wk, kernel, n_workers)
    v = bitlinear_forward(h, layer.wv, kernel, n_workers)

    q = q.reshape(t, cfg.n_heads, cfg.head_dim)
    k = k.reshape(t, cfg.n_kv_heads, cfg.head_dim)
    v = v.reshape(t, cfg.n_kv_heads, cfg.head_dim)

    positions = np.arange(start_pos, start_pos + t)
    cos, sin = _rope_tables(cfg.head_dim, positions, cfg.rope_theta)
    q = _rope_rotate(q, cos, sin)
    k = _rope_rotate(k, cos, sin)

    cache.keys[layer_idx, :, start_pos : start_pos + t] = k.transpose(1, 0, 2)
    cache.values[layer_idx, :, start_pos : start_pos + t] = v.transpose(1, 0, 2)
    window = start_pos + t
    keys = cache.keys[layer_idx, :, :window]
    values = cache.values[layer_idx, :, :window]

    group = cfg.n_heads // cfg.n_kv_heads
    qg = q.reshape(t, cfg.n_kv_heads, group, cfg.head_dim)
    scores = np.einsum("tkgh,kjh->tkgj", qg, keys) / np.float32(math.sqrt(cfg.head_dim))
    allowed = np.arange(window)[None, :] <= (start_pos + np.arange(t))[:, None]
    scores = np.where(allowed[:, None, None, :], scores, np.float32(-np.inf))
    probs = _softmax_rows(scores)
    ctx = np.einsum("tkgj,kjh->tkgh", probs, values).reshape(t, cfg.d_model)

    ctx = rmsnorm(ctx, layer.attn_subln, cfg.norm_eps)
    return bitlinear_forward(ctx, layer.wo, kernel, n_workers)


def ffn_forward(
    x,
    layer: LayerWeights,
    *,
    config: ModelConfig,
    kernel: str = "packed",
    n_workers: int = 1,
) -> np.ndarray:
    """Non-gated FFN: up projection, squared ReLU, in-sublayer norm, down."""
    h = rmsnorm(np.asarray(x, dtype=np.float32), layer.ffn_norm, config.norm_eps)
    u = relu_squared(bitlinear_forward(h, layer.w_up, kernel, n_workers))
    u = rmsnorm(u, layer.ffn_subln, config.norm_eps)
    return bitlinear_forward(u, layer.w_down, kernel, n_workers)


def forward_pass(tokens, model: Model, cache: KVCache | None = None, start_pos: int = 0) -> np.ndarray:
    """Run the full stack; returns float32 logits for every input position."""
    cfg = model.config
    ids = np.asarray(list(tokens), dtype=np.int64)
    if ids.ndim != 1:
        raise InvalidInputError("tokens must be a flat id sequence")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        bad = int(ids[(ids < 0) | (ids >= cfg.vocab_size)][0])
        raise InvalidTokenError(f"token id {bad} outside vocabulary of {cfg.vocab_size}")
    if cache is None:
        cache = KVCache.for_config(cfg)
    if start_pos < 0 or start_pos > cache.length:
        raise InvalidInputError(f"start_pos {start_pos} is ahead of cache length {cache.length}")
    if start_pos + ids.size > cfg.max_seq_len:
        raise CapacityError(
            f"sequence end {start_pos + ids.size} exceeds max_seq_len {cfg.max_seq_len}"
        )
    x = model.embedding[ids]
    for layer_idx, layer in enumerate(model.layers):
        x = x + attention_forward(
            x,
            layer,
            cache,
            start_pos,
            layer_idx=layer_idx,
            config=cfg,
            kernel=model.kernel,
            n_workers=model.n_workers,
        )
        x = x + ffn_forward(
            x, layer, config=cfg, kernel=model.kernel, n_workers=model.n_workers
        )
    x = rmsnorm(x, model.final_norm, cfg.norm_eps)
    logits = x @ model.lm_head.T
    cache.length = start_pos + ids.size
    return logits


@dataclass(frozen=True)
class GenerationParams:
    """Decoding controls. temperature 0 means greedy argmax."""

    max_new_tokens: int = 128
    temperature: float = 0.0
    top_k: int | None = None
    seed: int = 0
    stop_ids: frozenset = frozenset()

    def __post_init__(self):
        if self.max_new_tokens < 0:
            raise InvalidInputError("max_new_tokens must be >= 0")
        if self.temperature < 0:
            raise InvalidInputError("temperature must be >= 0")
        if self.top_k is not None and self.top_k < 1:
            raise InvalidInputError("top_k must be >= 1 when given")
        object.__setattr__(self, "stop_ids", frozenset(self.stop_ids))


@dataclass
class GenerationResult:
    """Generated ids plus the wall-clock duration of each decode step."""

    ids: list
    step_times_s: list


def sample(logits, params: GenerationParams, rng: np.random.Generator) -> int:
    """Draw one token id from logits under the given controls.

    Greedy (temperature 0) takes the lowest-index argmax. Otherwise the
    distribution is softmax(logits / temperature), optionally truncated
    to the top_k highest logits (stable tie-break by index) and
    renormalized, then sampled with the caller's generator.
    """
    logits = np.asarray(logits, dtype=np.float32).ravel()
    if params.temperature == 0:
        return int(np.argmax(logits))
    z = logits.astype(np.float64) / float(params.temperature)
    if params.top_k is not None and params.top_k < z.shape[0]:
        keep = np.argsort(-z, kind="stable")[: params.top_k]
        truncated = np.full_like(z, -np.inf)
        truncated[keep] = z[keep]
        z = truncated
    z = z - np.max(z)
    p = np.exp(z)
    p = p / p.sum()
    draw = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), draw, side="right"))
    return min(idx, logits.shape[0] - 1)


def generate(
    prompt_ids,
    model: Model,
    params: GenerationParams,
    cache: KVCache | None = None,
) -> GenerationResult:
    """Prefill the prompt, then decode step by step.

    Every decode step runs exactly one single-token forward plus one
    sampling draw, and its wall-clock duration is recorded; the prompt's
    last token is forwarded inside the first step so all steps cost the
    same. Stops after max_new_tokens or on a stop id (which is included
    in the output).
    """
    cfg = model.config
    prompt = [int(t) for t in prompt_ids]
    if params.max_new_tokens == 0:
        return GenerationResult(ids=[], step_times_s=[])
    if not prompt:
        raise InvalidInputError("prompt must contain at least one token")
    if len(prompt) + params.max_new_tokens - 1 > cfg.max_seq_len:
        raise CapacityError(
            f"prompt of {len(prompt)} tokens leaves no room for "
            f"{params.max_new_tokens} new tokens within {cfg.max_seq_len}"
        )
    if cache is None:
        cache = KVCache.for_config(cfg)
    rng = np.random.default_rng(params.seed)
    pos = 0
    if len(prompt) > 1:
        forward_pass(prompt[:-1], model, cache, 0)
        pos = len(prompt) - 1
    last = prompt[-1]
    out_ids: list[int] = []
    times: list[float] = []
    for _ in range(params.max_new_tokens):
        t0 = time.perf_counter()
        logits = forward_pass([last], model, cache, pos)[0]
        pos += 1
        tok = sample(logits, params, rng)
        times.append(time.perf_counter() - t0)
        out_ids.append(tok)
        last = tok
        if tok in params.stop_ids:
            break
    return GenerationResult(ids=out_ids, step_times_s=times)


def _quantized_linear(rng: np.random.Generator, rows: int, cols: int) -> PackedTernaryTensor:
    w = rng.standard_normal((rows, cols), dtype=np.float32) * np.float32(0.05)
    return pack_ternary(absmean_quantize_weights(w))


def random_model(
    config: ModelConfig,
    seed: int = 0,
    kernel: str = "packed",
    n_workers: int = 1,
) -> Model:
    """Build a model with seeded random weights (tests, demos, benchmarks)."""
    cfg = config
    rng = np.random.default_rng(seed)

    def gain(n: int) -> np.ndarray:
        return (1.0 + 0.1 * rng.standard_normal(n)).astype(np.float32)

    layers = []
    for _ in range(cfg.n_layers):
        layers.append(
            LayerWeights(
                wq=_quantized_linear(rng, cfg.d_model, cfg.d_model),
                wk=_quantized_linear(rng, cfg.kv_dim, cfg.d_model),
                wv=_quantized_linear(rng, cfg.kv_dim, cfg.d_model),
                wo=_quantized_linear(rng, cfg.d_model, cfg.d_model),
                w_up=_quantized_linear(rng, cfg.d_ff, cfg.d_model),
                w_down=_quantized_linear(rng, cfg.d_model, cfg.d_ff),
                attn_norm=gain(cfg.d_model),
                ffn_norm=gain(cfg.d_model),
                attn_subln=gain(cfg.d_model),
                ffn_subln=gain(cfg.d_ff),
            )
        )
    embedding = (rng.standard_normal((cfg.vocab_size, cfg.d_model)) * 0.02).astype(np.float32)
    lm_head = (rng.standard_normal((cfg.vocab_size, cfg.d_model)) * 0.02).astype(np.float32)
    return Model(
        config=cfg,
        embedding=embedding,
        layers=layers,
        final_norm=gain(cfg.d_model),
        lm_head=lm_head,
        kernel=kernel,
        n_workers=n_workers,
    )


_LINEAR_SHAPES = {
    "wq": ("d_model", "d_model"),
    "wk": ("kv_dim", "d_model"),
    "wv": ("kv_dim", "d_model"),
    "wo": ("d_model", "d_model"),
    "w_up": ("d_ff", "d_model"),
    "w_down": ("d_model", "d_ff"),
}
_GAIN_DIMS = {
    "attn_norm": "d_model",
    "ffn_norm": "d_model",
    "attn_subln": "d_model",
    "ffn_subln": "d_ff",
}


def _dim(config: ModelConfig, name: str) -> int:
    return getattr(config, name)


def _expect_packed(tensors: dict, name: str, rows: int, cols: int) -> PackedTernaryTensor:
    t = tensors.get(name)
    if not isinstance(t, PackedTernaryTensor):
        raise InvalidInputError(f"missing packed tensor {name!r}")
    if (t.rows, t.cols) != (rows, cols):
        raise ShapeError(f"tensor {name!r} is {t.rows}x{t.cols}, expected {rows}x{cols}")
    return t


def _expect_gain(tensors: dict, name: str, dim: int) -> np.ndarray:
    t = tensors.get(name)
    if not isinstance(t, np.ndarray):
        raise InvalidInputError(f"missing real tensor {name!r}")
    flat = np.asarray(t, dtype=np.float32).reshape(-1)
    if flat.shape[0] != dim:
        raise ShapeError(f"tensor {name!r} has {flat.shape[0]} entries, expected {dim}")
    if not np.all(np.isfinite(flat)):
        raise InvalidInputError(f"tensor {name!r} contains non-finite entries")
    return flat


def _expect_real_matrix(tensors: dict, name: str, rows: int, cols: int) -> np.ndarray:
    t = tensors.get(name)
    if not isinstance(t, np.ndarray):
        raise InvalidInputError(f"missing real tensor {name!r}")
    arr = np.asarray(t, dtype=np.float32)
    if arr.shape != (rows, cols):
        raise ShapeError(f"tensor {name!r} is {arr.shape}, expected ({rows}, {cols})")
    return arr


def model_tensor_names(config: ModelConfig) -> list[str]:
    """Canonical tensor name order for serialization."""
    names = ["embedding"]
    for i in range(config.n_layers):
        names.extend(f"layers.{i}.{part}" for part in LAYER_TENSOR_ORDER)
    names.extend(["final_norm", "lm_head"])
    return names


def model_from_tensors(
    config: ModelConfig,
    tensors: dict,
    kernel: str = "packed",
    n_workers: int = 1,
) -> Model:
    """Assemble a Model from a named tensor mapping, validating shapes."""
    expected = set(model_tensor_names(config))
    unknown = set(tensors) - expected
    if unknown:
        raise InvalidInputError(f"unexpected tensor names: {sorted(unknown)}")
    layers = []
    for i in range(config.n_layers):
        parts = {}
        for part, (rname, cname) in _LINEAR_SHAPES.items():
            parts[part] = _expect_packed(
                tensors, f"layers.{i}.{part}", _dim(config, rname), _dim(config, cname)
            )
        for part, dname in _GAIN_DIMS.items():
            parts[part] = _expect_gain(tensors, f"layers.{i}.{part}", _dim(config, dname))
        layers.append(LayerWeights(**parts))
    return Model(
        config=config,
        embedding=_expect_real_matrix(tensors, "embedding", config.vocab_size, config.d_model),
        layers=layers,
        final_norm=_expect_gain(tensors, "final_norm", config.d_model),
        lm_head=_expect_real_matrix(tensors, "lm_head", config.vocab_size, config.d_model),
        kernel=kernel,
        n_workers=n_workers,
    )


def model_to_tensors(model: Model) -> dict:
    """Flatten a Model back into its canonical named tensor mapping.

    Norm gains are emitted as 1 x d matrices so every real tensor is 2-D.
    """
    tensors: dict = {"embedding": model.embedding}
    for i, layer in enumerate(model.layers):
        for part in LAYER_TENSOR_ORDER:
            t = getattr(layer, part)
            if isinstance(t, np.ndarray):
                t = t.reshape(1, -1)
            tensors[f"layers.{i}.{part}"] = t
    tensors["final_norm"] = model.final_norm.reshape(1, -1)
    tensors["lm_head"] = model.lm_head
    return tensors
