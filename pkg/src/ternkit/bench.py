"""Decode-latency measurement and the arithmetic-energy estimator.

Latency: greedy-decode a fixed number of tokens, timing every decode
step with a monotonic clock after one excluded warmup step, and report
order statistics over the raw samples (which the report retains).

Energy: count multiply-accumulates of the quantized linear projections
only (attention score/value matmuls, softmax, norms, embedding and
output head are excluded so the fp16 and ternary modes compare
like-for-like), then price each MAC from a table of per-operation
picojoule costs. In fp16 mode a MAC costs one fp16 add plus one fp16
multiply; with ternary weights each MAC reduces to a sign-select plus
int8 add and the multiply disappears.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .model import GenerationParams, Model, ModelConfig, generate

DEFAULT_ENERGY_TOKENS = 512
DEFAULT_BENCH_TOKENS = 128
DEFAULT_BENCH_WORKERS = 8


@dataclass(frozen=True)
class EnergyTable:
    """Per-operation energy costs in picojoules (7nm process defaults)."""

    fp16_add_pj: float = 0.16
    fp16_mul_pj: float = 0.34
    int8_add_pj: float = 0.007
    int8_mul_pj: float = 0.07

    def __post_init__(self):
        for name in ("fp16_add_pj", "fp16_mul_pj", "int8_add_pj", "int8_mul_pj"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "fp16_add_pj": self.fp16_add_pj,
            "fp16_mul_pj": self.fp16_mul_pj,
            "int8_add_pj": self.int8_add_pj,
            "int8_mul_pj": self.int8_mul_pj,
        }


DEFAULT_ENERGY_TABLE = EnergyTable()

ENERGY_MODES = ("fp16", "w158a8")


def count_weight_macs(config: ModelConfig, n_tokens: int) -> int:
    """Multiply-accumulates of the quantized projections for n_tokens.

    Per token per layer: d*(d + 2*kv_dim + d) for the four attention
    projections plus 2*d*d_ff for the FFN pair. Exact integer result.
    """
    if n_tokens < 0:
        raise InvalidInputError("n_tokens must be >= 0")
    d = config.d_model
    per_layer = d * (d + 2 * config.kv_dim + d) + 2 * d * config.d_ff
    return n_tokens * config.n_layers * per_layer


def estimate_energy(
    config: ModelConfig,
    n_tokens: int = DEFAULT_ENERGY_TOKENS,
    table: EnergyTable = DEFAULT_ENERGY_TABLE,
    mode: str = "w158a8",
) -> float:
    """Estimated matmul energy in joules for decoding n_tokens.

    fp16 mode prices every MAC at one add plus one multiply; w158a8
    prices it at a single int8 add. Linear in n_tokens and in each
    table entry.
    """
    if mode not in ENERGY_MODES:
        raise InvalidInputError(f"mode must be one of {ENERGY_MODES}")
    macs = count_weight_macs(config, n_tokens)
    if mode == "fp16":
        per_mac_pj = table.fp16_add_pj + table.fp16_mul_pj
    else:
        per_mac_pj = table.int8_add_pj
    return macs * per_mac_pj * 1e-12


@dataclass
class BenchReport:
    """Latency report over one timed decode run.

    samples_ms holds the raw per-step latencies the statistics are
    computed from; token_ids holds every generated id, warmup token
    first, so two runs can be checked for identical outputs.
    """

    tokens: int
    mean_ms: float
    median_ms: float
    p95_ms: float
    workers: int
    total_s: float
    samples_ms: list = field(default_factory=list)
    token_ids: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
            "workers": self.workers,
            "total_s": self.total_s,
            "samples_ms": list(self.samples_ms),
            "token_ids": [int(t) for t in self.token_ids],
        }

    def text_table(self) -> str:
        rows = [
            ("tokens", str(self.tokens)),
            ("workers", str(self.workers)),
            ("mean", f"{self.mean_ms:.3f} ms"),
            ("median", f"{self.median_ms:.3f} ms"),
            ("p95", f"{self.p95_ms:.3f} ms"),
            ("total", f"{self.total_s:.3f} s"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def latency_stats(samples_ms) -> tuple[float, float, float]:
    """(mean, median, p95) as order statistics of the raw samples.

    Median is the lower median; p95 is the nearest-rank 95th
    percentile, so both are always actual observed values.
    """
    s = sorted(float(v) for v in samples_ms)
    n = len(s)
    if n == 0:
        raise InvalidInputError("no latency samples")
    mean = sum(s) / n
    median = s[(n - 1) // 2]
    rank = max(1, int(np.ceil(0.95 * n)))
    return mean, median, s[rank - 1]


def measure_tpot(
    model: Model,
    prompt,
    n_tokens: int = DEFAULT_BENCH_TOKENS,
    workers: int = DEFAULT_BENCH_WORKERS,
) -> BenchReport:
    """Time per output token of greedy decoding.

    Runs n_tokens + 1 decode steps and discards the first (warmup)
    sample. The worker count is forwarded to the kernels for the
    duration of the run.
    """
    if n_tokens < 1:
        raise InvalidInputError("n_tokens must be >= 1")
    if workers < 1:
        raise InvalidInputError("workers must be >= 1")
    params = GenerationParams(max_new_tokens=n_tokens + 1, temperature=0.0)
    saved_workers = model.n_workers
    model.n_workers = workers
    try:
        t0 = time.perf_counter()
        result = generate(prompt, model, params)
        total_s = time.perf_counter() - t0
    finally:
        model.n_workers = saved_workers
    samples_ms = [1e3 * dt for dt in result.step_times_s[1:]]
    mean, median, p95 = latency_stats(samples_ms)
    return BenchReport(
        tokens=len(samples_ms),
        mean_ms=mean,
        median_ms=median,
        p95_ms=p95,
        workers=workers,
        total_s=total_s,
        samples_ms=samples_ms,
        token_ids=list(result.ids),
    )
