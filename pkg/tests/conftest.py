import numpy as np
import pytest

import ternkit as tk

# (number, description, passed) tuples filled by test_acceptance.py.
ACCEPTANCE_RESULTS = []


def record_acceptance(number: int, description: str, passed: bool) -> None:
    ACCEPTANCE_RESULTS.append((number, description, passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, passed in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {number:>2} {status}  {description}")


TINY_CONFIG = tk.ModelConfig(
    n_layers=2,
    d_model=64,
    n_heads=4,
    n_kv_heads=2,
    d_ff=128,
    vocab_size=259,
    max_seq_len=128,
)


@pytest.fixture(scope="session")
def tiny_config():
    return TINY_CONFIG


@pytest.fixture(scope="session")
def tiny_model():
    return tk.random_model(TINY_CONFIG, seed=2024)


def random_activations(rng, t, k):
    """QuantizedActivations with uniform int8 values and positive scales."""
    values = rng.integers(-127, 128, size=(t, k)).astype(np.int8)
    values = np.clip(values, -127, 127)
    scales = (0.1 + rng.random(t) * 10.0).astype(np.float32)
    return tk.QuantizedActivations(values=values, act_scales=scales)


def random_ternary(rng, n, k, scale=None):
    values = rng.integers(-1, 2, size=(n, k)).astype(np.int8)
    if scale is None:
        scale = float(np.float32(0.01 + rng.random() * 2.0))
    return tk.TernaryWeights(values=values, weight_scale=scale)


# Shapes of the quantized linear projections and of the norm gains, in
# terms of config dimensions. Mirrors the canonical tensor layout.
LINEAR_SHAPES = {
    "wq": ("d_model", "d_model"),
    "wk": ("kv_dim", "d_model"),
    "wv": ("kv_dim", "d_model"),
    "wo": ("d_model", "d_model"),
    "w_up": ("d_ff", "d_model"),
    "w_down": ("d_model", "d_ff"),
}
GAIN_DIMS = {
    "attn_norm": "d_model",
    "ffn_norm": "d_model",
    "attn_subln": "d_model",
    "ffn_subln": "d_ff",
}


def build_checkpoint_manifest(dirpath, config, seed=0):
    """Write a raw float32 checkpoint plus conversion manifest.

    Creates one .bin file per canonical tensor (quantize role for the
    linear projections, keep-real for everything else) and returns the
    manifest path.
    """
    import json

    rng = np.random.default_rng(seed)
    dim = lambda key: getattr(config, key)
    specs = []
    for name in tk.model_tensor_names(config):
        part = name.rsplit(".", 1)[-1]
        if part in LINEAR_SHAPES:
            rows, cols = (dim(k) for k in LINEAR_SHAPES[part])
            arr = rng.standard_normal((rows, cols), dtype=np.float32) * np.float32(0.05)
            role = "quantize"
        elif part in GAIN_DIMS or name == "final_norm":
            rows, cols = 1, dim(GAIN_DIMS.get(part, "d_model"))
            arr = 1.0 + 0.1 * rng.standard_normal((rows, cols))
            role = "keep-real"
        else:  # embedding, lm_head
            rows, cols = config.vocab_size, config.d_model
            arr = 0.02 * rng.standard_normal((rows, cols))
            role = "keep-real"
        fname = f"{name}.bin"
        (dirpath / fname).write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        specs.append(
            {"name": name, "file": fname, "rows": rows, "cols": cols, "role": role}
        )
    manifest = dirpath / "manifest.json"
    manifest.write_text(json.dumps({"config": config.to_dict(), "tensors": specs}))
    return manifest
