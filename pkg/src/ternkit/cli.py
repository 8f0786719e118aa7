"""Command-line front end.

Subcommands: convert (float checkpoint -> container), generate, chat,
bench, energy, inspect. Machine-readable output (JSON) goes to stdout;
human-oriented tables and prompts go to stderr. Expected failures exit
with a family-specific nonzero code and a one-line message, never a
stack trace.
"""

import argparse
import json
import os
import sys

from .bench import (
    DEFAULT_BENCH_TOKENS,
    DEFAULT_BENCH_WORKERS,
    DEFAULT_ENERGY_TABLE,
    DEFAULT_ENERGY_TOKENS,
    count_weight_macs,
    estimate_energy,
    measure_tpot,
)
from .chat import ChatMessage, RESERVED_MARKERS, apply_chat_template, encode_chat
from .errors import (
    CapacityError,
    ChatTemplateError,
    CorruptDataError,
    FormatError,
    InvalidInputError,
    InvalidTokenError,
    ShapeError,
    TernkitError,
)
from .model import GenerationParams, KERNEL_ROUTES, ModelConfig, generate, model_from_tensors
from .modelfile import convert_checkpoint, inspect_model, read_model
from .tokenizer import EOT_ID, byte_detokenize, byte_tokenize

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_FILE = 3
EXIT_CONTAINER = 4
EXIT_MODEL_INPUT = 5
EXIT_CHAT = 6

_EXIT_HELP = """\
exit codes:
  0  success
  2  usage error (unknown flags or arguments)
  3  file system error (missing or unreadable file)
  4  model container error (bad magic, truncation, corrupt payload)
  5  invalid model input (shapes, token ids, capacity, bad values)
  6  chat template violation
  1  unexpected internal error
"""


def _load_model(path, kernel: str, threads: int):
    config, tensors = read_model(path)
    return model_from_tensors(config, tensors, kernel=kernel, n_workers=threads)


def _add_model_flags(p):
    p.add_argument("--model", required=True, help="path to a model container file")
    p.add_argument("--threads", type=int, default=DEFAULT_BENCH_WORKERS,
                   help="kernel worker count (default 8)")
    p.add_argument("--kernel", choices=KERNEL_ROUTES, default="packed",
                   help="compute route (default packed)")


def _add_sampling_flags(p):
    p.add_argument("--max-new-tokens", type=int, default=128)
    p.add_argument("--temperature", type=float, default=0.0,
                   help="0 means greedy decoding (default)")
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)


def _cmd_convert(args) -> int:
    report = convert_checkpoint(args.manifest, args.output)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def _cmd_generate(args) -> int:
    model = _load_model(args.model, args.kernel, args.threads)
    params = GenerationParams(
        max_new_tokens=args.max_new_tokens,
        temperature=args.temperature,
        top_k=args.top_k,
        seed=args.seed,
    )
    result = generate(byte_tokenize(args.prompt), model, params)
    print(byte_detokenize(result.ids))
    return EXIT_OK


def _strip_markers(text: str) -> str:
    for marker in RESERVED_MARKERS:
        text = text.replace(marker, "")
    return text


def _cmd_chat(args) -> int:
    model = _load_model(args.model, args.kernel, args.threads)
    messages = []
    if args.system:
        messages.append(ChatMessage("system", args.system))
    print("chat session; empty line or EOF to quit", file=sys.stderr)
    while True:
        print("user> ", end="", file=sys.stderr, flush=True)
        line = sys.stdin.readline()
        if not line:
            break
        content = line.rstrip("\n")
        if not content or content in ("exit", "quit"):
            break
        messages.append(ChatMessage("user", content))
        prompt_ids = encode_chat(apply_chat_template(messages))
        params = GenerationParams(
            max_new_tokens=args.max_new_tokens,
            temperature=args.temperature,
            top_k=args.top_k,
            seed=args.seed,
            stop_ids=frozenset({EOT_ID}),
        )
        result = generate(prompt_ids, model, params)
        reply = byte_detokenize([t for t in result.ids if t <= 255])
        reply = _strip_markers(reply)
        print(f"assistant> {reply}", flush=True)
        messages.append(ChatMessage("assistant", reply))
    return EXIT_OK


def _cmd_bench(args) -> int:
    model = _load_model(args.model, args.kernel, args.threads)
    report = measure_tpot(
        model,
        byte_tokenize(args.prompt),
        n_tokens=args.tokens,
        workers=args.threads,
    )
    print(json.dumps(report.to_dict(), indent=2))
    print(report.text_table(), file=sys.stderr)
    if args.report_dir:
        from .report import render_bench_report

        paths = render_bench_report(report, args.report_dir)
        print(f"report files: {', '.join(paths.values())}", file=sys.stderr)
    return EXIT_OK


def _cmd_energy(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"config file is not valid JSON: {e}") from e
    if isinstance(obj, dict) and isinstance(obj.get("config"), dict):
        obj = obj["config"]
    config = ModelConfig.from_dict(obj)
    table = DEFAULT_ENERGY_TABLE
    macs = count_weight_macs(config, args.tokens)
    out = {
        "n_tokens": args.tokens,
        "macs": macs,
        "mode": args.mode,
        "joules": estimate_energy(config, args.tokens, table, args.mode),
        "fp16_joules": estimate_energy(config, args.tokens, table, "fp16"),
        "w158a8_joules": estimate_energy(config, args.tokens, table, "w158a8"),
        "table_pj": table.to_dict(),
    }
    print(json.dumps(out, indent=2))
    if args.report_dir:
        from .report import render_energy_report

        paths = render_energy_report(config, args.tokens, table, args.report_dir)
        print(f"report files: {', '.join(paths.values())}", file=sys.stderr)
    return EXIT_OK


def _cmd_inspect(args) -> int:
    info = inspect_model(args.model)
    print(json.dumps(info, indent=2))
    header = f"{'name':<24} {'dtype':<14} {'shape':<12} {'bytes':>10} {'scale':>12}"
    lines = [header, "-" * len(header)]
    for t in info["tensors"]:
        scale = f"{t['weight_scale']:.6g}" if "weight_scale" in t else ""
        lines.append(
            f"{t['name']:<24} {t['dtype']:<14} "
            f"{str(t['rows']) + 'x' + str(t['cols']):<12} {t['payload_bytes']:>10} {scale:>12}"
        )
    lines.append(f"total payload bytes: {info['total_payload_bytes']}")
    print("\n".join(lines), file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ternkit",
        description="Inference engine for ternary-weight, int8-activation transformers.",
        epilog=_EXIT_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="quantize a raw float checkpoint into a container")
    p.add_argument("--manifest", required=True, help="conversion manifest JSON")
    p.add_argument("--output", required=True, help="container file to write")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("generate", help="decode a continuation of a prompt")
    _add_model_flags(p)
    p.add_argument("--prompt", required=True)
    _add_sampling_flags(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("chat", help="interactive loop using the conversation template")
    _add_model_flags(p)
    p.add_argument("--system", default=None, help="optional system message")
    _add_sampling_flags(p)
    p.set_defaults(func=_cmd_chat)

    p = sub.add_parser("bench", help="measure per-token decode latency")
    _add_model_flags(p)
    p.add_argument("--tokens", type=int, default=DEFAULT_BENCH_TOKENS,
                   help="timed decode steps (default 128)")
    p.add_argument("--prompt", default="Hello", help="prompt text (default 'Hello')")
    p.add_argument("--report-dir", default=None,
                   help="also write bench.json, steps.csv, latency.png here")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("energy", help="estimate matmul energy from a config")
    p.add_argument("--config", required=True,
                   help="JSON file with architecture fields (a converter manifest works)")
    p.add_argument("--tokens", type=int, default=DEFAULT_ENERGY_TOKENS,
                   help="sequence length (default 512)")
    p.add_argument("--mode", choices=("fp16", "w158a8"), default="w158a8")
    p.add_argument("--report-dir", default=None,
                   help="also write energy.csv and energy.png here")
    p.set_defaults(func=_cmd_energy)

    p = sub.add_parser("inspect", help="validate a container and print its tensor table")
    p.add_argument("--model", required=True, help="path to a model container file")
    p.set_defaults(func=_cmd_inspect)

    return parser


def run_command(argv) -> int:
    """Parse argv and dispatch; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        return args.func(args)
    except ChatTemplateError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHAT
    except (FormatError, CorruptDataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONTAINER
    except (InvalidInputError, ShapeError, InvalidTokenError, CapacityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL_INPUT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FILE
    except TernkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UNEXPECTED
    except Exception as e:  # pragma: no cover - defensive
        if os.environ.get("TERNKIT_DEBUG"):
            raise
        print(f"unexpected error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_UNEXPECTED


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
