"""Byte-level tokenizer: the default, dependency-free text interface.

Ids 0..255 are raw UTF-8 byte values; three special ids follow. The
encoder is pure bytes (marker strings in input text are treated as
text, never as specials), so encode/decode is an exact round trip for
arbitrary strings. The decoder renders special ids as their marker
strings. The interface is deliberately small so a richer subword
tokenizer can slot in: anything with encode/decode/vocab_size works.
"""

from dataclasses import dataclass

from .errors import InvalidTokenError

BEGIN_OF_TEXT_ID = 256
EOT_ID = 257
PAD_ID = 258
VOCAB_SIZE = 259

BEGIN_OF_TEXT_MARKER = "<|begin_of_text|>"
EOT_MARKER = "<|eot_id|>"
PAD_MARKER = "<|pad|>"

SPECIAL_MARKERS = {
    BEGIN_OF_TEXT_ID: BEGIN_OF_TEXT_MARKER,
    EOT_ID: EOT_MARKER,
    PAD_ID: PAD_MARKER,
}
MARKER_IDS = {marker: tid for tid, marker in SPECIAL_MARKERS.items()}


@dataclass(frozen=True)
class TokenizerSpec:
    kind: str = "byte_level"
    vocab_size: int = VOCAB_SIZE
    begin_of_text: int = BEGIN_OF_TEXT_ID
    eot: int = EOT_ID
    pad: int = PAD_ID


TOKENIZER_SPEC = TokenizerSpec()


def byte_tokenize(text: str) -> list[int]:
    """Encode text as its UTF-8 byte values."""
    return list(text.encode("utf-8"))


def byte_detokenize(ids) -> str:
    """Decode ids back to text; special ids render as marker strings.

    Byte runs are decoded as UTF-8, with invalid sequences replaced, so
    any id sequence a model can emit decodes to some string.
    """
    pieces = []
    run = bytearray()
    for tid in ids:
        tid = int(tid)
        if 0 <= tid <= 255:
            run.append(tid)
            continue
        if tid in SPECIAL_MARKERS:
            if run:
                pieces.append(run.decode("utf-8", errors="replace"))
                run = bytearray()
            pieces.append(SPECIAL_MARKERS[tid])
            continue
        raise InvalidTokenError(f"token id {tid} outside vocabulary of {VOCAB_SIZE}")
    if run:
        pieces.append(run.decode("utf-8", errors="replace"))
    return "".join(pieces)


class ByteTokenizer:
    """Object form of the byte-level tokenizer (pluggable interface)."""

    spec = TOKENIZER_SPEC
    vocab_size = VOCAB_SIZE

    def encode(self, text: str) -> list[int]:
        return byte_tokenize(text)

    def decode(self, ids) -> str:
        return byte_detokenize(ids)
