"""Conversation rendering for instruction-following checkpoints.

The rendering is byte-stable and pinned by golden tests: a begin-of-text
marker, then one "Role: content<|eot_id|>" block per message joined by
single newlines, and a trailing "Assistant: " cue when the conversation
awaits a model turn. Message content may not contain the reserved
markers (prompt-injection guard).
"""

import re
from dataclasses import dataclass

from .errors import ChatTemplateError
from .tokenizer import (
    BEGIN_OF_TEXT_ID,
    BEGIN_OF_TEXT_MARKER,
    EOT_ID,
    EOT_MARKER,
    byte_tokenize,
)

ROLES = ("system", "user", "assistant")
ROLE_LABELS = {"system": "System", "user": "User", "assistant": "Assistant"}
RESERVED_MARKERS = (BEGIN_OF_TEXT_MARKER, EOT_MARKER)


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ChatTemplateError(f"unknown role {self.role!r}")
        for marker in RESERVED_MARKERS:
            if marker in self.content:
                raise ChatTemplateError(f"message content may not contain {marker!r}")


def _check_order(messages) -> None:
    rest = list(messages)
    if rest and rest[0].role == "system":
        rest = rest[1:]
    for msg in rest:
        if msg.role == "system":
            raise ChatTemplateError("system message must come first and appear once")
    expected = "user"
    for msg in rest:
        if msg.role != expected:
            raise ChatTemplateError(
                f"expected a {expected} message, got {msg.role}"
            )
        expected = "assistant" if expected == "user" else "user"


def apply_chat_template(messages) -> str:
    """Render a conversation to the exact prompt string.

    Appends the "Assistant: " generation cue when the last message is
    from the user. Raises on role-order violations and on reserved
    markers inside content.
    """
    messages = list(messages)
    _check_order(messages)
    blocks = [
        f"{ROLE_LABELS[m.role]}: {m.content}{EOT_MARKER}" for m in messages
    ]
    rendered = BEGIN_OF_TEXT_MARKER + "\n".join(blocks)
    if messages and messages[-1].role == "user":
        rendered += "\nAssistant: "
    return rendered


_MARKER_SPLIT = re.compile(
    "(" + "|".join(re.escape(m) for m in (BEGIN_OF_TEXT_MARKER, EOT_MARKER)) + ")"
)
_MARKER_TO_ID = {BEGIN_OF_TEXT_MARKER: BEGIN_OF_TEXT_ID, EOT_MARKER: EOT_ID}


def encode_chat(rendered: str) -> list[int]:
    """Tokenize a rendered conversation, mapping markers to special ids.

    The plain byte tokenizer never produces special ids; this is the
    chat-level encoder that does, exactly where the template placed its
    markers.
    """
    ids: list[int] = []
    for piece in _MARKER_SPLIT.split(rendered):
        if not piece:
            continue
        special = _MARKER_TO_ID.get(piece)
        if special is not None:
            ids.append(special)
        else:
            ids.extend(byte_tokenize(piece))
    return ids
