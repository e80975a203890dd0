"""Edit-instruction language.

    command  := add_bg | add_rvb | rm_noise | rm_rvb
    add_bg   := "add background sound as" label "with snr as" number "db"
    add_rvb  := "add reverberation with" ("small" | "medium" | "large") "room" ["size"]
    rm_noise := "remove noise"
    rm_rvb   := "remove reverberation"
    label    := word{1,4}          (a word is any token other than "with")

Matching is case-insensitive; "10db" is split into "10" "db".
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass

import numpy as np

SNR_RANGE = (0.0, 15.0)
ROOM_SIZES = ("small", "medium", "large")
DEFAULT_LABELS = ("rain", "dog barking", "traffic", "babble")
MAX_LABEL_WORDS = 4

_NUMBER = r"[0-9]+(?:\.[0-9]+)?(?:e[-+]?[0-9]+)?|\.[0-9]+(?:e[-+]?[0-9]+)?"
_NUMBER_RE = re.compile(rf"(?:{_NUMBER})\Z")
_NUMBER_UNIT_RE = re.compile(rf"({_NUMBER})(db)\Z")


class Action(str, enum.Enum):
    ADD_BACKGROUND = "AddBackground"
    ADD_REVERB = "AddReverb"
    REMOVE_NOISE = "RemoveNoise"
    REMOVE_REVERB = "RemoveReverb"


class PromptError(ValueError):
    pass


class NoMatch(PromptError):
    def __init__(self, message, position, token=None, offset=None):
        self.position = position
        self.token = token
        self.offset = offset
        where = f"token {position}" + (f" {token!r}" if token is not None else " (end of input)")
        super().__init__(f"{message} at {where}")


class OutOfRange(PromptError):
    def __init__(self, value, position=None):
        self.value = value
        self.position = position
        super().__init__(f"SNR {value} dB outside [{SNR_RANGE[0]:g}, {SNR_RANGE[1]:g}]")


@dataclass(frozen=True)
class EditCommand:
    action: Action
    sound_label: str | None = None
    snr_db: float | None = None
    room_size: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "action", Action(self.action))
        if self.sound_label is not None:
            object.__setattr__(self, "sound_label", " ".join(self.sound_label.lower().split()))
        if self.snr_db is not None:
            object.__setattr__(self, "snr_db", float(self.snr_db))
        validate(self)

    def to_dict(self) -> dict:
        out = {"action": self.action.value}
        if self.sound_label is not None:
            out["sound_label"] = self.sound_label
        if self.snr_db is not None:
            out["snr_db"] = self.snr_db
        if self.room_size is not None:
            out["room_size"] = self.room_size
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "EditCommand":
        return cls(d["action"], d.get("sound_label"), d.get("snr_db"), d.get("room_size"))


def validate(cmd: EditCommand):
    if cmd.action is Action.ADD_BACKGROUND:
        if not cmd.sound_label or cmd.snr_db is None or cmd.room_size is not None:
            raise ValueError("AddBackground needs sound_label and snr_db only")
        words = cmd.sound_label.split()
        if not 1 <= len(words) <= MAX_LABEL_WORDS or "with" in words:
            raise ValueError(f"label must be 1-{MAX_LABEL_WORDS} words, none of them 'with'")
        if any(_NUMBER_UNIT_RE.match(w) for w in words):
            raise ValueError(f"label word looks like a level: {cmd.sound_label!r}")
        if not (SNR_RANGE[0] <= cmd.snr_db <= SNR_RANGE[1]):
            raise OutOfRange(cmd.snr_db)
    elif cmd.action is Action.ADD_REVERB:
        if cmd.room_size not in ROOM_SIZES or cmd.sound_label is not None or cmd.snr_db is not None:
            raise ValueError(f"AddReverb needs room_size in {ROOM_SIZES} only")
    elif cmd.sound_label is not None or cmd.snr_db is not None or cmd.room_size is not None:
        raise ValueError(f"{cmd.action.value} takes no arguments")


@dataclass(frozen=True)
class Token:
    text: str
    offset: int


def tokenize(prompt: str) -> list[Token]:
    tokens = []
    for m in re.finditer(r"\S+", prompt.lower()):
        word = m.group()
        unit = _NUMBER_UNIT_RE.match(word)
        if unit:
            tokens.append(Token(unit.group(1), m.start()))
            tokens.append(Token("db", m.start() + len(unit.group(1))))
        else:
            tokens.append(Token(word, m.start()))
    return tokens


class _Cursor:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos].text if self.pos < len(self.tokens) else None

    def fail(self, message="unexpected token"):
        if self.pos < len(self.tokens):
            tok = self.tokens[self.pos]
            raise NoMatch(message, self.pos, tok.text, tok.offset)
        raise NoMatch("unexpected end of prompt", self.pos)

    def expect(self, *words):
        for w in words:
            if self.peek() != w:
                self.fail(f"expected {w!r}")
            self.pos += 1

    def done(self):
        if self.pos != len(self.tokens):
            self.fail("trailing input")


def parse(prompt: str) -> EditCommand:
    """Parse a prompt into an EditCommand; raises NoMatch or OutOfRange otherwise."""
    cur = _Cursor(tokenize(prompt))
    first = cur.peek()
    if first == "add":
        cur.pos += 1
        second = cur.peek()
        if second == "background":
            return _parse_background(cur)
        if second == "reverberation":
            return _parse_reverb(cur)
        cur.fail("expected 'background' or 'reverberation'")
    if first == "remove":
        cur.pos += 1
        if cur.peek() == "noise":
            cur.pos += 1
            cur.done()
            return EditCommand(Action.REMOVE_NOISE)
        if cur.peek() == "reverberation":
            cur.pos += 1
            cur.done()
            return EditCommand(Action.REMOVE_REVERB)
        cur.fail("expected 'noise' or 'reverberation'")
    cur.fail("expected 'add' or 'remove'")


def _parse_background(cur: _Cursor) -> EditCommand:
    cur.expect("background", "sound", "as")
    words = []
    while cur.peek() is not None and cur.peek() != "with":
        if len(words) == MAX_LABEL_WORDS:
            cur.fail(f"label longer than {MAX_LABEL_WORDS} words")
        if _NUMBER_RE.match(cur.peek()) or cur.peek() == "db":
            cur.fail("expected a label word")
        words.append(cur.peek())
        cur.pos += 1
    if not words:
        cur.fail("expected a sound label")
    cur.expect("with", "snr", "as")
    num_pos = cur.pos
    tok = cur.peek()
    if tok is None or not _NUMBER_RE.match(tok):
        cur.fail("expected a number")
    value = float(tok)
    if not math.isfinite(value):
        cur.fail("expected a finite number")
    cur.pos += 1
    cur.expect("db")
    cur.done()
    if not (SNR_RANGE[0] <= value <= SNR_RANGE[1]):
        raise OutOfRange(value, num_pos)
    return EditCommand(Action.ADD_BACKGROUND, sound_label=" ".join(words), snr_db=value)


def _parse_reverb(cur: _Cursor) -> EditCommand:
    cur.expect("reverberation", "with")
    size = cur.peek()
    if size not in ROOM_SIZES:
        cur.fail("expected a room size")
    cur.pos += 1
    cur.expect("room")
    if cur.peek() == "size":
        cur.pos += 1
    cur.done()
    return EditCommand(Action.ADD_REVERB, room_size=size)


def format_number(value: float) -> str:
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


def format_command(cmd: EditCommand) -> str:
    validate(cmd)
    if cmd.action is Action.REMOVE_NOISE:
        return "Remove noise"
    if cmd.action is Action.REMOVE_REVERB:
        return "Remove reverberation"
    if cmd.action is Action.ADD_REVERB:
        return f"Add reverberation with {cmd.room_size} room size"
    return f"Add background sound as {cmd.sound_label} with SNR as {format_number(cmd.snr_db)}dB"


def sample_command(rng: np.random.Generator, labels=DEFAULT_LABELS) -> EditCommand:
    """Uniform action; SNR uniform on the 0.1 dB grid over [0, 15]; uniform room size."""
    labels = tuple(labels)
    if not labels:
        raise ValueError("empty label vocabulary")
    action = list(Action)[rng.integers(len(Action))]
    if action is Action.ADD_BACKGROUND:
        label = labels[rng.integers(len(labels))]
        snr = int(rng.integers(0, 151)) / 10.0
        return EditCommand(action, sound_label=label, snr_db=snr)
    if action is Action.ADD_REVERB:
        return EditCommand(action, room_size=ROOM_SIZES[rng.integers(len(ROOM_SIZES))])
    return EditCommand(action)
