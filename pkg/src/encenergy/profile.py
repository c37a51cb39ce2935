"""Reading cachegrind and callgrind cost files.

Both dialects share the same skeleton: a header that declares the event
columns, ``fl=``/``fn=`` name records, cost lines made of positions followed
by event counts, and a totals line.  Only self costs are aggregated; call
edges (the cost line that follows ``calls=``) are skipped.
"""

from __future__ import annotations

import io
import os
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType

from .errors import IntegrityError, MergeError, MissingEvents, ParseError


class EventId(str, Enum):
    Ir = "Ir"
    Dr = "Dr"
    Dw = "Dw"
    I1mr = "I1mr"
    D1mr = "D1mr"
    D1mw = "D1mw"
    ILmr = "ILmr"
    DLmr = "DLmr"
    DLmw = "DLmw"
    Bc = "Bc"
    Bcm = "Bcm"
    Bi = "Bi"
    Bim = "Bim"

    def __str__(self) -> str:
        return self.value


#: The thirteen simulated events, in the canonical (table) order.
ALL_EVENTS: tuple[EventId, ...] = tuple(EventId)
CACHE_EVENTS: tuple[EventId, ...] = ALL_EVENTS[:9]
BRANCH_EVENTS: tuple[EventId, ...] = ALL_EVENTS[9:]

#: miss/mispredict event -> the access event that bounds it
PARENT_EVENT: Mapping[EventId, EventId] = MappingProxyType({
    EventId.I1mr: EventId.Ir,
    EventId.D1mr: EventId.Dr,
    EventId.D1mw: EventId.Dw,
    EventId.ILmr: EventId.I1mr,
    EventId.DLmr: EventId.D1mr,
    EventId.DLmw: EventId.D1mw,
    EventId.Bcm: EventId.Bc,
    EventId.Bim: EventId.Bi,
})


def as_event_ids(names: Iterable) -> tuple[EventId, ...]:
    """Convert event names to :class:`EventId`, keeping the given order."""
    try:
        return tuple(EventId(str(n)) for n in names)
    except ValueError as exc:
        raise ValueError(f"unknown event name: {exc}") from None


@dataclass(frozen=True)
class EventVector:
    """Non-negative integer counts for a subset of the thirteen events.

    Events that were never declared are absent, which is different from a
    count of zero.
    """

    counts: Mapping[EventId, int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for key, value in dict(self.counts).items():
            key = EventId(str(key))
            if isinstance(value, bool) or int(value) != value:
                raise ValueError(f"count for {key} is not an integer: {value!r}")
            value = int(value)
            if value < 0:
                raise ValueError(f"count for {key} is negative: {value}")
            clean[key] = value
        for child, parent in PARENT_EVENT.items():
            if child in clean and parent in clean and clean[child] > clean[parent]:
                raise ValueError(
                    f"{child}={clean[child]} exceeds its parent {parent}={clean[parent]}"
                )
        ordered = {e: clean[e] for e in ALL_EVENTS if e in clean}
        object.__setattr__(self, "counts", MappingProxyType(ordered))

    @classmethod
    def zeros(cls, events: Iterable = ALL_EVENTS) -> "EventVector":
        return cls({e: 0 for e in as_event_ids(events)})

    @property
    def events(self) -> tuple[EventId, ...]:
        return tuple(self.counts)

    def __getitem__(self, event) -> int:
        return self.counts[EventId(str(event))]

    def __contains__(self, event) -> bool:
        try:
            return EventId(str(event)) in self.counts
        except ValueError:
            return False

    def get(self, event, default=None):
        return self.counts.get(EventId(str(event)), default)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventVector):
            return NotImplemented
        return dict(self.counts) == dict(other.counts)

    def __hash__(self) -> int:
        return hash(tuple(self.counts.items()))

    def __add__(self, other: "EventVector") -> "EventVector":
        if set(self.counts) != set(other.counts):
            raise ValueError("cannot add event vectors over different events")
        return EventVector({e: self.counts[e] + other.counts[e] for e in self.counts})

    def scaled(self, k: int) -> "EventVector":
        return EventVector({e: v * k for e, v in self.counts.items()})

    def restrict(self, required: Iterable) -> "EventVector":
        """Project onto ``required``; raise :class:`MissingEvents` if any is absent."""
        required = set(as_event_ids(required))
        missing = [e for e in ALL_EVENTS if e in required and e not in self.counts]
        if missing:
            raise MissingEvents(missing)
        return EventVector({e: v for e, v in self.counts.items() if e in required})

    def as_dict(self) -> dict[str, int]:
        return {e.value: v for e, v in self.counts.items()}


@dataclass(frozen=True)
class FunctionProfile:
    function_name: str
    source_file: str
    counts: EventVector

    def __post_init__(self):
        if not self.function_name:
            raise ValueError("function_name must be non-empty")

    @property
    def key(self) -> tuple[str, str]:
        return (self.function_name, self.source_file)


@dataclass(frozen=True)
class Profile:
    event_order: tuple[EventId, ...]
    totals: EventVector
    functions: tuple[FunctionProfile, ...] = ()
    command_line: str = ""
    source_path: str = ""
    dialect: str = "cachegrind"
    #: header lines we do not interpret, kept verbatim as (key, value)
    metadata: tuple[tuple[str, str], ...] = ()
    #: declared event columns outside the thirteen known events
    ignored_events: tuple[str, ...] = ()

    def __post_init__(self):
        order = as_event_ids(self.event_order)
        if len(set(order)) != len(order):
            raise ValueError("event_order has duplicates")
        object.__setattr__(self, "event_order", order)
        object.__setattr__(self, "functions", tuple(self.functions))
        object.__setattr__(self, "metadata", tuple(tuple(m) for m in self.metadata))

    @classmethod
    def empty(cls, event_order: Iterable = ALL_EVENTS, **kwargs) -> "Profile":
        order = as_event_ids(event_order)
        return cls(event_order=order, totals=EventVector.zeros(order), **kwargs)

    def function_sums(self) -> EventVector:
        sums = {e: 0 for e in self.event_order}
        for fn in self.functions:
            for e, v in fn.counts.counts.items():
                sums[e] += v
        return EventVector(sums)


# --------------------------------------------------------------------------
# parsing

_HEADER_RE = re.compile(r"^([A-Za-z][A-Za-z0-9_-]*):\s?(.*)$")
_NAME_RE = re.compile(r"^(fl|fi|fe|fn|cfi|cfl|cfn|ob|cob)=(.*)$")
_COMPRESSED_RE = re.compile(r"^\((\d+)\)(?:\s(.*))?$")
_POSITION_RE = re.compile(r"^(?:\*|[+-]?(?:0x[0-9a-fA-F]+|\d+))$")
_COUNT_RE = re.compile(r"^\d+$")

# which compression table each name record uses
_NAME_TABLE = {
    "fl": "file", "fi": "file", "fe": "file", "cfi": "file", "cfl": "file",
    "fn": "fn", "cfn": "fn",
    "ob": "obj", "cob": "obj",
}


def _resolve_position(token: str, previous: int, lineno: int) -> int:
    if not _POSITION_RE.match(token):
        raise ParseError(lineno, f"bad position field {token!r}")
    if token == "*":
        return previous
    if token[0] in "+-":
        value = previous + int(token, 0)
    else:
        value = int(token, 0)
    if value < 0:
        raise ParseError(lineno, f"position {token!r} resolves below zero")
    return value


def _parse_counts(tokens: list[str], width: int, lineno: int) -> list[int]:
    if len(tokens) > width:
        raise ParseError(lineno, f"{len(tokens)} counts for {width} declared events")
    values = []
    for tok in tokens:
        if not _COUNT_RE.match(tok):
            raise ParseError(lineno, f"count {tok!r} is not a non-negative integer")
        values.append(int(tok))
    # trailing zero counts may be omitted
    values.extend([0] * (width - len(values)))
    return values


def _to_text(source) -> tuple[str, str]:
    """Return (text, path) for bytes, str path, os.PathLike or a file object."""
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8", errors="replace"), ""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read().decode("utf-8", errors="replace"), os.fspath(source)
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    return data, getattr(source, "name", "") or ""


def parse_profile(source, *, source_path: str | None = None) -> Profile:
    """Parse a cachegrind or callgrind output file.

    ``source`` may be a path, raw bytes, or a binary/text file object.

    Totals come from the ``summary:`` line, except that a callgrind
    ``totals:`` line takes precedence when present: callgrind's ``summary``
    may include a few instructions outside any function, while ``totals`` is
    by definition the sum of all self costs.
    """
    text, path = _to_text(source)
    if source_path is not None:
        path = source_path

    event_names: list[str] | None = None
    positions = ["line"]
    summary = totals = None
    summary_line = None
    command = ""
    metadata: list[tuple[str, str]] = []
    dialect = "cachegrind"

    tables: dict[str, dict[str, str]] = {"file": {}, "fn": {}, "obj": {}}
    current_file = ""
    current_fn: tuple[str, str] | None = None
    per_fn: dict[tuple[str, str], list[int]] = {}
    last_pos: list[int] = []
    skip_next_cost = False
    in_body = False

    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.rstrip("\r\n")
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if "callgrind" in stripped:
                dialect = "callgrind"
            continue

        m = _NAME_RE.match(stripped)
        if m:
            in_body = True
            kind, rest = m.groups()
            table = tables[_NAME_TABLE[kind]]
            cm = _COMPRESSED_RE.match(rest)
            if cm:
                dialect = "callgrind"
                ident, name = cm.groups()
                if name is not None:
                    table[ident] = name
                elif ident in table:
                    name = table[ident]
                else:
                    raise ParseError(lineno, f"{kind}=({ident}) used before definition")
            else:
                name = rest
            if kind == "fl":
                current_file = name
            elif kind == "fn":
                if not name:
                    raise ParseError(lineno, "empty function name")
                current_fn = (name, current_file)
                per_fn.setdefault(current_fn, None)
            continue

        if stripped.startswith(("calls=", "jump=", "jcnd=")):
            dialect = "callgrind"
            if stripped.startswith("calls="):
                skip_next_cost = True
            continue

        first = stripped[0]
        if first.isdigit() or first in "+-*":
            if event_names is None:
                raise ParseError(lineno, "cost line before events: declaration")
            tokens = stripped.split()
            npos = len(positions)
            if len(tokens) < npos:
                raise ParseError(lineno, "cost line shorter than its position fields")
            if not last_pos:
                last_pos = [0] * npos
            last_pos = [_resolve_position(t, p, lineno)
                        for t, p in zip(tokens[:npos], last_pos)]
            counts = _parse_counts(tokens[npos:], len(event_names), lineno)
            if skip_next_cost:
                # inclusive cost of a call: belongs to the callee, not here
                skip_next_cost = False
                continue
            if current_fn is None:
                raise ParseError(lineno, "cost line outside any fn= record")
            acc = per_fn[current_fn]
            if acc is None:
                per_fn[current_fn] = counts
            else:
                for i, v in enumerate(counts):
                    acc[i] += v
            continue

        m = _HEADER_RE.match(stripped)
        if m is None:
            raise ParseError(lineno, f"unrecognised line {stripped[:40]!r}")
        key, value = m.groups()
        value = value.strip()
        if key == "events":
            if event_names is not None:
                raise ParseError(lineno, "events: declared twice")
            if in_body:
                raise ParseError(lineno, "events: declared after cost records")
            event_names = value.split()
            if not event_names:
                raise ParseError(lineno, "empty events: declaration")
            if len(set(event_names)) != len(event_names):
                raise ParseError(lineno, "duplicate event in events: declaration")
        elif key == "positions":
            positions = value.split() or ["line"]
            dialect = "callgrind"
        elif key in ("summary", "totals"):
            if event_names is None:
                raise ParseError(lineno, f"{key}: before events: declaration")
            vals = _parse_counts(value.split(), len(event_names), lineno)
            if key == "summary":
                if summary is not None:
                    raise ParseError(lineno, "summary: given twice")
                summary, summary_line = vals, lineno
            else:
                totals = vals
                dialect = "callgrind"
        elif key == "cmd":
            command = value
        else:
            if key in ("version", "creator", "part", "thread", "pid", "event"):
                dialect = "callgrind"
            metadata.append((key, value))

    if event_names is None:
        raise ParseError(None, "header has no events: declaration")
    if summary is None and totals is None:
        raise ParseError(None, "summary line missing")
    if totals is not None and summary is not None:
        metadata.append(("summary", " ".join(map(str, summary))))
    final = totals if totals is not None else summary

    known_idx = []
    ignored = []
    for i, name in enumerate(event_names):
        try:
            known_idx.append((i, EventId(name)))
        except ValueError:
            ignored.append(name)
    order = tuple(e for _, e in known_idx)

    def vector(values: list[int], where) -> EventVector:
        try:
            return EventVector({e: values[i] for i, e in known_idx})
        except ValueError as exc:
            raise ParseError(where, str(exc)) from None

    functions = tuple(
        FunctionProfile(name, fl, vector(vals, None))
        for (name, fl), vals in per_fn.items()
        if vals is not None
    )
    profile = Profile(
        event_order=order,
        totals=vector(final, summary_line),
        functions=functions,
        command_line=command,
        source_path=path,
        dialect=dialect,
        metadata=tuple(metadata),
        ignored_events=tuple(ignored),
    )
    if functions:
        sums = profile.function_sums()
        if sums != profile.totals:
            diff = [f"{e}: functions={sums[e]} totals={profile.totals[e]}"
                    for e in order if sums[e] != profile.totals[e]]
            raise IntegrityError("per-function costs disagree with totals (" + "; ".join(diff) + ")")
    return profile


def load_profile(path) -> Profile:
    return parse_profile(path)


def dump_profile(profile: Profile) -> str:
    """Render a profile back into cachegrind text (one cost line per function)."""
    order = profile.event_order
    out = [f"{k}: {v}" for k, v in profile.metadata if k != "summary"]
    if profile.command_line:
        out.append(f"cmd: {profile.command_line}")
    out.append("events: " + " ".join(e.value for e in order))
    current_file = None
    for fn in profile.functions:
        if fn.source_file != current_file:
            out.append(f"fl={fn.source_file}")
            current_file = fn.source_file
        out.append(f"fn={fn.function_name}")
        out.append("0 " + " ".join(str(fn.counts[e]) for e in order))
    out.append("summary: " + " ".join(str(profile.totals[e]) for e in order))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# operations on parsed profiles

def event_vector(profile: Profile, required: Iterable = ALL_EVENTS) -> EventVector:
    """Totals restricted to ``required``.

    Events that the file never declared (for instance branch events when
    branch simulation was off) raise :class:`MissingEvents`; they are never
    filled with zeros.
    """
    return profile.totals.restrict(required)


def merge_profiles(parts: Iterable[Profile]) -> Profile:
    """Element-wise sum of several profiles of one workload (e.g. per-thread files)."""
    parts = list(parts)
    if not parts:
        raise MergeError("nothing to merge")
    order = parts[0].event_order
    for p in parts[1:]:
        if p.event_order != order:
            raise MergeError(
                f"event order mismatch: {[e.value for e in order]} vs {[e.value for e in p.event_order]}"
            )
    totals = [0] * len(order)
    functions: dict[tuple[str, str], list[int]] = {}
    for p in parts:
        for i, e in enumerate(order):
            totals[i] += p.totals[e]
        for fn in p.functions:
            acc = functions.setdefault(fn.key, [0] * len(order))
            for i, e in enumerate(order):
                acc[i] += fn.counts[e]
    return Profile(
        event_order=order,
        totals=EventVector(dict(zip(order, totals))),
        functions=tuple(
            FunctionProfile(name, fl, EventVector(dict(zip(order, vals))))
            for (name, fl), vals in functions.items()
        ),
        command_line=parts[0].command_line,
        source_path="+".join(p.source_path for p in parts if p.source_path),
        dialect=parts[0].dialect,
        metadata=parts[0].metadata,
        ignored_events=parts[0].ignored_events,
    )
