"""Canonical event schema for grasp trials.

Every grasp attempt produces exactly one outcome event (what the watchdog
concluded) and one decision event (what the policy did about it). Trials
additionally carry goal events (the active goal, including clarification
and revision updates) and revision markers. The newline-delimited JSON
encoding defined here is the single wire format: harness reports, the
gateway stream, and golden-trace tests all read and write these bytes
unchanged.

Encoding is canonical so that equal events produce equal bytes: fields are
ordered (trial_id, attempt, kind, then payload keys alphabetically), the
debug map is key-sorted, floats carry at most six decimal places, and
there is no whitespace. Decoding is strict: unknown fields, malformed
values, and labels outside the closed alphabets are rejected.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator, Mapping


class WatchdogLabel(str, Enum):
    """Discrete execution outcome of one grasp attempt."""

    SUCCESS = "SUCCESS"
    EMPTY = "EMPTY"
    SLIP = "SLIP"
    WEAK = "WEAK"
    STALL = "STALL"
    TIMEOUT = "TIMEOUT"


class DecisionAction(str, Enum):
    """Action the recovery policy takes after an outcome."""

    FINALIZE = "FINALIZE"
    RETRY_RESELECT = "RETRY_RESELECT"
    WAIT_CLARIFY = "WAIT_CLARIFY"


class ExecStatus(str, Enum):
    """Coarse status flag derived from (label, action), used for logging."""

    SUCCESS = "SUCCESS"
    FAIL = "FAIL"
    WAIT_CLARIFY = "WAIT_CLARIFY"


class RationaleCode(str, Enum):
    """Why a decision was taken. One code per policy branch, plus the
    selector's no-target case, the revision override, and operator stop."""

    SUCCESS_CONSISTENT = "SUCCESS_CONSISTENT"
    SEMANTIC_MISMATCH = "SEMANTIC_MISMATCH"
    EMPTY_BUDGET_REMAINING = "EMPTY_BUDGET_REMAINING"
    EMPTY_BUDGET_EXHAUSTED = "EMPTY_BUDGET_EXHAUSTED"
    FAILURE_SAFE_STOP = "FAILURE_SAFE_STOP"
    FAILURE_ESCALATED = "FAILURE_ESCALATED"
    NO_TARGET = "NO_TARGET"
    REVISED = "REVISED"
    USER_STOP = "USER_STOP"


SCHEMA_VERSION = 1

MAX_DEBUG_ENTRIES = 16

KIND_OUTCOME = "outcome"
KIND_DECISION = "decision"
KIND_GOAL = "goal"
KIND_REVISION = "revision"

GOAL_SOURCES = frozenset({"initial", "clarification", "revision"})
SPATIAL_WORDS = frozenset({"LEFT", "RIGHT", "FRONT", "BACK"})

TRIAL_ID_RE = re.compile(r"^T-\d{6}-[0-9a-f]{8}$")


class InvariantViolation(ValueError):
    """An event field violates its declared invariant."""


class ParseError(ValueError):
    """A serialized event line could not be decoded.

    Attributes
    ----------
    offset : int
        Byte offset within the input at which decoding failed.
    """

    def __init__(self, message: str, offset: int = 0) -> None:
        super().__init__(message)
        self.offset = offset


class UnknownLabel(ParseError):
    """A label, action, or status lies outside its closed alphabet."""


def derive_exec_status(label: WatchdogLabel, action: DecisionAction) -> ExecStatus:
    """Map (label, action) to the logged status flag.

    SUCCESS requires both a SUCCESS label and a FINALIZE action. Any
    WAIT_CLARIFY action reports WAIT_CLARIFY. Everything else is FAIL.
    """
    if action is DecisionAction.WAIT_CLARIFY:
        return ExecStatus.WAIT_CLARIFY
    if label is WatchdogLabel.SUCCESS and action is DecisionAction.FINALIZE:
        return ExecStatus.SUCCESS
    return ExecStatus.FAIL


def new_trial_id(counter: int, seed: int) -> str:
    """Build a trial id of the form ``T-<counter:06d>-<seed low 32 bits:08x>``.

    ``counter`` is the session-local trial number starting at 1.
    """
    if not isinstance(counter, int) or isinstance(counter, bool):
        raise InvariantViolation("trial counter must be an int")
    if not 1 <= counter <= 999_999:
        raise InvariantViolation(f"trial counter out of range: {counter}")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise InvariantViolation("seed must be an int")
    return f"T-{counter:06d}-{seed & 0xFFFFFFFF:08x}"


def _check_trial_id(trial_id: str) -> None:
    if not isinstance(trial_id, str) or not TRIAL_ID_RE.match(trial_id):
        raise InvariantViolation(f"malformed trial_id: {trial_id!r}")


def _check_attempt(attempt: int) -> None:
    if not isinstance(attempt, int) or isinstance(attempt, bool) or attempt < 1:
        raise InvariantViolation(f"attempt must be an int >= 1, got {attempt!r}")


def _check_timestamp(timestamp_ms: int) -> None:
    if not isinstance(timestamp_ms, int) or isinstance(timestamp_ms, bool) or timestamp_ms < 0:
        raise InvariantViolation(f"timestamp_ms must be a non-negative int, got {timestamp_ms!r}")


@dataclass(frozen=True, slots=True)
class OutcomeEvent:
    """Watchdog verdict for one grasp attempt.

    Parameters
    ----------
    trial_id : str
        Owning trial, ``T-......-........`` format.
    attempt : int
        1-based attempt index, strictly increasing within a trial.
    label : WatchdogLabel
        Discrete outcome.
    exec_status : ExecStatus
        Derived status flag (see :func:`derive_exec_status`).
    confidence : float
        Agreement of raw cues with the emitted label over the settle
        window, in [0, 1]. Stored quantized to six decimal places.
    timestamp_ms : int
        Milliseconds since the start of the run.
    debug : Mapping[str, str]
        Free-form diagnostic map, at most 16 entries. Not part of any
        conformance contract.
    """

    trial_id: str
    attempt: int
    label: WatchdogLabel
    exec_status: ExecStatus
    confidence: float
    timestamp_ms: int
    debug: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        _check_trial_id(self.trial_id)
        _check_attempt(self.attempt)
        if not isinstance(self.label, WatchdogLabel):
            raise InvariantViolation(f"label must be a WatchdogLabel, got {self.label!r}")
        if not isinstance(self.exec_status, ExecStatus):
            raise InvariantViolation(f"exec_status must be an ExecStatus, got {self.exec_status!r}")
        if isinstance(self.confidence, bool) or not isinstance(self.confidence, (int, float)):
            raise InvariantViolation(f"confidence must be a number, got {self.confidence!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvariantViolation(f"confidence out of [0, 1]: {self.confidence!r}")
        object.__setattr__(self, "confidence", round(float(self.confidence), 6))
        _check_timestamp(self.timestamp_ms)
        if not isinstance(self.debug, Mapping):
            raise InvariantViolation("debug must be a mapping")
        if len(self.debug) > MAX_DEBUG_ENTRIES:
            raise InvariantViolation(f"debug map exceeds {MAX_DEBUG_ENTRIES} entries")
        for k, v in self.debug.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise InvariantViolation("debug keys and values must be strings")
        object.__setattr__(self, "debug", dict(self.debug))


@dataclass(frozen=True, slots=True)
class DecisionEvent:
    """Policy decision paired with an outcome (or standing alone for
    no-target and operator-stop cases)."""

    trial_id: str
    attempt: int
    action: DecisionAction
    rationale: RationaleCode
    remaining_retries: int
    timestamp_ms: int

    def __post_init__(self) -> None:
        _check_trial_id(self.trial_id)
        _check_attempt(self.attempt)
        if not isinstance(self.action, DecisionAction):
            raise InvariantViolation(f"action must be a DecisionAction, got {self.action!r}")
        if not isinstance(self.rationale, RationaleCode):
            raise InvariantViolation(f"rationale must be a RationaleCode, got {self.rationale!r}")
        if (
            not isinstance(self.remaining_retries, int)
            or isinstance(self.remaining_retries, bool)
            or self.remaining_retries < 0
        ):
            raise InvariantViolation(
                f"remaining_retries must be a non-negative int, got {self.remaining_retries!r}"
            )
        _check_timestamp(self.timestamp_ms)


@dataclass(frozen=True, slots=True)
class GoalEvent:
    """Active goal at a point in the trial. Emitted at trial start and
    whenever a clarification or revision changes the goal, so that a log
    replays to the full goal history."""

    trial_id: str
    attempt: int
    category: str
    color: str | None
    spatial: str | None
    raw_text: str
    source: str
    timestamp_ms: int

    def __post_init__(self) -> None:
        _check_trial_id(self.trial_id)
        _check_attempt(self.attempt)
        if not isinstance(self.category, str) or not self.category:
            raise InvariantViolation("goal category must be a non-empty string")
        if self.color is not None and not isinstance(self.color, str):
            raise InvariantViolation("goal color must be a string or None")
        if self.spatial is not None and self.spatial not in SPATIAL_WORDS:
            raise InvariantViolation(f"spatial qualifier outside closed set: {self.spatial!r}")
        if not isinstance(self.raw_text, str):
            raise InvariantViolation("raw_text must be a string")
        if self.source not in GOAL_SOURCES:
            raise InvariantViolation(f"goal source outside closed set: {self.source!r}")
        _check_timestamp(self.timestamp_ms)


@dataclass(frozen=True, slots=True)
class RevisionEvent:
    """Marker appended when an operator revision is applied."""

    trial_id: str
    attempt: int
    instruction: str
    timestamp_ms: int

    def __post_init__(self) -> None:
        _check_trial_id(self.trial_id)
        _check_attempt(self.attempt)
        if not isinstance(self.instruction, str):
            raise InvariantViolation("instruction must be a string")
        _check_timestamp(self.timestamp_ms)


Event = OutcomeEvent | DecisionEvent | GoalEvent | RevisionEvent


def _kind_of(event: Event) -> str:
    if isinstance(event, OutcomeEvent):
        return KIND_OUTCOME
    if isinstance(event, DecisionEvent):
        return KIND_DECISION
    if isinstance(event, GoalEvent):
        return KIND_GOAL
    if isinstance(event, RevisionEvent):
        return KIND_REVISION
    raise InvariantViolation(f"not an event: {event!r}")


def event_to_dict(event: Event) -> dict[str, Any]:
    """Event as a plain dict in canonical field order."""
    kind = _kind_of(event)
    out: dict[str, Any] = {
        "trial_id": event.trial_id,
        "attempt": event.attempt,
        "kind": kind,
    }
    # Payload keys stay alphabetical within each kind.
    if isinstance(event, OutcomeEvent):
        out["confidence"] = event.confidence
        out["debug"] = dict(sorted(event.debug.items()))
        out["exec_status"] = event.exec_status.value
        out["label"] = event.label.value
    elif isinstance(event, DecisionEvent):
        out["action"] = event.action.value
        out["rationale"] = event.rationale.value
        out["remaining_retries"] = event.remaining_retries
    elif isinstance(event, GoalEvent):
        out["category"] = event.category
        out["color"] = event.color
        out["raw_text"] = event.raw_text
        out["source"] = event.source
        out["spatial"] = event.spatial
    else:
        out["instruction"] = event.instruction
    out["timestamp_ms"] = event.timestamp_ms
    out["v"] = SCHEMA_VERSION
    return out


def encode_event(event: Event) -> bytes:
    """Serialize one event to a canonical JSON line (with trailing newline).

    Raises
    ------
    InvariantViolation
        If the value is not an event. Field invariants are enforced at
        construction time, so any instance that exists encodes cleanly.
    """
    payload = event_to_dict(event)
    return (json.dumps(payload, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


_COMMON_KEYS = ("trial_id", "attempt", "kind", "timestamp_ms", "v")
_KIND_KEYS: dict[str, frozenset[str]] = {
    KIND_OUTCOME: frozenset(_COMMON_KEYS) | {"confidence", "debug", "exec_status", "label"},
    KIND_DECISION: frozenset(_COMMON_KEYS) | {"action", "rationale", "remaining_retries"},
    KIND_GOAL: frozenset(_COMMON_KEYS) | {"category", "color", "raw_text", "source", "spatial"},
    KIND_REVISION: frozenset(_COMMON_KEYS) | {"instruction"},
}


def _field_offset(line: bytes, name: str) -> int:
    pos = line.find(f'"{name}"'.encode("utf-8"))
    return pos if pos >= 0 else 0


def _require_int(obj: Mapping[str, Any], name: str, line: bytes) -> int:
    value = obj.get(name)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ParseError(f"field {name!r} must be an integer", _field_offset(line, name))
    return value


def _require_str(obj: Mapping[str, Any], name: str, line: bytes) -> str:
    value = obj.get(name)
    if not isinstance(value, str):
        raise ParseError(f"field {name!r} must be a string", _field_offset(line, name))
    return value


def decode_event(line: bytes | str) -> Event:
    """Parse one canonical JSON line back into an event.

    Strict: unknown fields, missing fields, wrong types, out-of-range
    values, and any label/action/status outside its enumeration are all
    rejected.

    Raises
    ------
    ParseError
        Malformed JSON or schema violation; carries a byte offset.
    UnknownLabel
        A label, action, or status outside the closed sets.
    """
    raw = line.encode("utf-8") if isinstance(line, str) else line
    try:
        obj = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc}", exc.start) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", exc.pos) from exc
    if not isinstance(obj, dict):
        raise ParseError("event line must be a JSON object")

    kind = obj.get("kind")
    if kind not in _KIND_KEYS:
        raise ParseError(f"unknown event kind: {kind!r}", _field_offset(raw, "kind"))
    expected = _KIND_KEYS[kind]
    actual = set(obj.keys())
    if actual - expected:
        extra = sorted(actual - expected)[0]
        raise ParseError(f"unknown field {extra!r} for kind {kind!r}", _field_offset(raw, extra))
    if expected - actual:
        missing = sorted(expected - actual)[0]
        raise ParseError(f"missing field {missing!r} for kind {kind!r}")

    version = _require_int(obj, "v", raw)
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema version: {version}", _field_offset(raw, "v"))

    trial_id = _require_str(obj, "trial_id", raw)
    attempt = _require_int(obj, "attempt", raw)
    timestamp_ms = _require_int(obj, "timestamp_ms", raw)

    try:
        if kind == KIND_OUTCOME:
            label_raw = _require_str(obj, "label", raw)
            try:
                label = WatchdogLabel(label_raw)
            except ValueError:
                raise UnknownLabel(
                    f"label outside the six-value set: {label_raw!r}",
                    _field_offset(raw, "label"),
                ) from None
            status_raw = _require_str(obj, "exec_status", raw)
            try:
                status = ExecStatus(status_raw)
            except ValueError:
                raise UnknownLabel(
                    f"exec_status outside the closed set: {status_raw!r}",
                    _field_offset(raw, "exec_status"),
                ) from None
            confidence = obj.get("confidence")
            if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
                raise ParseError("field 'confidence' must be a number", _field_offset(raw, "confidence"))
            if round(float(confidence), 6) != float(confidence):
                raise ParseError(
                    "confidence carries more than six decimal places",
                    _field_offset(raw, "confidence"),
                )
            debug = obj.get("debug")
            if not isinstance(debug, dict):
                raise ParseError("field 'debug' must be an object", _field_offset(raw, "debug"))
            return OutcomeEvent(
                trial_id=trial_id,
                attempt=attempt,
                label=label,
                exec_status=status,
                confidence=float(confidence),
                timestamp_ms=timestamp_ms,
                debug=debug,
            )
        if kind == KIND_DECISION:
            action_raw = _require_str(obj, "action", raw)
            try:
                action = DecisionAction(action_raw)
            except ValueError:
                raise UnknownLabel(
                    f"action outside the closed set: {action_raw!r}",
                    _field_offset(raw, "action"),
                ) from None
            rationale_raw = _require_str(obj, "rationale", raw)
            try:
                rationale = RationaleCode(rationale_raw)
            except ValueError:
                raise UnknownLabel(
                    f"rationale outside the closed set: {rationale_raw!r}",
                    _field_offset(raw, "rationale"),
                ) from None
            return DecisionEvent(
                trial_id=trial_id,
                attempt=attempt,
                action=action,
                rationale=rationale,
                remaining_retries=_require_int(obj, "remaining_retries", raw),
                timestamp_ms=timestamp_ms,
            )
        if kind == KIND_GOAL:
            color = obj.get("color")
            if color is not None and not isinstance(color, str):
                raise ParseError("field 'color' must be a string or null", _field_offset(raw, "color"))
            spatial = obj.get("spatial")
            if spatial is not None and not isinstance(spatial, str):
                raise ParseError("field 'spatial' must be a string or null", _field_offset(raw, "spatial"))
            return GoalEvent(
                trial_id=trial_id,
                attempt=attempt,
                category=_require_str(obj, "category", raw),
                color=color,
                spatial=spatial,
                raw_text=_require_str(obj, "raw_text", raw),
                source=_require_str(obj, "source", raw),
                timestamp_ms=timestamp_ms,
            )
        return RevisionEvent(
            trial_id=trial_id,
            attempt=attempt,
            instruction=_require_str(obj, "instruction", raw),
            timestamp_ms=timestamp_ms,
        )
    except InvariantViolation as exc:
        raise ParseError(str(exc)) from exc


def encode_log(events: list[Event]) -> bytes:
    """Serialize a sequence of events to newline-delimited JSON."""
    return b"".join(encode_event(e) for e in events)


def decode_log(data: bytes | str) -> list[Event]:
    """Parse a whole newline-delimited log. ParseError offsets refer to
    positions in ``data``, not in the failing line."""
    return list(iter_decode_log(data))


def iter_decode_log(data: bytes | str) -> Iterator[Event]:
    raw = data.encode("utf-8") if isinstance(data, str) else data
    offset = 0
    for line in raw.split(b"\n"):
        if line.strip():
            try:
                yield decode_event(line)
            except ParseError as exc:
                exc.offset += offset
                raise
        offset += len(line) + 1
