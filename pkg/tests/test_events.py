"""Schema and codec tests for the event module."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grasploop.events import (
    DecisionAction,
    DecisionEvent,
    ExecStatus,
    GoalEvent,
    InvariantViolation,
    OutcomeEvent,
    ParseError,
    RationaleCode,
    RevisionEvent,
    UnknownLabel,
    WatchdogLabel,
    decode_event,
    decode_log,
    derive_exec_status,
    encode_event,
    encode_log,
    new_trial_id,
)

TID = new_trial_id(1, 0xDEADBEEF)


def make_outcome(**kw) -> OutcomeEvent:
    base = dict(
        trial_id=TID,
        attempt=1,
        label=WatchdogLabel.EMPTY,
        exec_status=ExecStatus.FAIL,
        confidence=0.93,
        timestamp_ms=4120,
        debug={"peak_effort": "0.12"},
    )
    base.update(kw)
    return OutcomeEvent(**base)


def make_decision(**kw) -> DecisionEvent:
    base = dict(
        trial_id=TID,
        attempt=1,
        action=DecisionAction.RETRY_RESELECT,
        rationale=RationaleCode.EMPTY_BUDGET_REMAINING,
        remaining_retries=0,
        timestamp_ms=4125,
    )
    base.update(kw)
    return DecisionEvent(**base)


class TestTrialId:
    def test_format(self):
        assert new_trial_id(1, 0xDEADBEEF) == "T-000001-deadbeef"
        assert new_trial_id(42, 7) == "T-000042-00000007"

    def test_counter_bounds(self):
        with pytest.raises(InvariantViolation):
            new_trial_id(0, 1)
        with pytest.raises(InvariantViolation):
            new_trial_id(1_000_000, 1)

    def test_large_seed_masked(self):
        assert new_trial_id(3, 0x1_DEAD_BEEF).endswith("deadbeef")


class TestDerivation:
    def test_success_requires_both(self):
        assert (
            derive_exec_status(WatchdogLabel.SUCCESS, DecisionAction.FINALIZE)
            is ExecStatus.SUCCESS
        )

    def test_wait_clarify_wins(self):
        for label in WatchdogLabel:
            assert (
                derive_exec_status(label, DecisionAction.WAIT_CLARIFY)
                is ExecStatus.WAIT_CLARIFY
            )

    def test_everything_else_fails(self):
        assert derive_exec_status(WatchdogLabel.SLIP, DecisionAction.FINALIZE) is ExecStatus.FAIL
        assert (
            derive_exec_status(WatchdogLabel.EMPTY, DecisionAction.RETRY_RESELECT)
            is ExecStatus.FAIL
        )
        assert (
            derive_exec_status(WatchdogLabel.SUCCESS, DecisionAction.RETRY_RESELECT)
            is ExecStatus.FAIL
        )


class TestFieldInvariants:
    def test_attempt_must_be_positive(self):
        with pytest.raises(InvariantViolation):
            make_outcome(attempt=0)

    def test_confidence_bounds(self):
        with pytest.raises(InvariantViolation):
            make_outcome(confidence=1.2)
        with pytest.raises(InvariantViolation):
            make_outcome(confidence=-0.1)

    def test_confidence_quantized_on_construction(self):
        e = make_outcome(confidence=0.12345678)
        assert e.confidence == 0.123457

    def test_debug_size_cap(self):
        with pytest.raises(InvariantViolation):
            make_outcome(debug={f"k{i}": "v" for i in range(17)})
        make_outcome(debug={f"k{i}": "v" for i in range(16)})

    def test_debug_types(self):
        with pytest.raises(InvariantViolation):
            make_outcome(debug={"k": 3})

    def test_trial_id_shape(self):
        with pytest.raises(InvariantViolation):
            make_outcome(trial_id="trial-1")

    def test_negative_timestamp(self):
        with pytest.raises(InvariantViolation):
            make_decision(timestamp_ms=-1)

    def test_negative_remaining_retries(self):
        with pytest.raises(InvariantViolation):
            make_decision(remaining_retries=-1)


class TestEncoding:
    def test_outcome_field_order(self):
        line = encode_event(make_outcome()).decode()
        keys = list(json.loads(line).keys())
        assert keys == [
            "trial_id",
            "attempt",
            "kind",
            "confidence",
            "debug",
            "exec_status",
            "label",
            "timestamp_ms",
            "v",
        ]

    def test_decision_field_order(self):
        line = encode_event(make_decision()).decode()
        keys = list(json.loads(line).keys())
        assert keys == [
            "trial_id",
            "attempt",
            "kind",
            "action",
            "rationale",
            "remaining_retries",
            "timestamp_ms",
            "v",
        ]

    def test_compact_and_newline_terminated(self):
        line = encode_event(make_decision())
        assert line.endswith(b"\n")
        assert b": " not in line and b", " not in line

    def test_debug_keys_sorted(self):
        e = make_outcome(debug={"z": "1", "a": "2"})
        body = json.loads(encode_event(e).decode())
        assert list(body["debug"].keys()) == ["a", "z"]

    def test_equal_events_equal_bytes(self):
        assert encode_event(make_outcome()) == encode_event(make_outcome())


class TestDecoding:
    def test_round_trip_examples(self):
        for e in (
            make_outcome(),
            make_decision(),
            GoalEvent(TID, 1, "cup", "red", "LEFT", "grasp the red cup", "initial", 10),
            RevisionEvent(TID, 2, "actually the green cup", 5200),
        ):
            assert decode_event(encode_event(e)) == e

    def test_unknown_label_rejected(self):
        line = encode_event(make_outcome()).replace(b"EMPTY", b"DROPPED")
        with pytest.raises(UnknownLabel):
            decode_event(line)

    def test_unknown_action_rejected(self):
        line = encode_event(make_decision()).replace(b"RETRY_RESELECT", b"SHRUG")
        with pytest.raises(UnknownLabel):
            decode_event(line)

    def test_unknown_field_rejected(self):
        body = json.loads(encode_event(make_decision()).decode())
        body["note"] = "hi"
        with pytest.raises(ParseError, match="unknown field"):
            decode_event(json.dumps(body))

    def test_missing_field_rejected(self):
        body = json.loads(encode_event(make_decision()).decode())
        del body["rationale"]
        with pytest.raises(ParseError, match="missing field"):
            decode_event(json.dumps(body))

    def test_malformed_json_offset(self):
        with pytest.raises(ParseError) as exc:
            decode_event(b'{"trial_id": }')
        assert exc.value.offset == 13

    def test_wrong_version_rejected(self):
        line = encode_event(make_decision()).replace(b'"v":1', b'"v":2')
        with pytest.raises(ParseError, match="version"):
            decode_event(line)

    def test_bool_not_accepted_as_int(self):
        body = json.loads(encode_event(make_decision()).decode())
        body["attempt"] = True
        with pytest.raises(ParseError):
            decode_event(json.dumps(body))

    def test_overlong_confidence_rejected(self):
        line = encode_event(make_outcome()).replace(b"0.93", b"0.1234567")
        with pytest.raises(ParseError, match="six decimal"):
            decode_event(line)

    def test_log_round_trip_and_offsets(self):
        events = [make_outcome(), make_decision(attempt=1)]
        data = encode_log(events)
        assert decode_log(data) == events
        bad = data + b'{"kind":"outcome"}\n'
        with pytest.raises(ParseError) as exc:
            decode_log(bad)
        assert exc.value.offset >= len(data)


LABELS = list(WatchdogLabel)
ACTIONS = list(DecisionAction)
RATIONALES = list(RationaleCode)

debug_maps = st.dictionaries(
    st.text(min_size=1, max_size=12),
    st.text(max_size=20),
    max_size=16,
)

outcomes = st.builds(
    OutcomeEvent,
    trial_id=st.builds(new_trial_id, st.integers(1, 999_999), st.integers(0, 2**64 - 1)),
    attempt=st.integers(1, 50),
    label=st.sampled_from(LABELS),
    exec_status=st.sampled_from(list(ExecStatus)),
    confidence=st.integers(0, 10**6).map(lambda n: n / 10**6),
    timestamp_ms=st.integers(0, 10**9),
    debug=debug_maps,
)

decisions = st.builds(
    DecisionEvent,
    trial_id=st.builds(new_trial_id, st.integers(1, 999_999), st.integers(0, 2**64 - 1)),
    attempt=st.integers(1, 50),
    action=st.sampled_from(ACTIONS),
    rationale=st.sampled_from(RATIONALES),
    remaining_retries=st.integers(0, 5),
    timestamp_ms=st.integers(0, 10**9),
)


class TestRoundTripProperties:
    @settings(max_examples=300, deadline=None)
    @given(outcomes)
    def test_outcome_round_trip(self, event):
        assert decode_event(encode_event(event)) == event

    @settings(max_examples=300, deadline=None)
    @given(decisions)
    def test_decision_round_trip(self, event):
        assert decode_event(encode_event(event)) == event

    def test_bulk_randomized_round_trip(self):
        rng = random.Random(20240817)
        for i in range(2_000):
            if rng.random() < 0.5:
                e = OutcomeEvent(
                    trial_id=new_trial_id(rng.randint(1, 999_999), rng.getrandbits(64)),
                    attempt=rng.randint(1, 9),
                    label=rng.choice(LABELS),
                    exec_status=rng.choice(list(ExecStatus)),
                    confidence=round(rng.random(), 6),
                    timestamp_ms=rng.randint(0, 10**8),
                    debug={f"k{j}": str(rng.random()) for j in range(rng.randint(0, 16))},
                )
            else:
                e = DecisionEvent(
                    trial_id=new_trial_id(rng.randint(1, 999_999), rng.getrandbits(64)),
                    attempt=rng.randint(1, 9),
                    action=rng.choice(ACTIONS),
                    rationale=rng.choice(RATIONALES),
                    remaining_retries=rng.randint(0, 3),
                    timestamp_ms=rng.randint(0, 10**8),
                )
            assert decode_event(encode_event(e)) == e
