"""Streaming classifier that turns gripper telemetry into a discrete
outcome label.

The watchdog consumes one telemetry sample at a time (aperture, motor
effort, lift height, execution phase) and emits exactly one estimate per
attempt, one of SUCCESS, EMPTY, SLIP, WEAK, STALL, or TIMEOUT. Raw
signals are smoothed with an exponential moving average before any
threshold is applied, and a label is only emitted after the same
candidate has held for a full settle window of consecutive samples. The
two exceptions are TIMEOUT, which fires immediately when the attempt
budget expires, and the end-of-stream backstop, which reports TIMEOUT
for a trace that ends without any terminal signature.

Label signatures, in the priority order they are evaluated:

* SLIP: contact was established, and during LIFT the smoothed effort
  falls below ``slip_drop_ratio`` times its post-contact peak while the
  aperture keeps closing (positive rate in both the smoothed and the
  raw signal). Requiring visible creep on the raw channel keeps a
  momentary effort drop, or the smoothing lag recovering from a burst
  of bad samples, from reading as a slip.
* EMPTY: from CLOSE onward the smoothed aperture sits at or above
  ``empty_aperture_min`` with smoothed effort below ``contact_effort_min``
  (the jaws closed on nothing). A pending SUCCESS whose micro-lift
  check came back CONTACT_ONLY is demoted to EMPTY through this path.
* SUCCESS: contact plus a CONFIRMED micro-lift check, and during LIFT
  (past a small height gate) the effort stays above the weak band in
  both smoothed and raw form while the aperture holds below the empty
  threshold. The raw-side gate keeps a short burst of corrupted
  samples from dragging the smoothed signal across the band boundary
  long enough to fake a grasp.
* WEAK: post-contact effort inside ``weak_band`` during MICRO_LIFT or
  LIFT, in both smoothed and raw form; a smoothed transit through the
  band on the way to or from a strong grip never accumulates. The band
  is closed on both ends, so effort at exactly the upper edge still
  reads WEAK.
* STALL: the raw rates of aperture, effort, and lift all stay below
  ``stall_derivative_eps`` for at least ``stall_window_s`` during or
  after CLOSE, with no other signature present. The raw stream is the
  right place to look for a freeze: a stalled actuator is exactly
  constant there, while the smoothed signal drags its own convergence
  transient around. Approach-phase dwell is deliberately excluded; a
  stuck approach is the budget's problem.

Confidence is the fraction of the settle window in which the raw,
unsmoothed cues agreed with the emitted label, so a noiseless trace
emits with confidence 1.0 and heavily smoothed-over noise shows up as
reduced confidence rather than a different label.
"""

from __future__ import annotations

import io
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple


class Phase(str, Enum):
    """Scripted execution phases of one grasp attempt, in order."""

    APPROACH = "APPROACH"
    CLOSE = "CLOSE"
    MICRO_LIFT = "MICRO_LIFT"
    LIFT = "LIFT"


_PHASE_ORDER = {
    Phase.APPROACH.value: 0,
    Phase.CLOSE.value: 1,
    Phase.MICRO_LIFT.value: 2,
    Phase.LIFT.value: 3,
}

PHASE_NAMES = tuple(p.value for p in Phase)


class TelemetrySample(NamedTuple):
    """One gripper reading. ``aperture`` is normalized closure in [0, 1]
    (1 means fully closed), ``effort`` normalized motor torque in
    [0, 1.5], ``lift`` height above the grasp plane in meters, ``phase``
    the scripted phase name."""

    t: float
    aperture: float
    effort: float
    lift: float
    phase: str


@dataclass(frozen=True, slots=True)
class TelemetryTrace:
    """A finite, time-ordered sample sequence for one attempt."""

    samples: tuple[TelemetrySample, ...]
    sample_rate_hz: float = 30.0

    def duration_s(self) -> float:
        return self.samples[-1].t if self.samples else 0.0


class TraceError(ValueError):
    """A telemetry stream violates its format contract."""


class NonMonotonicTime(TraceError):
    """Sample timestamps regressed or repeated."""


class PhaseMissing(TraceError):
    """The micro-lift check was asked for before any MICRO_LIFT sample."""


def validate_trace(trace: TelemetryTrace) -> None:
    """Check ordering invariants: strictly increasing time, phases in
    APPROACH -> CLOSE -> MICRO_LIFT -> LIFT order, each contiguous."""
    last_t = -math.inf
    last_order = 0
    seen: set[str] = set()
    for s in trace.samples:
        if s.t <= last_t:
            raise NonMonotonicTime(f"t={s.t} after t={last_t}")
        order = _PHASE_ORDER.get(s.phase)
        if order is None:
            raise TraceError(f"unknown phase {s.phase!r}")
        if order < last_order:
            raise TraceError(f"phase {s.phase} after a later phase")
        if order > last_order and s.phase in seen:
            raise TraceError(f"phase {s.phase} is not contiguous")
        seen.add(s.phase)
        last_t = s.t
        last_order = order


class WeakBand(NamedTuple):
    low: float
    high: float


@dataclass(frozen=True, slots=True)
class WatchdogConfig:
    """Thresholds for the outcome classifier. Defaults are tuned for the
    simulated gripper at 30 Hz."""

    contact_effort_min: float = 0.35
    empty_aperture_min: float = 0.97
    weak_band: WeakBand = WeakBand(0.35, 0.55)
    slip_drop_ratio: float = 0.5
    stall_window_s: float = 1.5
    stall_derivative_eps: float = 0.005
    timeout_s: float = 12.0
    settle_window_samples: int = 15
    microlift_height_m: float = 0.02
    microlift_hold_effort: float = 0.30
    sample_rate_hz: float = 30.0
    smoothing_halflife_samples: float = 5.0

    def __post_init__(self) -> None:
        band = self.weak_band
        if not isinstance(band, WeakBand):
            object.__setattr__(self, "weak_band", WeakBand(*band))
            band = self.weak_band
        for name in (
            "contact_effort_min",
            "empty_aperture_min",
            "slip_drop_ratio",
            "stall_window_s",
            "stall_derivative_eps",
            "timeout_s",
            "microlift_height_m",
            "microlift_hold_effort",
            "sample_rate_hz",
            "smoothing_halflife_samples",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.settle_window_samples < 1:
            raise ValueError("settle_window_samples must be >= 1")
        if not band.low < band.high:
            raise ValueError("weak_band must satisfy low < high")

    def to_dict(self) -> dict:
        return {
            "contact_effort_min": self.contact_effort_min,
            "empty_aperture_min": self.empty_aperture_min,
            "weak_band": [self.weak_band.low, self.weak_band.high],
            "slip_drop_ratio": self.slip_drop_ratio,
            "stall_window_s": self.stall_window_s,
            "stall_derivative_eps": self.stall_derivative_eps,
            "timeout_s": self.timeout_s,
            "settle_window_samples": self.settle_window_samples,
            "microlift_height_m": self.microlift_height_m,
            "microlift_hold_effort": self.microlift_hold_effort,
            "sample_rate_hz": self.sample_rate_hz,
            "smoothing_halflife_samples": self.smoothing_halflife_samples,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WatchdogConfig":
        kwargs = dict(data)
        if "weak_band" in kwargs:
            kwargs["weak_band"] = WeakBand(*kwargs["weak_band"])
        return cls(**kwargs)


class MicroliftResult(str, Enum):
    CONFIRMED = "CONFIRMED"
    CONTACT_ONLY = "CONTACT_ONLY"


@dataclass(frozen=True, slots=True)
class OutcomeEstimate:
    """The watchdog's single verdict for one attempt."""

    label: "WatchdogLabelStr"
    confidence: float
    t_emit: float
    evidence: dict[str, float] = field(default_factory=dict)


# Labels are shared with the event schema; the string values are the
# contract, so the watchdog works in plain strings internally.
LABEL_SUCCESS = "SUCCESS"
LABEL_EMPTY = "EMPTY"
LABEL_SLIP = "SLIP"
LABEL_WEAK = "WEAK"
LABEL_STALL = "STALL"
LABEL_TIMEOUT = "TIMEOUT"

WatchdogLabelStr = str

_BIT = {
    LABEL_SUCCESS: 1,
    LABEL_EMPTY: 2,
    LABEL_SLIP: 4,
    LABEL_WEAK: 8,
    LABEL_STALL: 16,
    LABEL_TIMEOUT: 32,
}

# Aperture must visibly keep closing for SLIP; "visibly" is twice the
# stall dead-band so the two rules cannot both claim the same freeze.
_SLIP_CREEP_RATE_FACTOR = 2.0
# SUCCESS is only credited once the lift has cleared a few micro-lift
# heights, which keeps the label from firing before a slip can show.
_SUCCESS_LIFT_GATE_FACTOR = 3.0


class Watchdog:
    """Streaming outcome classifier for a single grasp attempt.

    Feed samples with :meth:`ingest_sample`; poll :meth:`emit_outcome`
    for the verdict. Call :meth:`finish` when the stream ends to get the
    TIMEOUT backstop for traces with no terminal signature. The instance
    is reusable across attempts via :meth:`reset`.
    """

    __slots__ = (
        "cfg",
        "_alpha",
        "_settle_n",
        "_creep_eps",
        "_lift_gate",
        "_n",
        "_t",
        "_prev_t",
        "_raw_ap",
        "_raw_eff",
        "_raw_lift",
        "_prev_raw_ap",
        "_prev_raw_eff",
        "_prev_raw_lift",
        "_sm_ap",
        "_sm_eff",
        "_prev_sm_ap",
        "_prev_sm_eff",
        "_phase_order",
        "_contact",
        "_peak_eff",
        "_peak_ap",
        "_microlift_seen",
        "_microlift_done",
        "_microlift_trough",
        "_stall_clock",
        "_cand",
        "_streak",
        "_streak_start_t",
        "_agree",
        "_emitted",
    )

    def __init__(self, cfg: WatchdogConfig | None = None) -> None:
        self.cfg = cfg or WatchdogConfig()
        self._alpha = 1.0 - 2.0 ** (-1.0 / self.cfg.smoothing_halflife_samples)
        self._settle_n = self.cfg.settle_window_samples
        self._creep_eps = _SLIP_CREEP_RATE_FACTOR * self.cfg.stall_derivative_eps
        self._lift_gate = _SUCCESS_LIFT_GATE_FACTOR * self.cfg.microlift_height_m
        self.reset()

    def reset(self) -> None:
        self._n = 0
        self._t = 0.0
        self._prev_t = 0.0
        self._raw_ap = 0.0
        self._raw_eff = 0.0
        self._raw_lift = 0.0
        self._prev_raw_ap = 0.0
        self._prev_raw_eff = 0.0
        self._prev_raw_lift = 0.0
        self._sm_ap = 0.0
        self._sm_eff = 0.0
        self._prev_sm_ap = 0.0
        self._prev_sm_eff = 0.0
        self._phase_order = 0
        self._contact = False
        self._peak_eff = 0.0
        self._peak_ap = 0.0
        self._microlift_seen = False
        self._microlift_done = False
        self._microlift_trough = math.inf
        self._stall_clock = 0.0
        self._cand: str | None = None
        self._streak = 0
        self._streak_start_t = 0.0
        self._agree: deque[int] = deque(maxlen=self._settle_n)
        self._emitted: OutcomeEstimate | None = None

    # The hot path. Everything here is O(1) with no allocation beyond
    # one int pushed into a bounded deque.
    def ingest_sample(self, sample: TelemetrySample) -> None:
        if self._emitted is not None:
            return
        cfg = self.cfg
        t = sample.t
        n = self._n
        if n and t <= self._t:
            raise NonMonotonicTime(f"t={t} after t={self._t}")
        phase_order = _PHASE_ORDER.get(sample.phase)
        if phase_order is None:
            raise TraceError(f"unknown phase {sample.phase!r}")
        if phase_order < self._phase_order:
            raise TraceError(f"phase {sample.phase} after a later phase")

        ap = sample.aperture
        eff = sample.effort
        alpha = self._alpha
        if n == 0:
            sm_ap = ap
            sm_eff = eff
            dt = 1.0 / cfg.sample_rate_hz
            self._prev_raw_ap = ap
            self._prev_raw_eff = eff
            self._prev_raw_lift = sample.lift
            self._prev_sm_ap = sm_ap
            self._prev_sm_eff = sm_eff
        else:
            dt = t - self._t
            self._prev_raw_ap = self._raw_ap
            self._prev_raw_eff = self._raw_eff
            self._prev_raw_lift = self._raw_lift
            self._prev_sm_ap = self._sm_ap
            self._prev_sm_eff = self._sm_eff
            sm_ap = self._prev_sm_ap + alpha * (ap - self._prev_sm_ap)
            sm_eff = self._prev_sm_eff + alpha * (eff - self._prev_sm_eff)
        inv_dt = 1.0 / dt
        sm_ap_rate = (sm_ap - self._prev_sm_ap) * inv_dt
        sm_eff_rate = (sm_eff - self._prev_sm_eff) * inv_dt
        raw_ap_rate = (ap - self._prev_raw_ap) * inv_dt
        raw_eff_rate = (eff - self._prev_raw_eff) * inv_dt
        raw_lift_rate = (sample.lift - self._prev_raw_lift) * inv_dt

        self._n = n + 1
        self._prev_t = self._t
        self._t = t
        self._raw_ap = ap
        self._raw_eff = eff
        self._raw_lift = sample.lift
        self._sm_ap = sm_ap
        self._sm_eff = sm_eff
        self._phase_order = phase_order

        in_close_or_later = phase_order >= 1
        if in_close_or_later and sm_eff >= cfg.contact_effort_min:
            self._contact = True
        if self._contact and sm_eff > self._peak_eff:
            self._peak_eff = sm_eff
            self._peak_ap = sm_ap

        if phase_order == 2:
            self._microlift_seen = True
            if sm_eff < self._microlift_trough:
                self._microlift_trough = sm_eff
        elif phase_order == 3 and self._microlift_seen:
            self._microlift_done = True

        # The freeze clock reads raw rates: a stalled actuator is
        # constant in the raw stream, while the smoothed signal keeps a
        # convergence transient of its own that would mask the freeze.
        # The lift axis counts as motion too; a gripper riding a moving
        # arm is not stalled however steady its grip channels are.
        eps = cfg.stall_derivative_eps
        if (
            in_close_or_later
            and -eps < raw_ap_rate < eps
            and -eps < raw_eff_rate < eps
            and -eps < raw_lift_rate < eps
        ):
            self._stall_clock += dt
        else:
            self._stall_clock = 0.0

        # TIMEOUT bypasses the settle window entirely.
        if t >= cfg.timeout_s:
            self._emitted = OutcomeEstimate(
                label=LABEL_TIMEOUT,
                confidence=1.0,
                t_emit=t,
                evidence={"elapsed_s": round(t, 6)},
            )
            return

        band_low, band_high = cfg.weak_band
        contact = self._contact
        contact_only = self._microlift_done and self._microlift_trough < cfg.microlift_hold_effort

        cand: str | None
        if (
            contact
            and phase_order == 3
            and sm_eff < cfg.slip_drop_ratio * self._peak_eff
            and sm_ap_rate > self._creep_eps
            and raw_ap_rate > self._creep_eps
        ):
            cand = LABEL_SLIP
        elif in_close_or_later and sm_ap >= cfg.empty_aperture_min and sm_eff < cfg.contact_effort_min:
            cand = LABEL_EMPTY
        elif contact and contact_only:
            cand = LABEL_EMPTY
        elif (
            contact
            and self._microlift_done
            and phase_order == 3
            and sample.lift >= self._lift_gate
            and sm_eff > band_high
            and eff > band_high
            and sm_ap < cfg.empty_aperture_min
        ):
            cand = LABEL_SUCCESS
        elif (
            contact
            and phase_order >= 2
            and band_low <= sm_eff <= band_high
            and band_low <= eff <= band_high
        ):
            # Raw must sit in the band too: a smoothed transit through
            # the band on its way somewhere else never counts.
            cand = LABEL_WEAK
        elif in_close_or_later and self._stall_clock >= cfg.stall_window_s:
            cand = LABEL_STALL
        else:
            cand = None

        # Raw-cue agreement bitmask for the confidence computation.
        mask = _BIT[LABEL_TIMEOUT]
        if band_high < eff and ap < cfg.empty_aperture_min:
            mask |= _BIT[LABEL_SUCCESS]
        if eff < cfg.contact_effort_min and (ap >= cfg.empty_aperture_min or contact_only):
            mask |= _BIT[LABEL_EMPTY]
        if contact and eff < cfg.slip_drop_ratio * self._peak_eff and raw_ap_rate > self._creep_eps:
            mask |= _BIT[LABEL_SLIP]
        if band_low <= eff <= band_high:
            mask |= _BIT[LABEL_WEAK]
        if -eps < raw_ap_rate < eps and -eps < raw_eff_rate < eps and -eps < raw_lift_rate < eps:
            mask |= _BIT[LABEL_STALL]
        self._agree.append(mask)

        if cand is None:
            self._cand = None
            self._streak = 0
            return
        if cand == self._cand:
            self._streak += 1
        else:
            self._cand = cand
            self._streak = 1
            self._streak_start_t = t
        if self._streak >= self._settle_n:
            self._emitted = self._build_estimate(cand)

    def candidate_label(self) -> str | None:
        """Instantaneous (unsettled) candidate, None when undecided."""
        return self._cand

    def emit_outcome(self) -> OutcomeEstimate | None:
        """The settled verdict, or None while still observing."""
        return self._emitted

    def finish(self) -> OutcomeEstimate:
        """Close the stream. A trace that ended with no settled verdict
        reports TIMEOUT: the attempt ran out of evidence, not labels."""
        if self._emitted is None:
            self._emitted = OutcomeEstimate(
                label=LABEL_TIMEOUT,
                confidence=1.0,
                t_emit=self._t,
                evidence={"elapsed_s": round(self._t, 6), "stream_ended": 1.0},
            )
        return self._emitted

    def microlift_check(self) -> MicroliftResult:
        """CONFIRMED when the smoothed effort held above
        ``microlift_hold_effort`` for every MICRO_LIFT sample seen so
        far, CONTACT_ONLY otherwise."""
        if not self._microlift_seen:
            raise PhaseMissing("no MICRO_LIFT samples ingested")
        if self._microlift_trough >= self.cfg.microlift_hold_effort:
            return MicroliftResult.CONFIRMED
        return MicroliftResult.CONTACT_ONLY

    def _build_estimate(self, label: str) -> OutcomeEstimate:
        bit = _BIT[label]
        agree = sum(1 for m in self._agree if m & bit)
        window = self._settle_n
        confidence = min(1.0, max(0.0, agree / window))
        evidence: dict[str, float] = {
            "elapsed_s": round(self._t, 6),
            "peak_effort": round(self._peak_eff, 6),
            "final_aperture": round(self._sm_ap, 6),
            "settle_samples": float(window),
        }
        if self._microlift_seen and self._microlift_trough is not math.inf:
            evidence["microlift_trough"] = round(self._microlift_trough, 6)
        if label == LABEL_SLIP:
            evidence["drop_time_s"] = round(self._streak_start_t, 6)
        if label == LABEL_STALL:
            evidence["stall_s"] = round(self._stall_clock, 6)
        return OutcomeEstimate(
            label=label,
            confidence=round(confidence, 6),
            t_emit=self._t,
            evidence=evidence,
        )


def classify_trace(
    trace: TelemetryTrace | Iterable[TelemetrySample],
    cfg: WatchdogConfig | None = None,
) -> OutcomeEstimate:
    """Run the streaming classifier over a complete trace.

    Returns the emitted estimate; a trace that ends without one gets the
    TIMEOUT backstop, so every finite trace yields exactly one verdict.
    """
    wd = Watchdog(cfg)
    samples = trace.samples if isinstance(trace, TelemetryTrace) else trace
    for s in samples:
        wd.ingest_sample(s)
        if wd.emit_outcome() is not None:
            break
    return wd.finish()


def settle(candidates: Iterable[str | None], settle_n: int = 15) -> tuple[str, int] | None:
    """Reference debounce automaton over a candidate sequence.

    Returns (label, index of the emitting sample) for the first run of
    ``settle_n`` identical non-None candidates, or None when no run
    completes. ``ingest_sample`` applies exactly this rule to the
    candidates it computes, aside from the TIMEOUT bypass, which does
    not wait for a run.
    """
    current: str | None = None
    streak = 0
    for i, cand in enumerate(candidates):
        if cand is None:
            current = None
            streak = 0
            continue
        if cand == current:
            streak += 1
        else:
            current = cand
            streak = 1
        if streak >= settle_n:
            return cand, i
    return None


CSV_HEADER = "t,aperture,effort,lift,phase"


def write_trace_csv(trace: TelemetryTrace, fp) -> None:
    """Write a trace in the ``t,aperture,effort,lift,phase`` format."""
    fp.write(CSV_HEADER + "\n")
    for s in trace.samples:
        fp.write(f"{s.t!r},{s.aperture!r},{s.effort!r},{s.lift!r},{s.phase}\n")


def read_trace_csv(fp, sample_rate_hz: float = 30.0) -> TelemetryTrace:
    """Parse a trace CSV. Raises TraceError on bad headers, malformed
    rows, or ordering violations."""
    if isinstance(fp, str):
        fp = io.StringIO(fp)
    header = fp.readline().strip()
    if header != CSV_HEADER:
        raise TraceError(f"bad header: {header!r} (expected {CSV_HEADER!r})")
    samples: list[TelemetrySample] = []
    for lineno, line in enumerate(fp, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise TraceError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            t, ap, eff, lift = (float(x) for x in parts[:4])
        except ValueError as exc:
            raise TraceError(f"line {lineno}: {exc}") from exc
        phase = parts[4]
        if phase not in _PHASE_ORDER:
            raise TraceError(f"line {lineno}: unknown phase {phase!r}")
        samples.append(TelemetrySample(t, ap, eff, lift, phase))
    trace = TelemetryTrace(samples=tuple(samples), sample_rate_hz=sample_rate_hz)
    validate_trace(trace)
    return trace
