"""Deterministic tabletop simulation for grasp attempts.

The world is a small set of rigid objects on a desk in front of a
single-arm gripper at the origin. An attempt against a target object
produces a telemetry trace drawn from one of six archetypal shapes, one
per outcome label, plus optional per-sample Gaussian noise on aperture
and effort. Every random draw comes from a generator derived by hashing
(scene seed, purpose, target, attempt), so equal inputs reproduce equal
traces byte for byte, and the same underlying noise normals are reused
across noise levels, which makes error rates comparable across sigma.

Fault plans force outcomes per attempt; beyond the forced list the
physical outcome is a Bernoulli draw with success probability
``p_base``. A failed draw closes on air, which is exactly the EMPTY
archetype, so induced-fault experiments reduce to ``p_base = 1 - q``.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from enum import Enum

from .policy import SemanticVerdict
from .watchdog import Phase, TelemetrySample, TelemetryTrace

LABELS = ("SUCCESS", "EMPTY", "SLIP", "WEAK", "STALL", "TIMEOUT")
NONE_OUTCOME = "NONE"
FORCIBLE = ("EMPTY", "SLIP", "WEAK", "STALL", "TIMEOUT")

WORKSPACE_X = (-0.6, 0.6)
WORKSPACE_Y = (0.05, 0.8)

SAMPLE_RATE_HZ = 30.0
# EMA half-life the classifier applies; the generator mirrors it to
# place the success micro-lift dip just above the hold threshold.
_SMOOTH_ALPHA = 1.0 - 2.0 ** (-1.0 / 5.0)
_MICROLIFT_HOLD = 0.30
_DIP_TROUGH_TARGET = 0.315
_MICROLIFT_HEIGHT = 0.02
_LIFT_TOP = 0.25
_TIMEOUT_TRACE_S = 12.5


class SimWorldError(Exception):
    """Base class for simulation failures."""


class InvalidConfig(SimWorldError):
    """Scene configuration violates its invariants."""


class UnknownTarget(SimWorldError):
    """Grasp requested against an object id not present in the scene."""


class PerceptionMode(str, Enum):
    """How much goal conditioning the perception stack applies before
    the grasp primitive sees the scene."""

    NONE = "NONE"
    COLOR_FILTER = "COLOR_FILTER"
    INSTANCE_SELECT = "INSTANCE_SELECT"


@dataclass(frozen=True, slots=True)
class ObjectSpec:
    """One object in a scene configuration."""

    category: str
    color: str
    x: float
    y: float
    salient: bool = False


@dataclass(frozen=True, slots=True)
class SceneObject:
    """A spawned object with its scene-unique id."""

    object_id: int
    category: str
    color: str
    x: float
    y: float
    salient: bool = False

    def distance_to(self, other: "SceneObject") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True, slots=True)
class SceneConfig:
    """Full description of a spawnable scene.

    ``noise_sigma`` is the per-sample Gaussian std applied to effort and
    aperture. ``duration_scale`` shrinks approach/close/lift durations
    for Monte Carlo work; keep it at 1.0 whenever slow archetypes
    (SLIP, WEAK, STALL) can occur. ``distract_prob`` is the chance that
    the grasp primitive, seeing an unsuppressed salient non-target close
    to the target, grabs that distractor instead.
    """

    objects: tuple[ObjectSpec, ...]
    seed: int
    noise_sigma: float = 0.0
    verifier_error_rate: float = 0.0
    duration_scale: float = 1.0
    distract_prob: float = 0.0
    distract_radius_m: float = 0.15

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        if not self.objects:
            raise InvalidConfig("scene needs at least one object")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise_sigma must be >= 0")
        if not 0.0 <= self.verifier_error_rate <= 1.0:
            raise InvalidConfig("verifier_error_rate must be in [0, 1]")
        if not 0.05 <= self.duration_scale <= 4.0:
            raise InvalidConfig("duration_scale out of range")
        if not 0.0 <= self.distract_prob <= 1.0:
            raise InvalidConfig("distract_prob must be in [0, 1]")
        seen: set[tuple[float, float]] = set()
        for spec in self.objects:
            if not WORKSPACE_X[0] <= spec.x <= WORKSPACE_X[1]:
                raise InvalidConfig(f"x={spec.x} outside workspace")
            if not WORKSPACE_Y[0] <= spec.y <= WORKSPACE_Y[1]:
                raise InvalidConfig(f"y={spec.y} outside workspace")
            if (spec.x, spec.y) in seen:
                raise InvalidConfig(f"duplicate position ({spec.x}, {spec.y})")
            seen.add((spec.x, spec.y))


@dataclass(frozen=True, slots=True)
class FaultPlan:
    """Forced outcomes by attempt. ``forced[i]`` applies to attempt
    ``i + 1``; beyond the list the outcome is NONE, meaning a Bernoulli
    draw with success probability ``p_base``."""

    forced: tuple[str, ...] = ()
    p_base: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "forced", tuple(self.forced))
        for entry in self.forced:
            if entry != NONE_OUTCOME and entry not in FORCIBLE:
                raise InvalidConfig(f"unforcible outcome {entry!r}")
        if not 0.0 <= self.p_base <= 1.0:
            raise InvalidConfig("p_base must be in [0, 1]")

    def outcome_for(self, attempt: int) -> str:
        if 1 <= attempt <= len(self.forced):
            return self.forced[attempt - 1]
        return NONE_OUTCOME


@dataclass(frozen=True, slots=True)
class GraspResult:
    """What one attempt did: the telemetry it produced, the true
    outcome, and what ended up in the gripper (iff SUCCESS)."""

    trace: TelemetryTrace
    ground_truth: str
    grasped_object: int | None
    fault_injected: bool
    target: int
    attempt: int

    def __post_init__(self) -> None:
        if (self.grasped_object is not None) != (self.ground_truth == "SUCCESS"):
            raise InvalidConfig("grasped_object present iff ground_truth is SUCCESS")


def _derive_rng(*parts) -> random.Random:
    key = "|".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


class World:
    """A spawned scene plus the seeded streams that drive it."""

    def __init__(self, config: SceneConfig) -> None:
        self.config = config
        self.objects: tuple[SceneObject, ...] = tuple(
            SceneObject(i + 1, spec.category, spec.color, spec.x, spec.y, spec.salient)
            for i, spec in enumerate(config.objects)
        )
        self._by_id = {obj.object_id: obj for obj in self.objects}
        self._verify_rng = _derive_rng(config.seed, "verify")

    def object_by_id(self, object_id: int) -> SceneObject:
        try:
            return self._by_id[object_id]
        except KeyError:
            raise UnknownTarget(f"no object with id {object_id}") from None

    def execute_grasp(
        self,
        target: int,
        plan: FaultPlan,
        attempt: int,
        visible: tuple[SceneObject, ...] | None = None,
    ) -> GraspResult:
        """Run one grasp attempt against ``target``.

        ``visible`` is the object set the grasp primitive can see after
        perception conditioning; distraction by salient non-targets only
        happens among visible objects. Equal (config, plan, target,
        attempt, visible) always produce an identical result.
        """
        obj = self.object_by_id(target)
        if attempt < 1:
            raise InvalidConfig(f"attempt must be >= 1, got {attempt}")
        cfg = self.config
        shape_rng = _derive_rng(cfg.seed, "shape", target, attempt)
        noise_rng = _derive_rng(cfg.seed, "noise", target, attempt)

        forced = plan.outcome_for(attempt)
        if forced == NONE_OUTCOME:
            outcome = "SUCCESS" if shape_rng.random() < plan.p_base else "EMPTY"
            fault_injected = False
        else:
            shape_rng.random()
            outcome = forced
            fault_injected = True

        # Draw distraction unconditionally to keep the stream aligned
        # across perception modes.
        distract_draw = shape_rng.random()
        grasped: int | None = None
        if outcome == "SUCCESS":
            grasped = obj.object_id
            pool = self.objects if visible is None else visible
            lures = [
                o
                for o in pool
                if o.salient
                and o.object_id != obj.object_id
                and o.distance_to(obj) <= cfg.distract_radius_m
            ]
            if lures and distract_draw < cfg.distract_prob:
                grasped = min(lures, key=lambda o: (o.distance_to(obj), o.object_id)).object_id

        trace = generate_trace(
            outcome,
            shape_rng,
            noise_rng,
            sigma=cfg.noise_sigma,
            scale=cfg.duration_scale,
        )
        return GraspResult(
            trace=trace,
            ground_truth=outcome,
            grasped_object=grasped,
            fault_injected=fault_injected,
            target=target,
            attempt=attempt,
        )

    def verify_semantic(self, grasped_object: int | None, goal) -> SemanticVerdict:
        """Post-grasp check that the held object matches the goal's
        category and, when specified, color. A nonzero
        ``verifier_error_rate`` flips the verdict at that rate."""
        if grasped_object is None:
            verdict = SemanticVerdict.INCONSISTENT
        else:
            obj = self.object_by_id(grasped_object)
            ok = obj.category == goal.category and (goal.color is None or obj.color == goal.color)
            verdict = SemanticVerdict.CONSISTENT if ok else SemanticVerdict.INCONSISTENT
        if self.config.verifier_error_rate > 0.0:
            if self._verify_rng.random() < self.config.verifier_error_rate:
                verdict = (
                    SemanticVerdict.INCONSISTENT
                    if verdict is SemanticVerdict.CONSISTENT
                    else SemanticVerdict.CONSISTENT
                )
        return verdict


def spawn_scene(config: SceneConfig) -> World:
    """Build a world from a validated scene configuration."""
    return World(config)


def apply_perception_conditioning(world: World, goal, mode: PerceptionMode) -> tuple[SceneObject, ...]:
    """Objects left visible to the grasp primitive after conditioning.

    NONE passes the whole scene through. COLOR_FILTER suppresses
    objects whose color differs from the goal color (no-op without a
    color). INSTANCE_SELECT keeps only objects matching category and,
    when given, color.
    """
    if mode is PerceptionMode.NONE:
        return world.objects
    if mode is PerceptionMode.COLOR_FILTER:
        if goal.color is None:
            return world.objects
        return tuple(o for o in world.objects if o.color == goal.color)
    if mode is PerceptionMode.INSTANCE_SELECT:
        kept = tuple(
            o
            for o in world.objects
            if o.category == goal.category and (goal.color is None or o.color == goal.color)
        )
        return kept
    raise InvalidConfig(f"unknown perception mode {mode!r}")


# ---------------------------------------------------------------------------
# Trace synthesis
# ---------------------------------------------------------------------------


def _ema_last(values: list[float], start: float | None = None) -> float:
    sm = values[0] if start is None else start
    a = _SMOOTH_ALPHA
    for v in values:
        sm += a * (v - sm)
    return sm


def _dip_raw_level(s0: float, samples: int) -> float:
    """Raw effort level that leaves the smoothed micro-lift trough at
    the designed target, given the smoothed value entering the phase."""
    beta = (1.0 - _SMOOTH_ALPHA) ** samples
    raw = (_DIP_TROUGH_TARGET - s0 * beta) / (1.0 - beta)
    return max(0.02, raw)


class _TraceBuilder:
    __slots__ = ("rate", "t_index", "ts", "aps", "effs", "lifts", "phases")

    def __init__(self, rate: float) -> None:
        self.rate = rate
        self.t_index = 0
        self.ts: list[float] = []
        self.aps: list[float] = []
        self.effs: list[float] = []
        self.lifts: list[float] = []
        self.phases: list[str] = []

    def extend(self, phase: str, n: int, ap_fn, eff_fn, lift_fn) -> None:
        rate = self.rate
        for i in range(n):
            u = (i + 1) / n
            self.ts.append(self.t_index / rate)
            self.aps.append(ap_fn(u))
            self.effs.append(eff_fn(u))
            self.lifts.append(lift_fn(u))
            self.phases.append(phase)
            self.t_index += 1

    def build(self, noise_rng: random.Random, sigma: float) -> TelemetryTrace:
        aps = self.aps
        effs = self.effs
        if sigma > 0.0:
            gauss = noise_rng.gauss
            for i in range(len(aps)):
                ap = aps[i] + sigma * gauss(0.0, 1.0)
                eff = effs[i] + sigma * gauss(0.0, 1.0)
                aps[i] = 0.0 if ap < 0.0 else (1.0 if ap > 1.0 else ap)
                effs[i] = 0.0 if eff < 0.0 else (1.5 if eff > 1.5 else eff)
        samples = tuple(
            TelemetrySample(t, ap, eff, lift, phase)
            for t, ap, eff, lift, phase in zip(self.ts, aps, effs, self.lifts, self.phases)
        )
        return TelemetryTrace(samples=samples, sample_rate_hz=self.rate)


def _n_samples(duration_s: float, rate: float) -> int:
    return max(1, round(duration_s * rate))


def generate_trace(
    outcome: str,
    shape_rng: random.Random,
    noise_rng: random.Random,
    sigma: float = 0.0,
    scale: float = 1.0,
    rate: float = SAMPLE_RATE_HZ,
) -> TelemetryTrace:
    """Synthesize the archetypal trace for ``outcome``.

    Shape draws (durations, plateaus) come from ``shape_rng``; noise
    normals come from ``noise_rng`` and are scaled by ``sigma`` after
    the shape is fixed, so the same seed gives comparable traces at
    every noise level.
    """
    if outcome == "TIMEOUT":
        return _timeout_trace(shape_rng, noise_rng, sigma, rate)
    if outcome == "STALL":
        return _stall_trace(shape_rng, noise_rng, sigma, scale, rate)

    b = _TraceBuilder(rate)
    approach_s = shape_rng.uniform(1.0, 2.0) * scale
    close_s = shape_rng.uniform(0.8, 1.5) * scale
    # Micro-lift stays at full length and the lift keeps a floor at any
    # scale: the classifier's smoothing lag and settle window are fixed
    # sample counts, so the verdict must fit regardless of profile.
    micro_s = 0.5
    lift_s = max(shape_rng.uniform(2.4, 3.2) * scale, 1.6)

    approach_n = _n_samples(approach_s, rate)
    close_n = _n_samples(close_s, rate)
    micro_n = _n_samples(micro_s, rate)
    lift_n = _n_samples(lift_s, rate)

    b.extend(Phase.APPROACH.value, approach_n, lambda u: 0.0, lambda u: 0.0, lambda u: 0.12 * (1.0 - u))

    if outcome == "EMPTY":
        ap_top = shape_rng.uniform(0.985, 1.0)
        eff_bump = shape_rng.uniform(0.02, 0.08)
        # Jaws sweep to the closed limit; only friction shows on the motor.
        b.extend(
            Phase.CLOSE.value,
            close_n,
            lambda u: ap_top * min(1.0, u / 0.6),
            lambda u: eff_bump * (1.0 - abs(2.0 * min(u, 0.99) - 1.0)),
            lambda u: 0.0,
        )
        b.extend(
            Phase.MICRO_LIFT.value,
            micro_n,
            lambda u: ap_top,
            lambda u: 0.05,
            lambda u: _MICROLIFT_HEIGHT * u,
        )
        b.extend(
            Phase.LIFT.value,
            lift_n,
            lambda u: ap_top,
            lambda u: 0.05,
            lambda u: _MICROLIFT_HEIGHT + (_LIFT_TOP - _MICROLIFT_HEIGHT) * u,
        )
        return b.build(noise_rng, sigma)

    # Grasp-like archetypes share the close profile: jaws meet the
    # object, effort climbs late in the close.
    peak = shape_rng.uniform(0.85, 0.95)
    ap_hold = shape_rng.uniform(0.5, 0.7)
    if outcome == "WEAK":
        peak = shape_rng.uniform(0.40, 0.50)

    def close_ap(u: float) -> float:
        return ap_hold * min(1.0, u / 0.8)

    # Effort plateaus over the last ~40% of the close so the smoothed
    # signal has converged near the hold force before micro-lift.
    def close_eff(u: float) -> float:
        if u < 0.3:
            return 0.0
        if u < 0.6:
            return peak * (u - 0.3) / 0.3
        return peak

    b.extend(Phase.CLOSE.value, close_n, close_ap, close_eff, lambda u: 0.0)

    if outcome == "WEAK":
        b.extend(
            Phase.MICRO_LIFT.value,
            micro_n,
            lambda u: ap_hold,
            lambda u: peak,
            lambda u: _MICROLIFT_HEIGHT * u,
        )
        b.extend(
            Phase.LIFT.value,
            lift_n,
            lambda u: ap_hold,
            lambda u: peak,
            lambda u: _MICROLIFT_HEIGHT + (_LIFT_TOP - _MICROLIFT_HEIGHT) * u,
        )
        return b.build(noise_rng, sigma)

    # SUCCESS and SLIP both carry the load-transfer dip during
    # micro-lift, placed so its smoothed trough clears the hold
    # threshold with a small margin on a noiseless trace.
    s0 = _ema_last(b.effs)
    dip = _dip_raw_level(s0, micro_n)
    b.extend(
        Phase.MICRO_LIFT.value,
        micro_n,
        lambda u: ap_hold,
        lambda u: dip,
        lambda u: _MICROLIFT_HEIGHT * u,
    )

    if outcome == "SUCCESS":
        b.extend(
            Phase.LIFT.value,
            lift_n,
            lambda u: ap_hold,
            lambda u: peak,
            lambda u: _MICROLIFT_HEIGHT + (_LIFT_TOP - _MICROLIFT_HEIGHT) * u,
        )
        return b.build(noise_rng, sigma)

    # SLIP: the hold gives out early in the lift, effort collapses
    # while the jaws keep creeping closed around the escaping object.
    decay_start_s = 0.3 * scale
    decay_len_s = 0.3 * scale
    floor = shape_rng.uniform(0.05, 0.12)
    ap_end = min(0.95, ap_hold + shape_rng.uniform(0.25, 0.35))
    start_u = decay_start_s / lift_s
    decay_u = decay_len_s / lift_s

    def slip_eff(u: float) -> float:
        if u < start_u:
            return peak
        d = (u - start_u) / decay_u
        return floor if d >= 1.0 else peak + (floor - peak) * d

    def slip_ap(u: float) -> float:
        if u < start_u:
            return ap_hold
        return ap_hold + (ap_end - ap_hold) * (u - start_u) / (1.0 - start_u)

    b.extend(
        Phase.LIFT.value,
        lift_n,
        slip_ap,
        slip_eff,
        lambda u: _MICROLIFT_HEIGHT + (_LIFT_TOP - _MICROLIFT_HEIGHT) * u,
    )
    return b.build(noise_rng, sigma)


def _stall_trace(
    shape_rng: random.Random,
    noise_rng: random.Random,
    sigma: float,
    scale: float,
    rate: float,
) -> TelemetryTrace:
    """Closure freezes partway in and stays frozen well past the stall
    window, never reaching a terminal signature."""
    b = _TraceBuilder(rate)
    approach_n = _n_samples(shape_rng.uniform(1.0, 2.0) * scale, rate)
    moving_n = _n_samples(shape_rng.uniform(0.3, 0.5) * scale, rate)
    frozen_n = _n_samples(shape_rng.uniform(5.0, 5.5), rate)
    ap_frozen = shape_rng.uniform(0.25, 0.4)
    eff_frozen = shape_rng.uniform(0.1, 0.2)

    b.extend(Phase.APPROACH.value, approach_n, lambda u: 0.0, lambda u: 0.0, lambda u: 0.12 * (1.0 - u))
    b.extend(
        Phase.CLOSE.value,
        moving_n,
        lambda u: ap_frozen * u,
        lambda u: eff_frozen * u,
        lambda u: 0.0,
    )
    b.extend(Phase.CLOSE.value, frozen_n, lambda u: ap_frozen, lambda u: eff_frozen, lambda u: 0.0)
    return b.build(noise_rng, sigma)


def _timeout_trace(
    shape_rng: random.Random,
    noise_rng: random.Random,
    sigma: float,
    rate: float,
) -> TelemetryTrace:
    """The approach never completes; the trace simply outlives the
    attempt budget. Duration is independent of ``duration_scale`` since
    it must exceed the classifier's clock, not the motion profile."""
    b = _TraceBuilder(rate)
    total_n = _n_samples(_TIMEOUT_TRACE_S + shape_rng.uniform(0.0, 0.5), rate)
    b.extend(
        Phase.APPROACH.value,
        total_n,
        lambda u: 0.0,
        lambda u: 0.0,
        lambda u: 0.12 - 0.10 * u,
    )
    return b.build(noise_rng, sigma)


def contact_only_trace(seed: int, rate: float = SAMPLE_RATE_HZ) -> TelemetryTrace:
    """A grasp that pinched a fixture edge: full contact through the
    close, then the load vanishes the moment the micro-lift starts.
    Ground truth is EMPTY; the micro-lift check is what catches it."""
    shape_rng = _derive_rng(seed, "contact-only")
    noise_rng = _derive_rng(seed, "contact-only-noise")
    b = _TraceBuilder(rate)
    approach_n = _n_samples(shape_rng.uniform(1.0, 2.0), rate)
    close_n = _n_samples(shape_rng.uniform(0.8, 1.5), rate)
    micro_n = _n_samples(0.5, rate)
    lift_n = _n_samples(shape_rng.uniform(2.4, 3.2), rate)
    peak = shape_rng.uniform(0.85, 0.95)
    ap_hold = shape_rng.uniform(0.55, 0.65)

    b.extend(Phase.APPROACH.value, approach_n, lambda u: 0.0, lambda u: 0.0, lambda u: 0.12 * (1.0 - u))
    b.extend(
        Phase.CLOSE.value,
        close_n,
        lambda u: ap_hold * min(1.0, u / 0.8),
        lambda u: 0.0 if u < 0.6 else peak * (u - 0.6) / 0.4,
        lambda u: 0.0,
    )
    b.extend(Phase.MICRO_LIFT.value, micro_n, lambda u: ap_hold, lambda u: 0.05, lambda u: _MICROLIFT_HEIGHT * u)
    b.extend(
        Phase.LIFT.value,
        lift_n,
        lambda u: ap_hold,
        lambda u: 0.05,
        lambda u: _MICROLIFT_HEIGHT + (_LIFT_TOP - _MICROLIFT_HEIGHT) * u,
    )
    return b.build(noise_rng, 0.0)
