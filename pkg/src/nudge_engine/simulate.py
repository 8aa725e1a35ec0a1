"""Synthetic-session harness.

Personas encode reproducible users: a target profile plus event-pattern
parameters that provably map onto it under the rule classifiers. Loading
a persona dry-runs the generated events through those classifiers and
refuses the persona if any dimension misses, naming the dimension.

Replay then drives full pipelines (in-process or over HTTP), records the
per-session outcomes, and reports the distributional aggregates. The
report is recomputed from the emitted trace CSV before it is returned,
so the summary and the log cannot disagree.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from nudge_engine.capture import SignalAccumulator, capture_context
from nudge_engine.config import default_config
from nudge_engine.domain import (
    AttentionLevel,
    BehavioralStage,
    CognitiveMode,
    DeviceType,
    EmotionDistribution,
    EventKind,
    InvariantViolation,
    NudgePhase,
    OutcomeStatus,
    RawEvent,
    ReasonerKind,
    ThumbSignal,
    TraceRecord,
    TraceStage,
    canonical_serialize,
    format_ts,
    parse_ts,
    quantize,
)
from nudge_engine.guardrails import TraceLog, emotion_delta, read_trace_csv, split_runs
from nudge_engine.orchestrator import Engine
from nudge_engine.profiling import (
    classify_attention,
    classify_behavioral_stage,
    classify_cognitive_mode,
)

SIM_EPOCH = datetime(2026, 3, 2, 9, 0, 0, tzinfo=timezone.utc)


class PersonaError(ValueError):
    """Persona file invalid, or a dry run missed its target profile."""


# ---------------------------------------------------------------------------
# Persona model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ApplianceSpec:
    appliance_id: str
    wattage_w: float
    usage_hours: float

    def to_payload(self) -> Dict[str, Any]:
        return {
            "appliance_id": self.appliance_id,
            "wattage_w": self.wattage_w,
            "usage_hours": self.usage_hours,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "ApplianceSpec":
        return cls(
            appliance_id=str(payload["appliance_id"]),
            wattage_w=float(payload["wattage_w"]),
            usage_hours=float(payload["usage_hours"]),
        )


@dataclass(frozen=True)
class EventPattern:
    """Knobs that shape the synthetic event stream.

    The stage recipe keys off the persona's target stage; these parameters
    control the classifier-relevant magnitudes. hesitation_ms bounds are
    inclusive uniform-draw bounds for each focus-to-click gap.
    """

    device: DeviceType
    click_rate: int
    hesitation_ms: Tuple[float, float]
    appliances: Tuple[ApplianceSpec, ...]
    reducing_probability: float = 0.0

    def __post_init__(self):
        lo, hi = self.hesitation_ms
        if lo < 0 or hi < lo:
            raise PersonaError("hesitation_ms bounds must satisfy 0 <= lo <= hi")
        if self.click_rate < 0:
            raise PersonaError("click_rate must be >= 0")
        if not 0.0 <= self.reducing_probability <= 1.0:
            raise PersonaError("reducing_probability must lie in [0, 1]")
        if not self.appliances:
            raise PersonaError("appliance set must be non-empty")

    def to_payload(self) -> Dict[str, Any]:
        return {
            "device": self.device.value,
            "click_rate": self.click_rate,
            "hesitation_ms": list(self.hesitation_ms),
            "appliances": [a.to_payload() for a in self.appliances],
            "reducing_probability": self.reducing_probability,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "EventPattern":
        return cls(
            device=DeviceType(payload["device"]),
            click_rate=int(payload["click_rate"]),
            hesitation_ms=tuple(float(x) for x in payload["hesitation_ms"]),
            appliances=tuple(
                ApplianceSpec.from_payload(a) for a in payload["appliances"]
            ),
            reducing_probability=float(payload.get("reducing_probability", 0.0)),
        )


@dataclass(frozen=True)
class EmotionModel:
    """Two-point model: one pre frame, one post frame with raised happiness."""

    pre_happiness: float
    happiness_delta: float

    def frames(self) -> Tuple[EmotionDistribution, EmotionDistribution]:
        minor = 0.02  # small fixed mass on each non-target emotion
        pre_h = quantize(self.pre_happiness)
        post_h = quantize(self.pre_happiness + self.happiness_delta)

        def build(happiness: float, phase: NudgePhase) -> EmotionDistribution:
            neutral = quantize(1.0 - happiness - 5 * minor)
            return EmotionDistribution(
                happiness=happiness, sadness=minor, anger=minor, fear=minor,
                surprise=minor, disgust=minor, neutral=neutral, phase=phase,
            )

        return build(pre_h, NudgePhase.PRE_NUDGE), build(post_h, NudgePhase.POST_NUDGE)

    def to_payload(self) -> Dict[str, Any]:
        return {
            "pre_happiness": self.pre_happiness,
            "happiness_delta": self.happiness_delta,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "EmotionModel":
        return cls(
            pre_happiness=float(payload["pre_happiness"]),
            happiness_delta=float(payload["happiness_delta"]),
        )


@dataclass(frozen=True)
class Persona:
    name: str
    target_mode: CognitiveMode
    target_stage: BehavioralStage
    target_attention: AttentionLevel
    pattern: EventPattern
    emotion: EmotionModel
    seed: int
    downvote_rounds: int = 0
    expected_strategy: Optional[str] = None
    expected_font_px: Optional[int] = None

    def __post_init__(self):
        if not self.name:
            raise PersonaError("persona name must be non-empty")
        if self.downvote_rounds < 0:
            raise PersonaError("downvote_rounds must be >= 0")

    def to_payload(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "name": self.name,
            "target_profile": {
                "cognitive_mode": self.target_mode.value,
                "behavioral_stage": self.target_stage.value,
                "attention": self.target_attention.value,
            },
            "event_pattern": self.pattern.to_payload(),
            "emotion": self.emotion.to_payload(),
            "seed": self.seed,
            "downvote_rounds": self.downvote_rounds,
        }
        if self.expected_strategy is not None:
            payload["expected_strategy"] = self.expected_strategy
        if self.expected_font_px is not None:
            payload["expected_font_px"] = self.expected_font_px
        return payload

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "Persona":
        try:
            target = payload["target_profile"]
            return cls(
                name=str(payload["name"]),
                target_mode=CognitiveMode(target["cognitive_mode"]),
                target_stage=BehavioralStage(target["behavioral_stage"]),
                target_attention=AttentionLevel(target["attention"]),
                pattern=EventPattern.from_payload(payload["event_pattern"]),
                emotion=EmotionModel.from_payload(payload["emotion"]),
                seed=int(payload["seed"]),
                downvote_rounds=int(payload.get("downvote_rounds", 0)),
                expected_strategy=payload.get("expected_strategy"),
                expected_font_px=payload.get("expected_font_px"),
            )
        except (KeyError, ValueError, TypeError) as err:
            name = payload.get("name", "<unnamed>") if isinstance(payload, Mapping) else "<unnamed>"
            raise PersonaError(f"persona {name!r}: {err}") from None


# ---------------------------------------------------------------------------
# Event synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionScript:
    """Everything one simulated session feeds the engine, in order."""

    session_id: str
    persona: Persona
    device: DeviceType
    started_at: datetime
    events: Tuple[RawEvent, ...]
    pre_frame: EmotionDistribution
    post_frame: EmotionDistribution

    def to_payload(self) -> Dict[str, Any]:
        return {
            "session_id": self.session_id,
            "persona": self.persona.to_payload(),
            "device": self.device.value,
            "started_at": format_ts(self.started_at),
            "events": [e.to_payload() for e in self.events],
            "pre_frame": self.pre_frame.to_payload(),
            "post_frame": self.post_frame.to_payload(),
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "SessionScript":
        return cls(
            session_id=payload["session_id"],
            persona=Persona.from_payload(payload["persona"]),
            device=DeviceType(payload["device"]),
            started_at=parse_ts(payload["started_at"]),
            events=tuple(RawEvent.from_payload(e) for e in payload["events"]),
            pre_frame=EmotionDistribution.from_payload(payload["pre_frame"]),
            post_frame=EmotionDistribution.from_payload(payload["post_frame"]),
        )


def _heaviest(appliances: Sequence[ApplianceSpec]) -> ApplianceSpec:
    return max(appliances, key=lambda a: (a.wattage_w, a.appliance_id))


def _lightest(appliances: Sequence[ApplianceSpec]) -> ApplianceSpec:
    return min(appliances, key=lambda a: (a.wattage_w, a.appliance_id))


def simulate_session(persona: Persona, seed: int, session_id: Optional[str] = None) -> SessionScript:
    """Deterministic event stream for (persona, seed).

    Layout: alternating focus/click pairs carry the hesitation signal, then
    the stage recipe appends appliance actions. At least one appliance ends
    the session powered so message grounding always has a subject.
    """
    sid = session_id or persona.name
    rng = random.Random(f"{persona.name}|{persona.seed}|{seed}")
    pattern = persona.pattern
    t = SIM_EPOCH
    events: List[RawEvent] = []

    def emit(kind: EventKind, **attrs) -> None:
        events.append(RawEvent(session_id=sid, kind=kind, at=t, attributes=attrs))

    def advance(ms: float) -> None:
        nonlocal t
        t = t + timedelta(milliseconds=ms)

    for _ in range(pattern.click_rate):
        emit(EventKind.PAGE_FOCUS)
        advance(rng.uniform(*pattern.hesitation_ms))
        emit(EventKind.CLICK, target="appliance_list")
        advance(rng.uniform(200.0, 900.0))

    heavy = _heaviest(pattern.appliances)
    light = _lightest(pattern.appliances)

    def appliance(kind_action: str, spec: ApplianceSpec, hours: Optional[float] = None) -> None:
        emit(
            EventKind.APPLIANCE_ACTION,
            appliance_id=spec.appliance_id,
            action=kind_action,
            wattage_w=spec.wattage_w,
            usage_hours=spec.usage_hours if hours is None else hours,
        )
        advance(rng.uniform(400.0, 1200.0))

    stage = persona.target_stage
    if stage is BehavioralStage.PRE_CONTEMPLATION:
        # no views of heavy gear, no reductions; power something up for grounding
        appliance("turn_on", heavy)
    elif stage is BehavioralStage.CONTEMPLATION:
        appliance("view", heavy)
        appliance("turn_on", heavy)
    elif stage is BehavioralStage.PREPARATION:
        # plan a cut on gear that is currently off; keep something else running
        appliance("turn_on", light)
        appliance("turn_off", heavy)
        appliance("adjust_hours", heavy, hours=max(heavy.usage_hours - 1.0, 0.5))
    else:  # action and maintenance share the applied-reduction recipe
        appliance("turn_on", heavy)
        if rng.random() < pattern.reducing_probability:
            appliance("adjust_hours", heavy, hours=max(heavy.usage_hours - 1.0, 0.5))

    pre_frame, post_frame = persona.emotion.frames()
    return SessionScript(
        session_id=sid,
        persona=persona,
        device=pattern.device,
        started_at=SIM_EPOCH,
        events=tuple(events),
        pre_frame=pre_frame,
        post_frame=post_frame,
    )


def validate_persona(persona: Persona, seed: int) -> SessionScript:
    """Dry-run the script through the rule classifiers; refuse on any miss,
    naming the dimension that missed."""
    script = simulate_session(persona, seed)
    acc = SignalAccumulator(script.session_id)
    signals = acc.ingest(list(script.events))
    context = capture_context(script.session_id, script.device, script.started_at)
    config = default_config()
    got = {
        "cognitive_mode": classify_cognitive_mode(signals, config.thresholds),
        "behavioral_stage": classify_behavioral_stage(signals, config.thresholds),
        "attention": classify_attention(signals, context, config.thresholds),
    }
    want = {
        "cognitive_mode": persona.target_mode,
        "behavioral_stage": persona.target_stage,
        "attention": persona.target_attention,
    }
    for dimension, target in want.items():
        if got[dimension] is not target:
            raise PersonaError(
                f"persona {persona.name!r}: dry run classified {dimension} as "
                f"{got[dimension].value!r}, target is {target.value!r}"
            )
    return script


# ---------------------------------------------------------------------------
# Persona catalogs
# ---------------------------------------------------------------------------

_HEATER = ApplianceSpec("heater", 2000.0, 3.0)
_LAMP = ApplianceSpec("lamp", 300.0, 5.0)

# (mode, stage, attention) -> pattern ingredients that provably classify there
_INTUITIVE_CLICKS = 4
_ANALYTICAL_CLICKS = 16
_CALM_HESITATION = (1500.0, 2500.0)
_DELIBERATE_HESITATION = (3200.0, 4800.0)
_OVERLOADED_HESITATION = (8200.0, 8800.0)


def _reference_pattern(
    mode: CognitiveMode, stage: BehavioralStage, attention: AttentionLevel
) -> EventPattern:
    if mode is CognitiveMode.ANALYTICAL:
        clicks = _ANALYTICAL_CLICKS
        if attention is AttentionLevel.HIGH:
            device, hesitation = DeviceType.DESKTOP, _DELIBERATE_HESITATION
        elif attention is AttentionLevel.MEDIUM:
            device, hesitation = DeviceType.DESKTOP, _OVERLOADED_HESITATION
        else:
            device, hesitation = DeviceType.MOBILE, _OVERLOADED_HESITATION
    else:
        hesitation = _CALM_HESITATION
        if attention is AttentionLevel.HIGH:
            device, clicks = DeviceType.DESKTOP, _INTUITIVE_CLICKS
        elif attention is AttentionLevel.MEDIUM:
            device, clicks = DeviceType.MOBILE, _INTUITIVE_CLICKS
        else:
            device, clicks = DeviceType.MOBILE, 2
    reducing = 1.0 if stage in (BehavioralStage.ACTION, BehavioralStage.MAINTENANCE) else 0.0
    return EventPattern(
        device=device,
        click_rate=clicks,
        hesitation_ms=hesitation,
        appliances=(_HEATER, _LAMP),
        reducing_probability=reducing,
    )


_REFERENCE_ROWS: Tuple[Tuple[str, str, str, str, int, int], ...] = (
    # (mode, stage, attention, expected strategy, font px, downvote rounds)
    ("analytical", "contemplation", "high", "just_in_time", 16, 0),
    ("intuitive", "pre_contemplation", "high", "remind_consequences", 16, 0),
    ("intuitive", "contemplation", "high", "enable_comparisons", 16, 0),
    ("intuitive", "action", "high", "raise_visibility", 16, 0),
    ("intuitive", "contemplation", "high", "just_in_time", 16, 1),
    ("intuitive", "action", "medium", "just_in_time", 19, 1),
    ("intuitive", "pre_contemplation", "high", "remind_consequences", 16, 0),
    ("intuitive", "pre_contemplation", "low", "just_in_time", 24, 0),
    ("intuitive", "pre_contemplation", "low", "reduce_distance", 24, 1),
    ("intuitive", "action", "medium", "just_in_time", 19, 1),
    ("intuitive", "contemplation", "high", "just_in_time", 16, 1),
    ("analytical", "pre_contemplation", "medium", "raise_visibility", 16, 0),
    ("intuitive", "pre_contemplation", "high", "just_in_time", 16, 2),
    ("analytical", "action", "high", "just_in_time", 16, 1),
    ("analytical", "action", "high", "raise_visibility", 16, 0),
)


def reference_personas() -> Tuple[Persona, ...]:
    """The fifteen reference sessions as reproducible personas.

    downvote_rounds encodes each session's feedback history: every warm-up
    round downvotes the then-best strategy, so the measured run lands on
    the expected one.
    """
    personas = []
    for index, (mode, stage, attention, strategy, font, downvotes) in enumerate(
        _REFERENCE_ROWS, start=1
    ):
        mode_e = CognitiveMode(mode)
        stage_e = BehavioralStage(stage)
        att_e = AttentionLevel(attention)
        personas.append(
            Persona(
                name=f"session{index:02d}_{mode}_{stage}_{attention}",
                target_mode=mode_e,
                target_stage=stage_e,
                target_attention=att_e,
                pattern=_reference_pattern(mode_e, stage_e, att_e),
                emotion=EmotionModel(
                    pre_happiness=0.000170, happiness_delta=0.000330
                ),
                seed=100 + index,
                downvote_rounds=downvotes,
                expected_strategy=strategy,
                expected_font_px=font,
            )
        )
    return tuple(personas)


_RANDOM_COMBOS: Tuple[Tuple[str, str, str], ...] = tuple(
    (mode, stage, attention)
    for mode in ("intuitive", "analytical")
    for stage in ("pre_contemplation", "contemplation", "preparation", "action")
    for attention in ("low", "medium", "high")
)


def random_personas(count: int, seed: int) -> Tuple[Persona, ...]:
    """Personas drawn over every reachable single-session profile combination.

    Maintenance is excluded: it needs cross-session history that a single
    synthetic session cannot carry.
    """
    rng = random.Random(f"personas|{seed}")
    personas = []
    for index in range(count):
        mode, stage, attention = rng.choice(_RANDOM_COMBOS)
        pattern = _reference_pattern(
            CognitiveMode(mode), BehavioralStage(stage), AttentionLevel(attention)
        )
        # vary the appliance magnitudes without crossing classifier lines
        heavy = ApplianceSpec(
            "heater", float(rng.randrange(1200, 2600, 100)), rng.randrange(2, 7) * 1.0
        )
        light = ApplianceSpec(
            "lamp", float(rng.randrange(40, 420, 20)), rng.randrange(1, 9) * 0.5
        )
        pattern = EventPattern(
            device=pattern.device,
            click_rate=pattern.click_rate,
            hesitation_ms=pattern.hesitation_ms,
            appliances=(heavy, light),
            reducing_probability=pattern.reducing_probability,
        )
        happiness = rng.randrange(100, 400) / 1_000_000.0
        delta = rng.randrange(50, 500) / 1_000_000.0
        personas.append(
            Persona(
                name=f"sim_{mode}_{stage}_{attention}_{index:03d}",
                target_mode=CognitiveMode(mode),
                target_stage=BehavioralStage(stage),
                target_attention=AttentionLevel(attention),
                pattern=pattern,
                emotion=EmotionModel(pre_happiness=happiness, happiness_delta=delta),
                seed=rng.randrange(1, 10**6),
            )
        )
    return tuple(personas)


def save_personas(personas: Sequence[Persona], path: Path) -> None:
    payload = {"version": "1", "personas": [p.to_payload() for p in personas]}
    Path(path).write_bytes(canonical_serialize(payload))


def load_personas(path: Path) -> Tuple[Persona, ...]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise PersonaError(f"cannot read persona file {path}: {err}") from None
    if not isinstance(raw, Mapping) or not isinstance(raw.get("personas"), list):
        raise PersonaError(f"persona file {path} must hold a 'personas' array")
    personas = tuple(Persona.from_payload(p) for p in raw["personas"])
    names = [p.name for p in personas]
    if len(set(names)) != len(names):
        raise PersonaError("persona names must be unique within a file")
    return personas


# ---------------------------------------------------------------------------
# Engine clients
# ---------------------------------------------------------------------------


class InprocEngineClient:
    """Drives an in-process Engine with a deterministic stepping clock."""

    def __init__(self, engine: Optional[Engine] = None, trace_path: Optional[Path] = None):
        if engine is None:
            ticks = {"n": 0}

            def clock() -> datetime:
                ticks["n"] += 1
                return SIM_EPOCH + timedelta(seconds=ticks["n"])

            engine = Engine(trace_log=TraceLog(trace_path), clock=clock)
        self.engine = engine

    def create_session(self, session_id: str) -> None:
        self.engine.create_session(session_id)

    def set_context(self, session_id: str, device: str, at: datetime) -> None:
        self.engine.set_context(session_id, device, at=at)

    def post_events(self, session_id: str, events: Sequence[RawEvent]) -> None:
        self.engine.ingest_events(session_id, events)

    def post_emotion(self, session_id: str, frame: EmotionDistribution) -> None:
        self.engine.record_emotion(session_id, frame)

    def run(self, session_id: str, reasoner: ReasonerKind) -> Dict[str, Any]:
        return self.engine.run_pipeline(session_id, reasoner).to_payload()

    def feedback(self, session_id: str, nudge_id: str, thumbs: ThumbSignal) -> None:
        self.engine.submit_feedback(session_id, nudge_id, thumbs)

    def traces(self, session_id: str) -> List[Dict[str, Any]]:
        return [r.to_payload() for r in self.engine.trace_log.records(session_id)]

    def close(self) -> None:
        self.engine.trace_log.close()


class HttpEngineClient:
    """Same operations against a served engine; any httpx-compatible client
    with post/get works, which keeps tests transport-free."""

    def __init__(self, base_url_or_client):
        if isinstance(base_url_or_client, str):
            import httpx

            self._client = httpx.Client(base_url=base_url_or_client, timeout=30.0)
        else:
            self._client = base_url_or_client

    def _check(self, response) -> Any:
        if response.status_code >= 400:
            raise RuntimeError(
                f"engine call failed ({response.status_code}): {response.text}"
            )
        return json.loads(response.content) if response.content else None

    def create_session(self, session_id: str) -> None:
        self._check(self._client.post("/sessions", json={"session_id": session_id}))

    def set_context(self, session_id: str, device: str, at: datetime) -> None:
        stamp = format_ts(at)
        self._check(
            self._client.post(
                f"/sessions/{session_id}/context", json={"device": device, "at": stamp}
            )
        )

    def post_events(self, session_id: str, events: Sequence[RawEvent]) -> None:
        self._check(
            self._client.post(
                f"/sessions/{session_id}/events",
                json=[e.to_payload() for e in events],
            )
        )

    def post_emotion(self, session_id: str, frame: EmotionDistribution) -> None:
        self._check(
            self._client.post(f"/sessions/{session_id}/emotion", json=frame.to_payload())
        )

    def run(self, session_id: str, reasoner: ReasonerKind) -> Dict[str, Any]:
        param = "llm" if reasoner is ReasonerKind.LLM_BACKED else "rule"
        return self._check(
            self._client.post(f"/sessions/{session_id}/run?reasoner={param}")
        )

    def feedback(self, session_id: str, nudge_id: str, thumbs: ThumbSignal) -> None:
        self._check(
            self._client.post(
                f"/sessions/{session_id}/feedback",
                json={"nudge_id": nudge_id, "thumbs": thumbs.value},
            )
        )

    def traces(self, session_id: str) -> List[Dict[str, Any]]:
        return self._check(self._client.get(f"/admin/traces/{session_id}"))

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


@dataclass
class SessionResult:
    session_id: str
    persona: str
    status: str
    reason: Optional[str]
    strategy_id: Optional[str]
    font_size_px: Optional[int]
    happiness_delta: Optional[float]
    expected_strategy: Optional[str]
    expected_font_px: Optional[int]
    completed: bool
    error: Optional[str] = None

    def to_payload(self) -> Dict[str, Any]:
        return {
            "session_id": self.session_id,
            "persona": self.persona,
            "status": self.status,
            "reason": self.reason,
            "strategy_id": self.strategy_id,
            "font_size_px": self.font_size_px,
            "happiness_delta": self.happiness_delta,
            "expected_strategy": self.expected_strategy,
            "expected_font_px": self.expected_font_px,
            "completed": self.completed,
            "error": self.error,
        }


@dataclass
class ReplayReport:
    engine: str
    sessions: List[SessionResult] = field(default_factory=list)
    strategy_histogram: Dict[str, int] = field(default_factory=dict)
    font_histogram: Dict[str, int] = field(default_factory=dict)
    mean_happiness_delta: Optional[float] = None
    trace_recomputation_ok: bool = False

    @property
    def total(self) -> int:
        return len(self.sessions)

    @property
    def completed(self) -> int:
        return sum(1 for s in self.sessions if s.completed)

    @property
    def completion_rate(self) -> float:
        return quantize(self.completed / self.total) if self.sessions else 1.0

    def to_payload(self) -> Dict[str, Any]:
        return {
            "engine": self.engine,
            "total_sessions": self.total,
            "completed_sessions": self.completed,
            "completion_rate": self.completion_rate,
            "strategy_histogram": dict(sorted(self.strategy_histogram.items())),
            "font_histogram": dict(sorted(self.font_histogram.items())),
            "mean_happiness_delta": self.mean_happiness_delta,
            "trace_recomputation_ok": self.trace_recomputation_ok,
            "sessions": [s.to_payload() for s in self.sessions],
        }

    def human_text(self) -> str:
        lines = [
            "replay report",
            "=============",
            f"engine:            {self.engine}",
            f"sessions:          {self.total}",
            f"completed:         {self.completed}"
            + (f" ({self.completion_rate * 100:.1f}%)" if self.total else ""),
        ]
        if self.strategy_histogram:
            lines.append("strategy histogram:")
            for sid, count in sorted(
                self.strategy_histogram.items(), key=lambda kv: (-kv[1], kv[0])
            ):
                share = count / max(1, sum(self.strategy_histogram.values()))
                lines.append(f"  {sid:<22} {count:>3}  ({share * 100:.1f}%)")
        if self.font_histogram:
            lines.append("font-size histogram:")
            for px, count in sorted(self.font_histogram.items(), key=lambda kv: int(kv[0])):
                lines.append(f"  {px}px{'':<18} {count:>3}")
        if self.mean_happiness_delta is not None:
            lines.append(f"mean happiness delta: {self.mean_happiness_delta:+.6f}")
        lines.append(
            "trace recomputation:  "
            + ("consistent" if self.trace_recomputation_ok else "MISMATCH")
        )
        failures = [s for s in self.sessions if not s.completed]
        if failures:
            lines.append("incomplete sessions:")
            for s in failures:
                detail = s.error or s.reason or "expectation mismatch"
                lines.append(f"  {s.session_id}: {s.status} ({detail})")
        return "\n".join(lines) + "\n"


def _run_script(
    client, script: SessionScript, reasoner: ReasonerKind
) -> Tuple[Dict[str, Any], Optional[Dict[str, Any]]]:
    """Feed one script through a client; returns (final outcome, delivery)."""
    sid = script.session_id
    client.create_session(sid)
    client.set_context(sid, script.device.value, script.started_at)
    client.post_emotion(sid, script.pre_frame)
    client.post_events(sid, script.events)

    outcome: Dict[str, Any] = {}
    for _ in range(script.persona.downvote_rounds):
        outcome = client.run(sid, reasoner)
        delivery = outcome.get("delivery")
        if not delivery:
            break  # nothing delivered, nothing to downvote
        client.feedback(sid, delivery["nudge_id"], ThumbSignal.DOWN)
    outcome = client.run(sid, reasoner)
    client.post_emotion(sid, script.post_frame)
    return outcome, outcome.get("delivery")


def replay(
    scripts: Sequence[SessionScript],
    client,
    reasoner: ReasonerKind = ReasonerKind.RULE_BASED,
    engine_label: str = "inproc",
    trace_csv: Optional[Path] = None,
) -> ReplayReport:
    """Run every script, aggregate, then recompute the aggregates from the
    trace CSV and record whether the two views agree."""
    report = ReplayReport(engine=engine_label)
    for script in scripts:
        persona = script.persona
        try:
            outcome, delivery = _run_script(client, script, reasoner)
        except Exception as err:  # a crash is a data point, not a harness abort
            report.sessions.append(
                SessionResult(
                    session_id=script.session_id,
                    persona=persona.name,
                    status="error",
                    reason=None,
                    strategy_id=None,
                    font_size_px=None,
                    happiness_delta=None,
                    expected_strategy=persona.expected_strategy,
                    expected_font_px=persona.expected_font_px,
                    completed=False,
                    error=f"{type(err).__name__}: {err}",
                )
            )
            continue

        status = outcome["status"]
        strategy = delivery["strategy_id"] if delivery else None
        font = delivery["ui"]["font_size_px"] if delivery else None
        delta = emotion_delta(script.pre_frame, script.post_frame)["happiness"]
        completed = status == OutcomeStatus.DELIVERED.value or (
            status == OutcomeStatus.NO_NUDGE.value and bool(outcome.get("reason"))
        )
        if persona.expected_strategy is not None:
            completed = completed and strategy == persona.expected_strategy
        if persona.expected_font_px is not None:
            completed = completed and font == persona.expected_font_px

        report.sessions.append(
            SessionResult(
                session_id=script.session_id,
                persona=persona.name,
                status=status,
                reason=outcome.get("reason"),
                strategy_id=strategy,
                font_size_px=font,
                happiness_delta=delta,
                expected_strategy=persona.expected_strategy,
                expected_font_px=persona.expected_font_px,
                completed=completed,
            )
        )
        if strategy:
            report.strategy_histogram[strategy] = (
                report.strategy_histogram.get(strategy, 0) + 1
            )
        if font is not None:
            key = str(font)
            report.font_histogram[key] = report.font_histogram.get(key, 0) + 1

    deltas = [s.happiness_delta for s in report.sessions if s.happiness_delta is not None]
    if deltas:
        report.mean_happiness_delta = quantize(sum(deltas) / len(deltas))

    if trace_csv is not None:
        report.trace_recomputation_ok = recompute_matches(report, trace_csv)
    return report


def dump_traces(client, session_ids: Sequence[str], path: Path) -> None:
    """Pull per-session traces from a client into a local CSV (fresh file)."""
    target = Path(path)
    if target.exists():
        target.unlink()
    log = TraceLog(target)
    for sid in session_ids:
        for payload in client.traces(sid):
            log.append(TraceRecord.from_payload(payload))
    log.close()


def recompute_matches(report: ReplayReport, trace_csv: Path) -> bool:
    """Independent pass over the trace CSV; the measured run is the last run
    of each session. Returns True iff every aggregate matches the report."""
    try:
        records = read_trace_csv(trace_csv)
    except Exception:
        return False
    by_session: Dict[str, List[TraceRecord]] = {}
    for record in records:
        by_session.setdefault(record.session_id, []).append(record)

    strategy_hist: Dict[str, int] = {}
    font_hist: Dict[str, int] = {}
    deltas: List[float] = []
    for session_records in by_session.values():
        session_records.sort(key=lambda r: r.seq)
        runs = split_runs(session_records)
        if runs:
            measured = runs[-1]
            if any(r.stage is TraceStage.DELIVERY for r in measured):
                selections = [
                    r for r in measured if r.stage is TraceStage.STRATEGY_SELECTION
                ]
                sid = selections[-1].payload_dict()["strategy_id"]
                strategy_hist[sid] = strategy_hist.get(sid, 0) + 1
                fonts = [
                    r for r in measured if r.stage is TraceStage.UI_ADAPTATION
                ]
                px = str(fonts[-1].payload_dict()["font_size_px"])
                font_hist[px] = font_hist.get(px, 0) + 1
        pre_frames = [r for r in session_records if r.stage is TraceStage.EMOTION_PRE]
        post_frames = [r for r in session_records if r.stage is TraceStage.EMOTION_POST]
        if pre_frames and post_frames:
            pre = EmotionDistribution.from_payload(pre_frames[0].payload_dict())
            post = EmotionDistribution.from_payload(post_frames[-1].payload_dict())
            deltas.append(emotion_delta(pre, post)["happiness"])

    mean_delta = quantize(sum(deltas) / len(deltas)) if deltas else None
    return (
        strategy_hist == report.strategy_histogram
        and font_hist == report.font_histogram
        and mean_delta == report.mean_happiness_delta
    )


# ---------------------------------------------------------------------------
# Fixture files
# ---------------------------------------------------------------------------

FIXTURE_SUFFIX = ".session.json"


def write_fixtures(scripts: Sequence[SessionScript], out_dir: Path) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, script in enumerate(scripts, start=1):
        path = out / f"{index:03d}_{script.session_id}{FIXTURE_SUFFIX}"
        path.write_bytes(canonical_serialize(script.to_payload()))
        paths.append(path)
    return paths


def read_fixtures(fixtures_dir: Path) -> Tuple[SessionScript, ...]:
    paths = sorted(Path(fixtures_dir).glob(f"*{FIXTURE_SUFFIX}"))
    if not paths:
        return ()
    scripts = []
    for path in paths:
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
            scripts.append(SessionScript.from_payload(payload))
        except (OSError, json.JSONDecodeError, KeyError, InvariantViolation) as err:
            raise PersonaError(f"fixture {path.name} is unreadable: {err}") from None
    return tuple(scripts)
