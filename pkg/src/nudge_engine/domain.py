"""Shared vocabulary for the nudging engine.

Every value that crosses a module boundary is defined here as an immutable
dataclass or enum, together with the canonical byte encoding used on the wire
and in trace payloads. No persistence, no I/O.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Tuple


class InvariantViolation(ValueError):
    """A domain value broke one of its declared invariants."""


# ============================================================================
# Timestamps
# ============================================================================

# Canonical wire form: UTC, 6-digit fractional seconds, trailing Z.
_TS_FMT = "%Y-%m-%dT%H:%M:%S.%fZ"


def format_ts(at: datetime) -> str:
    if at.tzinfo is None:
        raise InvariantViolation("timestamp must be timezone-aware")
    return at.astimezone(timezone.utc).strftime(_TS_FMT)


def parse_ts(raw: str) -> datetime:
    """Accept RFC 3339 with 'Z' or numeric offsets; normalize to UTC."""
    if not isinstance(raw, str):
        raise InvariantViolation(f"timestamp must be a string, got {raw!r}")
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        raise InvariantViolation(f"unparseable timestamp: {raw!r}") from None
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


# ============================================================================
# Enums
# ============================================================================


class _Label(str, Enum):
    """String-valued enum with wire label == value."""

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


class _OrderedLabel(_Label):
    """Label enum ordered by declaration, not by string value."""

    @property
    def rank(self) -> int:
        return list(type(self)).index(self)

    def __lt__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.rank < other.rank

    def __le__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.rank <= other.rank

    def __gt__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.rank > other.rank

    def __ge__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.rank >= other.rank


class CognitiveMode(_Label):
    ANALYTICAL = "analytical"
    INTUITIVE = "intuitive"


class BehavioralStage(_OrderedLabel):
    PRE_CONTEMPLATION = "pre_contemplation"
    CONTEMPLATION = "contemplation"
    PREPARATION = "preparation"
    ACTION = "action"
    MAINTENANCE = "maintenance"


class AttentionLevel(_OrderedLabel):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class Complexity(_OrderedLabel):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class DeviceType(_Label):
    DESKTOP = "desktop"
    MOBILE = "mobile"


class TimeOfDay(_Label):
    MORNING = "morning"
    AFTERNOON = "afternoon"
    EVENING = "evening"


class ReasonerKind(_Label):
    RULE_BASED = "rule_based"
    LLM_BACKED = "llm_backed"


class NudgePhase(_Label):
    PRE_NUDGE = "pre_nudge"
    POST_NUDGE = "post_nudge"


class EventKind(_Label):
    CLICK = "click"
    HOVER = "hover"
    PAGE_FOCUS = "page_focus"
    PAGE_BLUR = "page_blur"
    APPLIANCE_ACTION = "appliance_action"
    EMOTION_FRAME = "emotion_frame"


class ApplianceVerb(_Label):
    VIEW = "view"
    TURN_ON = "turn_on"
    TURN_OFF = "turn_off"
    ADJUST_HOURS = "adjust_hours"
    ADD = "add"
    REMOVE = "remove"


class ChartType(_Label):
    BAR = "bar"
    LINE = "line"
    PIE = "pie"


class ThumbSignal(_Label):
    UP = "up"
    DOWN = "down"


class TraceStage(_OrderedLabel):
    """Canonical per-run ordering; emotion and feedback stages ride alongside."""

    RAW_SIGNALS = "raw_signals"
    CONTEXT = "context"
    COGNITIVE_MODE = "cognitive_mode"
    BEHAVIORAL_STAGE = "behavioral_stage"
    ATTENTION = "attention"
    STRATEGY_SELECTION = "strategy_selection"
    NUDGE_DRAFT = "nudge_draft"
    COMPLIANCE_VERDICT = "compliance_verdict"
    UI_ADAPTATION = "ui_adaptation"
    DELIVERY = "delivery"
    FEEDBACK = "feedback"
    EMOTION_PRE = "emotion_pre"
    EMOTION_POST = "emotion_post"


class OutcomeStatus(_Label):
    DELIVERED = "delivered"
    NO_NUDGE = "no_nudge"


def enum_from_label(enum_cls, raw: Any):
    try:
        return enum_cls(raw)
    except ValueError:
        labels = ", ".join(m.value for m in enum_cls)
        raise InvariantViolation(
            f"{enum_cls.__name__}: {raw!r} is not one of [{labels}]"
        ) from None


# ============================================================================
# Construction helpers
# ============================================================================

EMOTION_KEYS = ("anger", "disgust", "fear", "happiness", "neutral", "sadness", "surprise")

_HEX_COLOR = re.compile(r"^#[0-9a-fA-F]{6}$")


def _set(obj: Any, name: str, value: Any) -> None:
    object.__setattr__(obj, name, value)


def quantize(value: float) -> float:
    """Snap a float onto the canonical 6-fraction-digit grid."""
    if not math.isfinite(value):
        raise InvariantViolation("canonical floats must be finite")
    return float(format(value, ".6f")) + 0.0  # +0.0 folds -0.0


def _coerce_floats(obj: Any, *names: str) -> None:
    # Numeric fields are snapped to the canonical grid at construction so
    # that equality, serialized bytes, and round-trips always agree.
    for name in names:
        value = getattr(obj, name)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvariantViolation(f"{type(obj).__name__}.{name} must be a number")
        if not math.isfinite(value):
            raise InvariantViolation(f"{type(obj).__name__}.{name} must be finite")
        _set(obj, name, quantize(float(value)))


def _require_int(obj: Any, name: str, minimum: int = 0) -> None:
    value = getattr(obj, name)
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvariantViolation(f"{type(obj).__name__}.{name} must be an integer")
    if value < minimum:
        raise InvariantViolation(f"{type(obj).__name__}.{name} must be >= {minimum}")


def _require_str(obj: Any, name: str) -> None:
    value = getattr(obj, name)
    if not isinstance(value, str) or not value:
        raise InvariantViolation(f"{type(obj).__name__}.{name} must be a non-empty string")


def _require_ts(obj: Any, name: str) -> None:
    value = getattr(obj, name)
    if isinstance(value, str):
        value = parse_ts(value)
        _set(obj, name, value)
    if not isinstance(value, datetime) or value.tzinfo is None:
        raise InvariantViolation(f"{type(obj).__name__}.{name} must be a tz-aware timestamp")
    _set(obj, name, value.astimezone(timezone.utc))


def _require_enum(obj: Any, name: str, enum_cls) -> None:
    value = getattr(obj, name)
    if not isinstance(value, enum_cls):
        _set(obj, name, enum_from_label(enum_cls, value))


# ============================================================================
# Value types
# ============================================================================


@dataclass(frozen=True)
class EmotionDistribution:
    """Probabilities over the seven basic emotions, tagged with nudge phase.

    The probability-sum tolerance [0.98, 1.02] is enforced here at
    construction and never re-litigated later.
    """

    anger: float
    disgust: float
    fear: float
    happiness: float
    neutral: float
    sadness: float
    surprise: float
    phase: NudgePhase

    def __post_init__(self):
        _coerce_floats(self, *EMOTION_KEYS)
        _require_enum(self, "phase", NudgePhase)
        for key in EMOTION_KEYS:
            value = getattr(self, key)
            if not 0.0 <= value <= 1.0:
                raise InvariantViolation(f"EmotionDistribution.{key} outside [0, 1]")
        total = sum(getattr(self, key) for key in EMOTION_KEYS)
        if not 0.98 <= total <= 1.02:
            raise InvariantViolation(
                f"EmotionDistribution probabilities sum to {total:.6f}, outside [0.98, 1.02]"
            )

    def validate(self) -> None:
        pass  # fully checked at construction

    def to_payload(self) -> Dict[str, Any]:
        payload = {key: getattr(self, key) for key in EMOTION_KEYS}
        payload["phase"] = self.phase.value
        return payload

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "EmotionDistribution":
        return cls(
            **{key: payload.get(key, 0.0) for key in EMOTION_KEYS},
            phase=payload.get("phase", ""),
        )


@dataclass(frozen=True)
class ContextSnapshot:
    session_id: str
    device: DeviceType
    time_of_day: TimeOfDay
    captured_at: datetime

    def __post_init__(self):
        _require_str(self, "session_id")
        _require_enum(self, "device", DeviceType)
        _require_enum(self, "time_of_day", TimeOfDay)
        _require_ts(self, "captured_at")

    def validate(self) -> None:
        pass

    def to_payload(self) -> Dict[str, Any]:
        return {
            "session_id": self.session_id,
            "device": self.device.value,
            "time_of_day": self.time_of_day.value,
            "captured_at": format_ts(self.captured_at),
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "ContextSnapshot":
        return cls(
            session_id=payload.get("session_id", ""),
            device=payload.get("device", ""),
            time_of_day=payload.get("time_of_day", ""),
            captured_at=parse_ts(payload.get("captured_at", "")),
        )


@dataclass(frozen=True)
class ApplianceInteraction:
    appliance_id: str
    wattage_w: float
    usage_hours: float
    action: ApplianceVerb

    def __post_init__(self):
        _require_str(self, "appliance_id")
        _coerce_floats(self, "wattage_w", "usage_hours")
        _require_enum(self, "action", ApplianceVerb)
        if self.wattage_w < 0:
            raise InvariantViolation("ApplianceInteraction.wattage_w must be >= 0")
        if self.usage_hours < 0:
            raise InvariantViolation("ApplianceInteraction.usage_hours must be >= 0")

    def validate(self) -> None:
        pass

    def to_payload(self) -> Dict[str, Any]:
        return {
            "appliance_id": self.appliance_id,
            "wattage_w": self.wattage_w,
            "usage_hours": self.usage_hours,
            "action": self.action.value,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "ApplianceInteraction":
        return cls(
            appliance_id=payload.get("appliance_id", ""),
            wattage_w=payload.get("wattage_w", 0.0),
            usage_hours=payload.get("usage_hours", 0.0),
            action=payload.get("action", ""),
        )


# ----------------------------------------------------------------------------
# Appliance replay: the single definition of what an interaction list means.
# Both ingestion and the stage classifier fold through this, so the
# consumption-consistency invariant and the stage rules cannot drift apart.
# ----------------------------------------------------------------------------


@dataclass
class ApplianceState:
    wattage_w: float
    usage_hours: float
    powered: bool


@dataclass
class ApplianceReplay:
    registry: Dict[str, ApplianceState]
    applied_reductions: int
    planned_reductions: int

    @property
    def consumption_kwh(self) -> float:
        return sum(
            state.wattage_w * state.usage_hours / 1000.0
            for state in self.registry.values()
            if state.powered
        )


def replay_appliances(interactions) -> ApplianceReplay:
    """Fold an interaction list into per-appliance state.

    Semantics, in one place:
      - add / turn_on register the appliance as powered;
      - turn_off on a powered appliance is an applied reduction, on an
        unknown or already-off appliance it merely records the off state;
      - adjust_hours that lowers hours is an applied reduction when the
        appliance is powered and a planned one when it is off;
      - view never touches the registry; remove drops the appliance.
    """
    registry: Dict[str, ApplianceState] = {}
    applied = 0
    planned = 0
    for item in interactions:
        known = registry.get(item.appliance_id)
        verb = item.action
        if verb is ApplianceVerb.VIEW:
            continue
        if verb is ApplianceVerb.REMOVE:
            registry.pop(item.appliance_id, None)
            continue
        if verb in (ApplianceVerb.ADD, ApplianceVerb.TURN_ON):
            registry[item.appliance_id] = ApplianceState(item.wattage_w, item.usage_hours, True)
            continue
        if verb is ApplianceVerb.TURN_OFF:
            if known is not None and known.powered:
                applied += 1
            hours = known.usage_hours if known is not None else item.usage_hours
            watts = known.wattage_w if known is not None else item.wattage_w
            registry[item.appliance_id] = ApplianceState(watts, hours, False)
            continue
        # adjust_hours
        if known is None:
            registry[item.appliance_id] = ApplianceState(item.wattage_w, item.usage_hours, True)
            continue
        if item.usage_hours < known.usage_hours:
            if known.powered:
                applied += 1
            else:
                planned += 1
        registry[item.appliance_id] = ApplianceState(
            known.wattage_w, item.usage_hours, known.powered
        )
    return ApplianceReplay(registry, applied, planned)


CONSUMPTION_TOLERANCE_KWH = 1e-6


@dataclass(frozen=True)
class BehavioralSignals:
    click_count: int
    mean_hesitation_ms: float
    appliance_interactions: Tuple[ApplianceInteraction, ...]
    total_consumption_kwh: float
    emotion_frames: Tuple[EmotionDistribution, ...]

    def __post_init__(self):
        _require_int(self, "click_count")
        _coerce_floats(self, "mean_hesitation_ms", "total_consumption_kwh")
        if self.mean_hesitation_ms < 0:
            raise InvariantViolation("BehavioralSignals.mean_hesitation_ms must be >= 0")
        _set(self, "appliance_interactions", tuple(self.appliance_interactions))
        _set(self, "emotion_frames", tuple(self.emotion_frames))
        for item in self.appliance_interactions:
            if not isinstance(item, ApplianceInteraction):
                raise InvariantViolation("appliance_interactions must hold ApplianceInteraction")
        for frame in self.emotion_frames:
            if not isinstance(frame, EmotionDistribution):
                raise InvariantViolation("emotion_frames must hold EmotionDistribution")

    def validate(self) -> None:
        # Deliberately checked here, not at construction: a snapshot carrying a
        # stale total must be constructible so the refusal is observable.
        derived = replay_appliances(self.appliance_interactions).consumption_kwh
        if abs(derived - self.total_consumption_kwh) > CONSUMPTION_TOLERANCE_KWH:
            raise InvariantViolation(
                "BehavioralSignals.total_consumption_kwh inconsistent with "
                f"appliance_interactions: stated {self.total_consumption_kwh!r}, "
                f"derived {derived!r}"
            )

    def to_payload(self) -> Dict[str, Any]:
        return {
            "click_count": self.click_count,
            "mean_hesitation_ms": self.mean_hesitation_ms,
            "appliance_interactions": [i.to_payload() for i in self.appliance_interactions],
            "total_consumption_kwh": self.total_consumption_kwh,
            "emotion_frames": [f.to_payload() for f in self.emotion_frames],
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "BehavioralSignals":
        return cls(
            click_count=payload.get("click_count", 0),
            mean_hesitation_ms=payload.get("mean_hesitation_ms", 0.0),
            appliance_interactions=tuple(
                ApplianceInteraction.from_payload(p)
                for p in payload.get("appliance_interactions", [])
            ),
            total_consumption_kwh=payload.get("total_consumption_kwh", 0.0),
            emotion_frames=tuple(
                EmotionDistribution.from_payload(p) for p in payload.get("emotion_frames", [])
            ),
        )


_SCALARS = (str, int, float, bool)

_EVENT_REQUIRED_ATTRS = {
    EventKind.APPLIANCE_ACTION: ("appliance_id", "wattage_w", "action"),
    EventKind.EMOTION_FRAME: EMOTION_KEYS + ("phase",),
}


@dataclass(frozen=True)
class RawEvent:
    session_id: str
    kind: EventKind
    at: datetime
    attributes: Dict[str, Any]

    def __post_init__(self):
        _require_str(self, "session_id")
        _require_enum(self, "kind", EventKind)
        _require_ts(self, "at")
        attrs = dict(self.attributes or {})
        for key, value in attrs.items():
            if not isinstance(key, str):
                raise InvariantViolation("RawEvent attribute keys must be strings")
            if not isinstance(value, _SCALARS):
                raise InvariantViolation(
                    f"RawEvent attribute {key!r} must be a flat scalar, got {type(value).__name__}"
                )
        _set(self, "attributes", attrs)
        for required in _EVENT_REQUIRED_ATTRS.get(self.kind, ()):
            if required not in attrs:
                raise InvariantViolation(
                    f"RawEvent kind {self.kind.value} requires attribute {required!r}"
                )
        if self.kind is EventKind.APPLIANCE_ACTION:
            enum_from_label(ApplianceVerb, attrs["action"])
            wattage = attrs["wattage_w"]
            if isinstance(wattage, bool) or not isinstance(wattage, (int, float)) or wattage < 0:
                raise InvariantViolation("RawEvent wattage_w must be a non-negative number")

    def validate(self) -> None:
        pass

    def to_payload(self) -> Dict[str, Any]:
        return {
            "session_id": self.session_id,
            "kind": self.kind.value,
            "at": format_ts(self.at),
            "attributes": dict(self.attributes),
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "RawEvent":
        return cls(
            session_id=payload.get("session_id", ""),
            kind=payload.get("kind", ""),
            at=parse_ts(payload.get("at", "")),
            attributes=dict(payload.get("attributes", {})),
        )


@dataclass(frozen=True)
class UserProfile:
    session_id: str
    cognitive_mode: CognitiveMode
    behavioral_stage: BehavioralStage
    attention: AttentionLevel
    reasoner: ReasonerKind
    classified_at: datetime

    def __post_init__(self):
        _require_str(self, "session_id")
        _require_enum(self, "cognitive_mode", CognitiveMode)
        _require_enum(self, "behavioral_stage", BehavioralStage)
        _require_enum(self, "attention", AttentionLevel)
        _require_enum(self, "reasoner", ReasonerKind)
        _require_ts(self, "classified_at")

    def validate(self) -> None:
        pass

    def to_payload(self) -> Dict[str, Any]:
        return {
            "session_id": self.session_id,
            "cognitive_mode": self.cognitive_mode.value,
            "behavioral_stage": self.behavioral_stage.value,
            "attention": self.attention.value,
            "reasoner": self.reasoner.value,
            "classified_at": format_ts(self.classified_at),
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "UserProfile":
        return cls(
            session_id=payload.get("session_id", ""),
            cognitive_mode=payload.get("cognitive_mode", ""),
            behavioral_stage=payload.get("behavioral_stage", ""),
            attention=payload.get("attention", ""),
            reasoner=payload.get("reasoner", ""),
            classified_at=parse_ts(payload.get("classified_at", "")),
        )


@dataclass(frozen=True)
class Strategy:
    id: str
    display_name: str
    complexity: Complexity
    compatible_modes: Tuple[CognitiveMode, ...]
    compatible_stages: Tuple[BehavioralStage, ...]
    min_attention: AttentionLevel

    def __post_init__(self):
        _require_str(self, "id")
        _require_str(self, "display_name")
        _require_enum(self, "complexity", Complexity)
        _require_enum(self, "min_attention", AttentionLevel)
        modes = tuple(enum_from_label(CognitiveMode, m) for m in self.compatible_modes)
        stages = tuple(enum_from_label(BehavioralStage, s) for s in self.compatible_stages)
        if not modes:
            raise InvariantViolation(f"Strategy {self.id}: compatible_modes must be non-empty")
        if not stages:
            raise InvariantViolation(f"Strategy {self.id}: compatible_stages must be non-empty")
        # Stored sorted so equal sets always serialize identically.
        _set(self, "compatible_modes", tuple(sorted(set(modes), key=lambda m: m.value)))
        _set(self, "compatible_stages", tuple(sorted(set(stages), key=lambda s: s.rank)))

    def validate(self) -> None:
        pass

    def to_payload(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "display_name": self.display_name,
            "complexity": self.complexity.value,
            "compatible_modes": [m.value for m in self.compatible_modes],
            "compatible_stages": [s.value for s in self.compatible_stages],
            "min_attention": self.min_attention.value,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "Strategy":
        return cls(
            id=payload.get("id", ""),
            display_name=payload.get("display_name", ""),
            complexity=payload.get("complexity", ""),
            compatible_modes=tuple(payload.get("compatible_modes", [])),
            compatible_stages=tuple(payload.get("compatible_stages", [])),
            min_attention=payload.get("min_attention", ""),
        )


@dataclass(frozen=True)
class StrategyTaxonomy:
    version: str
    strategies: Tuple[Strategy, ...]

    def __post_init__(self):
        _require_str(self, "version")
        _set(self, "strategies", tuple(self.strategies))
        if not self.strategies:
            raise InvariantViolation("StrategyTaxonomy.strategies must be non-empty")
        seen = set()
        for strategy in self.strategies:
            if not isinstance(strategy, Strategy):
                raise InvariantViolation("StrategyTaxonomy.strategies must hold Strategy values")
            if strategy.id in seen:
                raise InvariantViolation(f"StrategyTaxonomy: duplicate strategy id {strategy.id!r}")
            seen.add(strategy.id)

    def validate(self) -> None:
        pass

    def ids(self) -> Tuple[str, ...]:
        return tuple(s.id for s in self.strategies)

    def get(self, strategy_id: str) -> Strategy:
        for strategy in self.strategies:
            if strategy.id == strategy_id:
                return strategy
        raise KeyError(strategy_id)

    def to_payload(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "strategies": [s.to_payload() for s in self.strategies],
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "StrategyTaxonomy":
        return cls(
            version=payload.get("version", ""),
            strategies=tuple(Strategy.from_payload(p) for p in payload.get("strategies", [])),
        )


@dataclass(frozen=True)
class StrategySelection:
    strategy_id: str
    candidates_considered: Tuple[str, ...]
    rejection_reasons: Dict[str, str]
    selected_because: str

    def __post_init__(self):
        _require_str(self, "strategy_id")
        _require_str(self, "selected_because")
        _set(self, "candidates_considered", tuple(self.candidates_considered))
        _set(self, "rejection_reasons", dict(self.rejection_reasons))
        if self.strategy_id not in self.candidates_considered:
            raise InvariantViolation(
                "StrategySelection.strategy_id must appear in candidates_considered"
            )
        if self.strategy_id in self.rejection_reasons:
            raise InvariantViolation(
                "StrategySelection.strategy_id must not carry a rejection reason"
            )

    def validate(self) -> None:
        pass

    def to_payload(self) -> Dict[str, Any]:
        return {
            "strategy_id": self.strategy_id,
            "candidates_considered": list(self.candidates_considered),
            "rejection_reasons": dict(self.rejection_reasons),
            "selected_because": self.selected_because,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "StrategySelection":
        return cls(
            strategy_id=payload.get("strategy_id", ""),
            candidates_considered=tuple(payload.get("candidates_considered", [])),
            rejection_reasons=dict(payload.get("rejection_reasons", {})),
            selected_because=payload.get("selected_because", ""),
        )


FONT_MIN_PX = 12
FONT_MAX_PX = 24


@dataclass(frozen=True)
class UIContext:
    font_size_px: int
    chart_type: ChartType
    color_primary: str
    color_secondary: str

    def __post_init__(self):
        _require_int(self, "font_size_px", minimum=FONT_MIN_PX)
        if self.font_size_px > FONT_MAX_PX:
            raise InvariantViolation(
                f"UIContext.font_size_px must be within [{FONT_MIN_PX}, {FONT_MAX_PX}]"
            )
        _require_enum(self, "chart_type", ChartType)
        for name in ("color_primary", "color_secondary"):
            value = getattr(self, name)
            if not isinstance(value, str) or not _HEX_COLOR.match(value):
                raise InvariantViolation(f"UIContext.{name} must match #RRGGBB")
            _set(self, name, value.lower())

    def validate(self) -> None:
        pass

    def to_payload(self) -> Dict[str, Any]:
        return {
            "font_size_px": self.font_size_px,
            "chart_type": self.chart_type.value,
            "color_primary": self.color_primary,
            "color_secondary": self.color_secondary,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "UIContext":
        raw_font = payload.get("font_size_px", 0)
        if isinstance(raw_font, bool) or not isinstance(raw_font, int):
            raise InvariantViolation("UIContext.font_size_px must be an integer")
        return cls(
            font_size_px=raw_font,
            chart_type=payload.get("chart_type", ""),
            color_primary=payload.get("color_primary", ""),
            color_secondary=payload.get("color_secondary", ""),
        )


MESSAGE_MAX_CHARS = 400


@dataclass(frozen=True)
class NudgeDelivery:
    nudge_id: str
    session_id: str
    strategy_id: str
    message: str
    explanation: str
    ui: UIContext
    delivered_at: datetime

    def __post_init__(self):
        _require_str(self, "nudge_id")
        _require_str(self, "session_id")
        _require_str(self, "strategy_id")
        _require_str(self, "message")
        _require_str(self, "explanation")
        if len(self.message) > MESSAGE_MAX_CHARS:
            raise InvariantViolation(
                f"NudgeDelivery.message exceeds {MESSAGE_MAX_CHARS} characters"
            )
        if not isinstance(self.ui, UIContext):
            raise InvariantViolation("NudgeDelivery.ui must be a UIContext")
        _require_ts(self, "delivered_at")

    def validate(self) -> None:
        self.ui.validate()

    def to_payload(self) -> Dict[str, Any]:
        return {
            "nudge_id": self.nudge_id,
            "session_id": self.session_id,
            "strategy_id": self.strategy_id,
            "message": self.message,
            "explanation": self.explanation,
            "ui": self.ui.to_payload(),
            "delivered_at": format_ts(self.delivered_at),
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "NudgeDelivery":
        return cls(
            nudge_id=payload.get("nudge_id", ""),
            session_id=payload.get("session_id", ""),
            strategy_id=payload.get("strategy_id", ""),
            message=payload.get("message", ""),
            explanation=payload.get("explanation", ""),
            ui=UIContext.from_payload(payload.get("ui", {})),
            delivered_at=parse_ts(payload.get("delivered_at", "")),
        )


@dataclass(frozen=True)
class ComplianceVerdict:
    nudge_id: str
    passed: bool
    violations: Tuple[Tuple[str, str], ...]
    checked_at: datetime

    def __post_init__(self):
        _require_str(self, "nudge_id")
        if not isinstance(self.passed, bool):
            raise InvariantViolation("ComplianceVerdict.passed must be a boolean")
        normalized = []
        for item in self.violations:
            rule_id, reason = item
            if not isinstance(rule_id, str) or not rule_id:
                raise InvariantViolation("ComplianceVerdict violation rule_id must be non-empty")
            if not isinstance(reason, str) or not reason:
                raise InvariantViolation("ComplianceVerdict violation reason must be non-empty")
            normalized.append((rule_id, reason))
        _set(self, "violations", tuple(normalized))
        if self.passed and self.violations:
            raise InvariantViolation("ComplianceVerdict.passed requires empty violations")
        if not self.passed and not self.violations:
            raise InvariantViolation("ComplianceVerdict failure requires at least one violation")
        _require_ts(self, "checked_at")

    def validate(self) -> None:
        pass

    def to_payload(self) -> Dict[str, Any]:
        return {
            "nudge_id": self.nudge_id,
            "passed": self.passed,
            "violations": [[rule_id, reason] for rule_id, reason in self.violations],
            "checked_at": format_ts(self.checked_at),
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "ComplianceVerdict":
        return cls(
            nudge_id=payload.get("nudge_id", ""),
            passed=payload.get("passed", False),
            violations=tuple((v[0], v[1]) for v in payload.get("violations", [])),
            checked_at=parse_ts(payload.get("checked_at", "")),
        )


@dataclass(frozen=True)
class TraceRecord:
    session_id: str
    seq: int
    stage: TraceStage
    at: datetime
    payload: str

    def __post_init__(self):
        _require_str(self, "session_id")
        _require_int(self, "seq", minimum=1)
        _require_enum(self, "stage", TraceStage)
        _require_ts(self, "at")
        _require_str(self, "payload")

    def validate(self) -> None:
        pass

    def payload_dict(self) -> Dict[str, Any]:
        return json.loads(self.payload)

    def to_payload(self) -> Dict[str, Any]:
        return {
            "session_id": self.session_id,
            "seq": self.seq,
            "stage": self.stage.value,
            "at": format_ts(self.at),
            "payload": self.payload,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "TraceRecord":
        return cls(
            session_id=payload.get("session_id", ""),
            seq=payload.get("seq", 0),
            stage=payload.get("stage", ""),
            at=parse_ts(payload.get("at", "")),
            payload=payload.get("payload", ""),
        )


@dataclass(frozen=True)
class FeedbackRecord:
    session_id: str
    nudge_id: str
    thumbs: ThumbSignal
    at: datetime

    def __post_init__(self):
        _require_str(self, "session_id")
        _require_str(self, "nudge_id")
        _require_enum(self, "thumbs", ThumbSignal)
        _require_ts(self, "at")

    def validate(self) -> None:
        pass

    def to_payload(self) -> Dict[str, Any]:
        return {
            "session_id": self.session_id,
            "nudge_id": self.nudge_id,
            "thumbs": self.thumbs.value,
            "at": format_ts(self.at),
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "FeedbackRecord":
        return cls(
            session_id=payload.get("session_id", ""),
            nudge_id=payload.get("nudge_id", ""),
            thumbs=payload.get("thumbs", ""),
            at=parse_ts(payload.get("at", "")),
        )


@dataclass(frozen=True)
class GroupStats:
    delivered: int
    blocked: int
    strategy_histogram: Dict[str, int]

    def __post_init__(self):
        _require_int(self, "delivered")
        _require_int(self, "blocked")
        _set(self, "strategy_histogram", dict(self.strategy_histogram))

    def validate(self) -> None:
        pass

    @property
    def block_rate(self) -> float:
        total = self.delivered + self.blocked
        return self.blocked / total if total else 0.0

    def to_payload(self) -> Dict[str, Any]:
        return {
            "delivered": self.delivered,
            "blocked": self.blocked,
            "strategy_histogram": dict(self.strategy_histogram),
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "GroupStats":
        return cls(
            delivered=payload.get("delivered", 0),
            blocked=payload.get("blocked", 0),
            strategy_histogram=dict(payload.get("strategy_histogram", {})),
        )


# Stand-in for an unbounded ratio (some group blocks, another never does).
# Canonical floats must be finite, so infinity is represented by a value
# that exceeds any plausible threshold.
UNBOUNDED_DISPARITY = 1e9


@dataclass(frozen=True)
class FairnessReport:
    grouping_key: str
    threshold: float
    per_group: Dict[str, GroupStats]
    disparity_ratio: float
    flagged: bool

    def __post_init__(self):
        _require_str(self, "grouping_key")
        _coerce_floats(self, "threshold", "disparity_ratio")
        _set(self, "per_group", dict(self.per_group))
        if self.disparity_ratio < 1.0:
            raise InvariantViolation("FairnessReport.disparity_ratio must be >= 1")
        if not isinstance(self.flagged, bool):
            raise InvariantViolation("FairnessReport.flagged must be a boolean")

    def validate(self) -> None:
        pass

    def to_payload(self) -> Dict[str, Any]:
        return {
            "grouping_key": self.grouping_key,
            "threshold": self.threshold,
            "per_group": {name: stats.to_payload() for name, stats in self.per_group.items()},
            "disparity_ratio": self.disparity_ratio,
            "flagged": self.flagged,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "FairnessReport":
        return cls(
            grouping_key=payload.get("grouping_key", ""),
            threshold=payload.get("threshold", 0.0),
            per_group={
                name: GroupStats.from_payload(stats)
                for name, stats in payload.get("per_group", {}).items()
            },
            disparity_ratio=payload.get("disparity_ratio", 1.0),
            flagged=payload.get("flagged", False),
        )


NO_NUDGE_REASONS = (
    "insufficient_data",
    "profiling_failed",
    "no_compatible_strategy",
    "no_grounding_data",
    "compliance_exhausted",
)


@dataclass(frozen=True)
class PipelineOutcome:
    session_id: str
    status: OutcomeStatus
    delivery: Optional[NudgeDelivery]
    reason: Optional[str]

    def __post_init__(self):
        _require_str(self, "session_id")
        _require_enum(self, "status", OutcomeStatus)
        if self.status is OutcomeStatus.DELIVERED:
            if self.delivery is None or self.reason is not None:
                raise InvariantViolation(
                    "PipelineOutcome delivered requires a delivery and no reason"
                )
        else:
            if self.delivery is not None:
                raise InvariantViolation("PipelineOutcome no_nudge must not carry a delivery")
            if self.reason not in NO_NUDGE_REASONS:
                raise InvariantViolation(
                    f"PipelineOutcome no_nudge reason must be one of {NO_NUDGE_REASONS}"
                )

    def validate(self) -> None:
        if self.delivery is not None:
            self.delivery.validate()

    def to_payload(self) -> Dict[str, Any]:
        return {
            "session_id": self.session_id,
            "status": self.status.value,
            "delivery": self.delivery.to_payload() if self.delivery else None,
            "reason": self.reason,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "PipelineOutcome":
        delivery = payload.get("delivery")
        return cls(
            session_id=payload.get("session_id", ""),
            status=payload.get("status", ""),
            delivery=NudgeDelivery.from_payload(delivery) if delivery else None,
            reason=payload.get("reason"),
        )


# ============================================================================
# Canonical encoding
# ============================================================================


def _encode(value: Any, out: List[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise InvariantViolation("canonical encoding requires finite floats")
        if value == 0.0:
            value = 0.0  # fold -0.0 so equal values share one encoding
        out.append(format(value, ".6f"))
    elif isinstance(value, datetime):
        out.append(json.dumps(format_ts(value)))
    elif isinstance(value, Enum):
        _encode(value.value, out)
    elif isinstance(value, Mapping):
        out.append("{")
        first = True
        for key in sorted(value.keys()):
            if not isinstance(key, str):
                raise InvariantViolation("canonical encoding requires string keys")
            if not first:
                out.append(",")
            first = False
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for index, item in enumerate(value):
            if index:
                out.append(",")
            _encode(item, out)
        out.append("]")
    else:
        raise InvariantViolation(
            f"canonical encoding does not cover {type(value).__name__}"
        )


def canonical_serialize(value: Any) -> bytes:
    """Encode a domain value (or plain payload tree) as canonical JSON bytes.

    Keys are sorted, floats carry exactly six fractional digits, and the
    value's invariants are re-checked first: a violating value is refused
    with the broken invariant named rather than silently written.
    """
    if hasattr(value, "validate") and hasattr(value, "to_payload"):
        value.validate()
        value = value.to_payload()
    out: List[str] = []
    _encode(value, out)
    return "".join(out).encode("utf-8")


def canonical_json(value: Any) -> str:
    return canonical_serialize(value).decode("utf-8")


def deserialize(data, cls):
    """Inverse of canonical_serialize for a known domain type."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    payload = json.loads(data)
    return cls.from_payload(payload)
