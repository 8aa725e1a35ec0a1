"""Turns raw dashboard telemetry into structured behavioral signals.

Capture is deliberately dumb: no interpretation beyond counting, pairing,
and the appliance fold shared with the rest of the engine. Classification
happens downstream.
"""

from __future__ import annotations

import logging
from datetime import datetime, timedelta
from typing import Iterable, List, Optional, Sequence, Union

from nudge_engine.domain import (
    ApplianceInteraction,
    BehavioralSignals,
    ContextSnapshot,
    DeviceType,
    EMOTION_KEYS,
    EmotionDistribution,
    EventKind,
    InvariantViolation,
    RawEvent,
    TimeOfDay,
    enum_from_label,
    parse_ts,
    replay_appliances,
)

logger = logging.getLogger(__name__)


class BatchRejected(ValueError):
    """A signal batch failed validation; session state was left untouched."""

    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"event[{index}]: {message}")


# ============================================================================
# Context
# ============================================================================

# Local-time buckets: [05:00, 12:00) morning, [12:00, 18:00) afternoon,
# everything else (including the small hours) evening.
_MORNING_START = 5
_AFTERNOON_START = 12
_EVENING_START = 18


def time_of_day_bucket(at: datetime, utc_offset_minutes: int = 0) -> TimeOfDay:
    local = at + timedelta(minutes=utc_offset_minutes)
    hour = local.hour
    if _MORNING_START <= hour < _AFTERNOON_START:
        return TimeOfDay.MORNING
    if _AFTERNOON_START <= hour < _EVENING_START:
        return TimeOfDay.AFTERNOON
    return TimeOfDay.EVENING


def capture_context(
    session_id: str,
    device: Union[DeviceType, str],
    at: Union[datetime, str],
    utc_offset_minutes: int = 0,
) -> ContextSnapshot:
    """Build a context snapshot; the offset only affects bucketing, the
    stored timestamp stays UTC."""
    device_type = enum_from_label(DeviceType, device)
    captured_at = parse_ts(at) if isinstance(at, str) else at
    if not isinstance(utc_offset_minutes, int) or isinstance(utc_offset_minutes, bool):
        raise InvariantViolation("utc_offset_minutes must be an integer")
    bucket = time_of_day_bucket(captured_at, utc_offset_minutes)
    return ContextSnapshot(
        session_id=session_id,
        device=device_type,
        time_of_day=bucket,
        captured_at=captured_at,
    )


# ============================================================================
# Signals
# ============================================================================

# Events that resolve a pending page focus into a hesitation pair.
_ACTION_KINDS = (EventKind.CLICK, EventKind.APPLIANCE_ACTION)


def _frame_from_event(event: RawEvent) -> EmotionDistribution:
    attrs = event.attributes
    return EmotionDistribution(
        **{key: attrs[key] for key in EMOTION_KEYS},
        phase=attrs["phase"],
    )


class SignalAccumulator:
    """Session-scoped fold over raw events.

    ingest() is atomic: the batch is validated and folded on a scratch copy,
    and only a fully clean batch mutates the accumulator.
    """

    def __init__(self, session_id: str):
        if not session_id:
            raise InvariantViolation("session_id must be non-empty")
        self.session_id = session_id
        self._clicks = 0
        self._hesitation_sum_ms = 0.0
        self._hesitation_pairs = 0
        self._pending_focus: Optional[datetime] = None
        self._interactions: List[ApplianceInteraction] = []
        self._frames: List[EmotionDistribution] = []

    # -- validation ----------------------------------------------------------

    def _check_batch(self, events: Sequence[RawEvent]) -> None:
        last_at = None
        for index, event in enumerate(events):
            if not isinstance(event, RawEvent):
                raise BatchRejected(index, "not a RawEvent")
            if event.session_id != self.session_id:
                raise BatchRejected(
                    index,
                    f"session_id {event.session_id!r} does not match {self.session_id!r}",
                )
            if last_at is not None and event.at < last_at:
                raise BatchRejected(index, "timestamps must be non-decreasing within a batch")
            last_at = event.at
            if event.kind is EventKind.EMOTION_FRAME:
                try:
                    _frame_from_event(event)
                except InvariantViolation as err:
                    raise BatchRejected(index, str(err)) from None

    # -- folding -------------------------------------------------------------

    def ingest(self, events: Sequence[RawEvent]) -> BehavioralSignals:
        """Fold a validated batch into the running aggregates and return the
        updated snapshot. Raises BatchRejected (naming the offending index)
        without touching state if any event is invalid."""
        events = list(events)
        self._check_batch(events)
        # scratch copies: a failure mid-fold must leave the session untouched
        clicks = self._clicks
        hes_sum = self._hesitation_sum_ms
        hes_pairs = self._hesitation_pairs
        pending = self._pending_focus
        interactions = list(self._interactions)
        frames = list(self._frames)
        for index, event in enumerate(events):
            kind = event.kind
            try:
                if kind is EventKind.CLICK:
                    clicks += 1
                elif kind is EventKind.PAGE_FOCUS:
                    pending = event.at
                elif kind is EventKind.APPLIANCE_ACTION:
                    attrs = event.attributes
                    interactions.append(
                        ApplianceInteraction(
                            appliance_id=attrs["appliance_id"],
                            wattage_w=attrs["wattage_w"],
                            usage_hours=attrs.get("usage_hours", 0.0),
                            action=attrs["action"],
                        )
                    )
                elif kind is EventKind.EMOTION_FRAME:
                    frames.append(_frame_from_event(event))
                # hover and page_blur carry no aggregate weight
            except InvariantViolation as err:
                raise BatchRejected(index, str(err)) from None
            if kind in _ACTION_KINDS and pending is not None:
                gap_ms = (event.at - pending).total_seconds() * 1000.0
                hes_sum += gap_ms
                hes_pairs += 1
                pending = None
        self._clicks = clicks
        self._hesitation_sum_ms = hes_sum
        self._hesitation_pairs = hes_pairs
        self._pending_focus = pending
        self._interactions = interactions
        self._frames = frames
        return self.snapshot()

    def record_frame(self, frame: EmotionDistribution) -> None:
        self._frames.append(frame)

    def snapshot(self) -> BehavioralSignals:
        interactions = tuple(self._interactions)
        mean = (
            self._hesitation_sum_ms / self._hesitation_pairs
            if self._hesitation_pairs
            else 0.0
        )
        return BehavioralSignals(
            click_count=self._clicks,
            mean_hesitation_ms=mean,
            appliance_interactions=interactions,
            total_consumption_kwh=replay_appliances(interactions).consumption_kwh,
            emotion_frames=tuple(self._frames),
        )


def ingest_signals(session_id: str, events: Iterable[RawEvent]) -> BehavioralSignals:
    """One-shot fold: signals for a single batch starting from empty state."""
    acc = SignalAccumulator(session_id)
    return acc.ingest(list(events))
