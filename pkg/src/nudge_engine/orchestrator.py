"""Sequential pipeline engine: one session at a time, every stage traced.

The engine owns session state, drives capture output through profiling,
selection, generation, and the compliance interceptor, and writes one
TraceRecord per stage before the next stage starts. Retries are bounded:
three drafts for the first strategy, one reselect, one more draft, then
the run ends without a nudge. Nothing reaches the delivery stage without
a passed verdict standing directly behind it.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from nudge_engine.capture import SignalAccumulator, capture_context
from nudge_engine.config import EngineConfig, default_config
from nudge_engine.domain import (
    BehavioralSignals,
    BehavioralStage,
    ContextSnapshot,
    EmotionDistribution,
    FeedbackRecord,
    InvariantViolation,
    NudgeDelivery,
    NudgePhase,
    OutcomeStatus,
    PipelineOutcome,
    RawEvent,
    ReasonerKind,
    ThumbSignal,
    TraceRecord,
    TraceStage,
    UIContext,
    canonical_json,
)
from nudge_engine.gateway import LlmGateway
from nudge_engine.guardrails import TraceLog, build_default_rules, validate_nudge
from nudge_engine.intelligence import (
    GroundingError,
    NoStrategyError,
    adapt_ui,
    compose_explanation,
    generate_nudge,
    select_strategy,
)
from nudge_engine.profiling import ProfilingError, build_profile

_REDUCING_STAGES = (BehavioralStage.ACTION, BehavioralStage.MAINTENANCE)

# retry budget: drafts for the first strategy, then one reselect with one draft
FIRST_STRATEGY_ATTEMPTS = 3
SECOND_STRATEGY_ATTEMPTS = 1


class UnknownSession(KeyError):
    pass


class UnknownNudge(KeyError):
    pass


class ExplanationUnavailable(LookupError):
    """No run in this session has reached a passed verdict yet."""


# ============================================================================
# Session state and stores
# ============================================================================


@dataclass
class SessionState:
    session_id: str
    user_id: Optional[str] = None
    context: Optional[ContextSnapshot] = None
    events: List[RawEvent] = field(default_factory=list)
    event_batches: List[List[Dict[str, Any]]] = field(default_factory=list)
    batches: int = 0
    run_count: int = 0
    deliveries: Dict[str, str] = field(default_factory=dict)  # nudge_id -> strategy_id
    feedback: List[FeedbackRecord] = field(default_factory=list)
    last_ui: Optional[UIContext] = None
    last_outcome: Optional[PipelineOutcome] = None
    accumulator: SignalAccumulator = None  # built in __post_init__
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.accumulator is None:
            self.accumulator = SignalAccumulator(self.session_id)


class SessionStore:
    """In-memory session registry; subclass persists if it wants to."""

    def __init__(self):
        self._sessions: Dict[str, SessionState] = {}
        self._counter = 0
        # per user (or per session when anonymous): ordered per-session stage
        # history and the feedback stream, both feeding future selections
        self._stage_history: Dict[str, Dict[str, str]] = {}
        self._feedback_log: Dict[str, List[Tuple[str, ThumbSignal]]] = {}
        self._lock = threading.Lock()

    def create(self, session_id: Optional[str] = None, user_id: Optional[str] = None) -> SessionState:
        with self._lock:
            if session_id is None:
                self._counter += 1
                session_id = f"s-{self._counter:04d}"
            if session_id in self._sessions:
                raise InvariantViolation(f"session {session_id!r} already exists")
            state = SessionState(session_id=session_id, user_id=user_id)
            self._sessions[session_id] = state
            self.persist(state)
            return state

    def get(self, session_id: str) -> SessionState:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise UnknownSession(session_id) from None

    def ids(self) -> Tuple[str, ...]:
        return tuple(self._sessions)

    def _user_key(self, state: SessionState) -> str:
        return state.user_id or f"anon:{state.session_id}"

    def record_stage(self, state: SessionState, stage: BehavioralStage) -> None:
        history = self._stage_history.setdefault(self._user_key(state), {})
        history[state.session_id] = stage.value
        self.persist(state)

    def prior_reducing_sessions(self, state: SessionState) -> int:
        """Trailing streak of earlier sessions that ended in a reducing stage."""
        history = self._stage_history.get(self._user_key(state), {})
        streak = 0
        for session_id, stage in reversed(list(history.items())):
            if session_id == state.session_id:
                continue
            if stage in (s.value for s in _REDUCING_STAGES):
                streak += 1
            else:
                break
        return streak

    def record_feedback(self, state: SessionState, strategy_id: str, thumbs: ThumbSignal) -> None:
        self._feedback_log.setdefault(self._user_key(state), []).append((strategy_id, thumbs))
        self.persist(state)

    def recent_feedback(self, state: SessionState) -> Dict[str, ThumbSignal]:
        latest: Dict[str, ThumbSignal] = {}
        for strategy_id, thumbs in self._feedback_log.get(self._user_key(state), []):
            latest[strategy_id] = thumbs
        return latest

    def persist(self, state: SessionState) -> None:
        """In-memory store keeps nothing on disk."""


class FileSessionStore(SessionStore):
    """Same behavior, with a JSON snapshot per mutation for restarts.

    Raw events are replayed through a fresh accumulator at load time, so
    derived signal state never gets serialized (it stays one fold away).
    Cross-session state (stage history, feedback, the id counter) lives in
    one shared file so no per-session snapshot can go stale.
    """

    SHARED = "_shared.json"

    def __init__(self, directory: Path):
        super().__init__()
        self._dir = Path(directory)
        self._dir.mkdir(parents=True, exist_ok=True)
        self._load()

    def _path(self, session_id: str) -> Path:
        return self._dir / f"{session_id}.json"

    def _load(self) -> None:
        shared_path = self._dir / self.SHARED
        if shared_path.exists():
            shared = json.loads(shared_path.read_text(encoding="utf-8"))
            self._counter = shared.get("counter", 0)
            self._stage_history = {
                k: dict(v) for k, v in shared.get("stage_history", {}).items()
            }
            self._feedback_log = {
                user: [(sid, ThumbSignal(sig)) for sid, sig in items]
                for user, items in shared.get("feedback_log", {}).items()
            }
        for path in sorted(self._dir.glob("*.json")):
            if path.name == self.SHARED:
                continue
            raw = json.loads(path.read_text(encoding="utf-8"))
            state = SessionState(session_id=raw["session_id"], user_id=raw.get("user_id"))
            if raw.get("context") is not None:
                state.context = ContextSnapshot.from_payload(raw["context"])
            state.event_batches = list(raw.get("event_batches", []))
            for batch in state.event_batches:
                events = [RawEvent.from_payload(e) for e in batch]
                state.accumulator.ingest(events)
                state.events.extend(events)
                state.batches += 1
            for frame in raw.get("frames", []):
                state.accumulator.record_frame(EmotionDistribution.from_payload(frame))
            state.run_count = raw.get("run_count", 0)
            state.deliveries = dict(raw.get("deliveries", {}))
            if raw.get("last_ui") is not None:
                state.last_ui = UIContext.from_payload(raw["last_ui"])
            self._sessions[state.session_id] = state

    def persist(self, state: SessionState) -> None:
        # events are stored as one batch per ingest call, replayable in order
        snapshot = {
            "session_id": state.session_id,
            "user_id": state.user_id,
            "context": state.context.to_payload() if state.context else None,
            "event_batches": state.event_batches,
            "frames": [f.to_payload() for f in state.accumulator.snapshot().emotion_frames],
            "run_count": state.run_count,
            "deliveries": state.deliveries,
            "last_ui": state.last_ui.to_payload() if state.last_ui else None,
        }
        self._path(state.session_id).write_text(
            json.dumps(snapshot, indent=1, sort_keys=True), encoding="utf-8"
        )
        shared = {
            "counter": self._counter,
            "stage_history": self._stage_history,
            "feedback_log": {
                user: [[sid, sig.value] for sid, sig in items]
                for user, items in self._feedback_log.items()
            },
        }
        (self._dir / self.SHARED).write_text(
            json.dumps(shared, indent=1, sort_keys=True), encoding="utf-8"
        )


# ============================================================================
# Engine
# ============================================================================


def _wall_clock() -> datetime:
    return datetime.now(timezone.utc)


MessageGenerator = Callable[[str, BehavioralSignals, int], str]


class Engine:
    """The pipeline façade every entry point (HTTP, CLI, tests) drives.

    clock and message_generator are injectable: a fixed-step clock makes
    replays byte-for-byte reproducible, and a hostile generator lets tests
    prove the interceptor actually stands in front of delivery.
    """

    def __init__(
        self,
        config: Optional[EngineConfig] = None,
        store: Optional[SessionStore] = None,
        trace_log: Optional[TraceLog] = None,
        gateway: Optional[LlmGateway] = None,
        clock: Callable[[], datetime] = _wall_clock,
        message_generator: Optional[MessageGenerator] = None,
    ):
        self.config = config or default_config()
        self.store = store or SessionStore()
        self.trace_log = trace_log if trace_log is not None else TraceLog()
        self.gateway = gateway or LlmGateway(self.config)
        self.rules = build_default_rules(self.config)
        self._clock = clock
        self._message_generator = message_generator
        self._trace_lock = threading.Lock()

    # -- session lifecycle ---------------------------------------------------

    def create_session(
        self, session_id: Optional[str] = None, user_id: Optional[str] = None
    ) -> SessionState:
        return self.store.create(session_id=session_id, user_id=user_id)

    def set_context(
        self,
        session_id: str,
        device: str,
        at: Optional[datetime] = None,
        utc_offset_minutes: int = 0,
    ) -> ContextSnapshot:
        state = self.store.get(session_id)
        with state.lock:
            snapshot = capture_context(
                session_id, device, at or self._clock(), utc_offset_minutes
            )
            state.context = snapshot
            self.store.persist(state)
            return snapshot

    def ingest_events(self, session_id: str, events: Sequence[RawEvent]) -> BehavioralSignals:
        state = self.store.get(session_id)
        with state.lock:
            signals = state.accumulator.ingest(list(events))
            if events:
                state.events.extend(events)
                state.event_batches.append([e.to_payload() for e in events])
                state.batches += 1
            self.store.persist(state)
            return signals

    def record_emotion(self, session_id: str, dist: EmotionDistribution) -> None:
        state = self.store.get(session_id)
        with state.lock:
            state.accumulator.record_frame(dist)
            stage = (
                TraceStage.EMOTION_PRE
                if dist.phase is NudgePhase.PRE_NUDGE
                else TraceStage.EMOTION_POST
            )
            self._emit(session_id, stage, dist.to_payload())
            self.store.persist(state)

    # -- the pipeline ----------------------------------------------------------

    def run_pipeline(
        self, session_id: str, reasoner: ReasonerKind = ReasonerKind.RULE_BASED
    ) -> PipelineOutcome:
        state = self.store.get(session_id)
        with state.lock:
            return self._run_locked(state, reasoner)

    def _run_locked(self, state: SessionState, reasoner: ReasonerKind) -> PipelineOutcome:
        session_id = state.session_id
        if state.context is None or state.batches == 0:
            return self._finish(state, self._no_nudge(session_id, "insufficient_data"))

        signals = state.accumulator.snapshot()
        state.run_count += 1
        nudge_id = f"{session_id}-n{state.run_count}"

        self._emit(
            session_id,
            TraceStage.RAW_SIGNALS,
            {
                "run": state.run_count,
                "batches": state.batches,
                "click_count": signals.click_count,
                "appliance_interactions": len(signals.appliance_interactions),
                "emotion_frames": len(signals.emotion_frames),
            },
        )
        self._emit(session_id, TraceStage.CONTEXT, state.context.to_payload())

        try:
            profile, classifications = build_profile(
                signals,
                state.context,
                self.config,
                at=self._clock(),
                reasoner=reasoner,
                gateway=self.gateway,
                prior_reducing_sessions=self.store.prior_reducing_sessions(state),
            )
        except (ProfilingError, InvariantViolation):
            return self._finish(state, self._no_nudge(session_id, "profiling_failed"))
        for classification in classifications:
            self._emit(session_id, classification.stage, classification.trace_payload())
        self.store.record_stage(state, profile.behavioral_stage)

        recent = self.store.recent_feedback(state)
        excluded: Tuple[str, ...] = ()
        any_verdict_failed = False
        attempt = 0

        for round_attempts in (FIRST_STRATEGY_ATTEMPTS, SECOND_STRATEGY_ATTEMPTS):
            try:
                selection = select_strategy(
                    profile, self.config.taxonomy, recent, exclude=excluded
                )
            except NoStrategyError:
                reason = "compliance_exhausted" if any_verdict_failed else "no_compatible_strategy"
                return self._finish(state, self._no_nudge(session_id, reason))
            self._emit(session_id, TraceStage.STRATEGY_SELECTION, selection.to_payload())
            ui = adapt_ui(profile, self.config.palette)
            explanation = compose_explanation(
                profile, selection, self.config.taxonomy, self.config, reasoner, self.gateway
            )

            hint = ""
            for _ in range(round_attempts):
                attempt += 1
                try:
                    draft = self._draft(selection.strategy_id, signals, attempt, hint, reasoner)
                except GroundingError:
                    return self._finish(state, self._no_nudge(session_id, "no_grounding_data"))
                self._emit(session_id, TraceStage.NUDGE_DRAFT, draft.trace_payload())

                candidate = NudgeDelivery(
                    nudge_id=nudge_id,
                    session_id=session_id,
                    strategy_id=selection.strategy_id,
                    message=draft.message,
                    explanation=explanation,
                    ui=ui,
                    delivered_at=self._clock(),
                )
                verdict = validate_nudge(candidate, signals, self.rules, at=self._clock())
                self._emit(
                    session_id,
                    TraceStage.COMPLIANCE_VERDICT,
                    dict(verdict.to_payload(), attempt=attempt),
                )
                if verdict.passed:
                    self._emit(session_id, TraceStage.UI_ADAPTATION, ui.to_payload())
                    self._emit(session_id, TraceStage.DELIVERY, candidate.to_payload())
                    state.deliveries[nudge_id] = selection.strategy_id
                    state.last_ui = ui
                    outcome = PipelineOutcome(
                        session_id=session_id,
                        status=OutcomeStatus.DELIVERED,
                        delivery=candidate,
                        reason=None,
                    )
                    return self._finish(state, outcome)

                any_verdict_failed = True
                hint = "; ".join(f"{rule}: {why}" for rule, why in verdict.violations)
            excluded = excluded + (selection.strategy_id,)

        return self._finish(state, self._no_nudge(session_id, "compliance_exhausted"))

    def _draft(self, strategy_id, signals, attempt, hint, reasoner):
        if self._message_generator is not None:
            from nudge_engine.intelligence import NudgeDraft, grounding_facts

            grounding_facts(signals)  # poisoned generator still needs grounding data
            message = self._message_generator(strategy_id, signals, attempt)
            return NudgeDraft(strategy_id, message, attempt, ReasonerKind.RULE_BASED, False)
        return generate_nudge(
            strategy_id,
            signals,
            self.config,
            attempt=attempt,
            hint=hint,
            reasoner=reasoner,
            gateway=self.gateway,
        )

    def _no_nudge(self, session_id: str, reason: str) -> PipelineOutcome:
        return PipelineOutcome(
            session_id=session_id, status=OutcomeStatus.NO_NUDGE, delivery=None, reason=reason
        )

    def _finish(self, state: SessionState, outcome: PipelineOutcome) -> PipelineOutcome:
        state.last_outcome = outcome
        self.store.persist(state)
        return outcome

    # -- feedback and transparency --------------------------------------------

    def submit_feedback(
        self, session_id: str, nudge_id: str, thumbs: ThumbSignal
    ) -> FeedbackRecord:
        state = self.store.get(session_id)
        with state.lock:
            strategy_id = state.deliveries.get(nudge_id)
            if strategy_id is None:
                raise UnknownNudge(f"nudge {nudge_id!r} was not delivered in session {session_id!r}")
            for existing in state.feedback:
                if existing.nudge_id == nudge_id and existing.thumbs is thumbs:
                    return existing  # idempotent: same signal, no second trace
            record = FeedbackRecord(
                session_id=session_id, nudge_id=nudge_id, thumbs=thumbs, at=self._clock()
            )
            state.feedback.append(record)
            self.store.record_feedback(state, strategy_id, thumbs)
            self._emit(
                session_id,
                TraceStage.FEEDBACK,
                dict(record.to_payload(), strategy_id=strategy_id),
            )
            return record

    def explain_session(self, session_id: str) -> str:
        """Rebuild the transparency text for the most recent validated run,
        purely from the trace log."""
        records = self.trace_log.records(session_id)
        from nudge_engine.guardrails import split_runs

        for run in reversed(split_runs(records)):
            passed = [
                r
                for r in run
                if r.stage is TraceStage.COMPLIANCE_VERDICT and r.payload_dict().get("passed")
            ]
            if not passed:
                continue
            values = {}
            for record in run:
                if record.stage in (
                    TraceStage.COGNITIVE_MODE,
                    TraceStage.BEHAVIORAL_STAGE,
                    TraceStage.ATTENTION,
                ):
                    values[record.stage.value] = record.payload_dict()["value"]
            selections = [r for r in run if r.stage is TraceStage.STRATEGY_SELECTION]
            if len(values) != 3 or not selections:
                continue
            selection = selections[-1].payload_dict()
            rejected = selection.get("rejection_reasons", {})
            rejected_text = (
                "; ".join(f"{sid} ({why})" for sid, why in sorted(rejected.items()))
                if rejected
                else "only compatible option"
            )
            return (
                f"Profile: {values['cognitive_mode']} thinking, "
                f"{values['behavioral_stage']} stage, {values['attention']} attention. "
                f"Chosen strategy: {selection['strategy_id']} because "
                f"{selection['selected_because']}. Alternatives: {rejected_text}."
            )
        raise ExplanationUnavailable(
            f"session {session_id!r} has no run with a passed verdict"
        )

    def ui_context(self, session_id: str) -> UIContext:
        state = self.store.get(session_id)
        if state.last_ui is None:
            raise ExplanationUnavailable(f"session {session_id!r} has no delivered nudge yet")
        return state.last_ui

    def fairness_report(self, group_by: str, threshold: Optional[float] = None):
        from nudge_engine.guardrails import audit_fairness

        return audit_fairness(
            self.trace_log.records(),
            group_by,
            threshold if threshold is not None else self.config.fairness_threshold,
        )

    # -- tracing ----------------------------------------------------------------

    def _emit(self, session_id: str, stage: TraceStage, payload: Mapping[str, Any]) -> None:
        with self._trace_lock:
            record = TraceRecord(
                session_id=session_id,
                seq=self.trace_log.next_seq(session_id),
                stage=stage,
                at=self._clock(),
                payload=canonical_json(dict(payload)),
            )
            self.trace_log.append(record)
