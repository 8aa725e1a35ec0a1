"""HTTP surface over the engine.

Thin by design: parse, delegate, serialize. Every response body goes
through the canonical serializer so the dashboard and the trace payloads
share one wire format. No business logic lives here.
"""

from __future__ import annotations

import json
from typing import Any, Optional

from fastapi import FastAPI, Request, Response

from nudge_engine.capture import BatchRejected
from nudge_engine.domain import (
    EmotionDistribution,
    InvariantViolation,
    RawEvent,
    ReasonerKind,
    ThumbSignal,
    canonical_serialize,
    enum_from_label,
)
from nudge_engine.guardrails import AuditError
from nudge_engine.orchestrator import (
    Engine,
    ExplanationUnavailable,
    UnknownNudge,
    UnknownSession,
)

REASONER_PARAM = {
    "rule": ReasonerKind.RULE_BASED,
    "llm": ReasonerKind.LLM_BACKED,
}


def _canonical(payload: Any, status_code: int = 200) -> Response:
    return Response(
        content=canonical_serialize(payload),
        status_code=status_code,
        media_type="application/json",
    )


def _error(status_code: int, message: str) -> Response:
    return _canonical({"error": message}, status_code=status_code)


async def _body(request: Request) -> Any:
    raw = await request.body()
    if not raw:
        return {}
    try:
        return json.loads(raw)
    except json.JSONDecodeError as err:
        raise BadRequest(f"body is not valid JSON: {err}") from None


class BadRequest(ValueError):
    pass


def create_app(engine: Optional[Engine] = None) -> FastAPI:
    app = FastAPI(title="nudge-engine", docs_url=None, redoc_url=None)
    app.state.engine = engine or Engine()

    def eng() -> Engine:
        return app.state.engine

    @app.exception_handler(UnknownSession)
    async def _unknown_session(request: Request, exc: UnknownSession) -> Response:
        return _error(404, f"unknown session: {exc.args[0]}")

    @app.exception_handler(UnknownNudge)
    async def _unknown_nudge(request: Request, exc: UnknownNudge) -> Response:
        return _error(404, str(exc.args[0]))

    @app.exception_handler(ExplanationUnavailable)
    async def _not_ready(request: Request, exc: ExplanationUnavailable) -> Response:
        return _error(404, str(exc.args[0]))

    @app.exception_handler(BadRequest)
    @app.exception_handler(InvariantViolation)
    @app.exception_handler(BatchRejected)
    @app.exception_handler(AuditError)
    async def _rejected(request: Request, exc: ValueError) -> Response:
        return _error(422, str(exc))

    @app.post("/sessions")
    async def create_session(request: Request) -> Response:
        body = await _body(request)
        if not isinstance(body, dict):
            raise BadRequest("expected a JSON object")
        state = eng().create_session(
            session_id=body.get("session_id"), user_id=body.get("user_id")
        )
        return _canonical(
            {"session_id": state.session_id, "user_id": state.user_id}, status_code=201
        )

    @app.post("/sessions/{session_id}/context")
    async def set_context(session_id: str, request: Request) -> Response:
        body = await _body(request)
        if not isinstance(body, dict) or "device" not in body:
            raise BadRequest("context body needs at least a device field")
        snapshot = eng().set_context(
            session_id,
            device=body["device"],
            at=body.get("at"),
            utc_offset_minutes=body.get("utc_offset_minutes", 0),
        )
        return _canonical(snapshot.to_payload())

    @app.post("/sessions/{session_id}/events")
    async def ingest_events(session_id: str, request: Request) -> Response:
        body = await _body(request)
        if not isinstance(body, list):
            raise BadRequest("events body must be a JSON array of events")
        events = [RawEvent.from_payload(item) for item in body]
        signals = eng().ingest_events(session_id, events)
        return _canonical(signals.to_payload())

    @app.post("/sessions/{session_id}/emotion")
    async def record_emotion(session_id: str, request: Request) -> Response:
        body = await _body(request)
        if not isinstance(body, dict):
            raise BadRequest("expected a JSON object")
        dist = EmotionDistribution.from_payload(body)
        eng().record_emotion(session_id, dist)
        return _canonical({"recorded": True, "phase": dist.phase.value})

    @app.post("/sessions/{session_id}/run")
    async def run_pipeline(session_id: str, reasoner: str = "rule") -> Response:
        kind = REASONER_PARAM.get(reasoner)
        if kind is None:
            raise BadRequest(
                f"reasoner must be one of {sorted(REASONER_PARAM)}, got {reasoner!r}"
            )
        outcome = eng().run_pipeline(session_id, kind)
        return _canonical(outcome.to_payload())

    @app.get("/sessions/{session_id}/ui-context")
    async def ui_context(session_id: str) -> Response:
        eng().store.get(session_id)  # 404 on unknown session, not "no delivery"
        return _canonical(eng().ui_context(session_id).to_payload())

    @app.post("/sessions/{session_id}/feedback")
    async def submit_feedback(session_id: str, request: Request) -> Response:
        body = await _body(request)
        if not isinstance(body, dict) or "nudge_id" not in body or "thumbs" not in body:
            raise BadRequest("feedback body needs nudge_id and thumbs")
        thumbs = enum_from_label(ThumbSignal, body["thumbs"])
        record = eng().submit_feedback(session_id, body["nudge_id"], thumbs)
        return _canonical(record.to_payload())

    @app.get("/sessions/{session_id}/explanation")
    async def explanation(session_id: str) -> Response:
        eng().store.get(session_id)
        text = eng().explain_session(session_id)
        return _canonical({"session_id": session_id, "explanation": text})

    @app.get("/admin/fairness")
    async def fairness(group_by: str = "device", threshold: Optional[float] = None) -> Response:
        report = eng().fairness_report(group_by, threshold)
        return _canonical(report.to_payload())

    @app.get("/admin/traces/{session_id}")
    async def traces(session_id: str) -> Response:
        eng().store.get(session_id)
        records = eng().trace_log.records(session_id)
        return _canonical([r.to_payload() for r in records])

    return app
