"""End-to-end acceptance gates, one test per criterion.

Each test prints a single PASS line with its measured facts once every
assertion for that criterion has held; pytest -v gives the one-line
pass/fail verdict per criterion either way.
"""

import csv
import json
import random
import time
from datetime import datetime, timedelta, timezone

import pytest

from nudge_engine.config import default_config
from nudge_engine.domain import (
    EMOTION_KEYS,
    AttentionLevel,
    BehavioralStage,
    CognitiveMode,
    Complexity,
    EmotionDistribution,
    InvariantViolation,
    NudgePhase,
    OutcomeStatus,
    ReasonerKind,
    TraceRecord,
    TraceStage,
    UserProfile,
    canonical_json,
)
from nudge_engine.gateway import LlmGateway, PromptBundle
from nudge_engine.guardrails import (
    TraceLog,
    audit_fairness,
    audit_interceptor_totality,
    audit_sequences,
    audit_stage_order,
    emotion_delta,
    read_trace_csv,
    split_runs,
)
from nudge_engine.intelligence import adapt_ui, select_strategy
from nudge_engine.orchestrator import Engine
from nudge_engine.simulate import (
    SIM_EPOCH,
    InprocEngineClient,
    random_personas,
    reference_personas,
    replay,
    simulate_session,
)
from nudge_engine.simulate import _REFERENCE_ROWS  # the frozen expectations

T0 = datetime(2026, 3, 2, 9, 0, 0, tzinfo=timezone.utc)


def _stepping_clock():
    ticks = {"n": 0}

    def clock():
        ticks["n"] += 1
        return T0 + timedelta(seconds=ticks["n"])

    return clock


@pytest.fixture(scope="module")
def reference_run(tmp_path_factory):
    """One replay of the 15 reference personas, shared by A2 and A9."""
    trace_csv = tmp_path_factory.mktemp("reference") / "traces.csv"
    scripts = [simulate_session(p, 7) for p in reference_personas()]
    client = InprocEngineClient(trace_path=trace_csv)
    report = replay(scripts, client, trace_csv=trace_csv)
    client.close()
    return report, trace_csv


def test_a1_pipeline_completeness():
    personas = list(reference_personas()) + list(random_personas(85, seed=11))
    scripts = [simulate_session(p, 7) for p in personas]
    assert len(scripts) == 100
    client = InprocEngineClient()
    started = time.perf_counter()
    report = replay(scripts, client, reasoner=ReasonerKind.RULE_BASED)
    elapsed = time.perf_counter() - started
    client.close()

    crashes = [s for s in report.sessions if s.status == "error"]
    terminal = [
        s
        for s in report.sessions
        if s.status == OutcomeStatus.DELIVERED.value
        or (s.status == OutcomeStatus.NO_NUDGE.value and s.reason)
    ]
    assert report.total == 100
    assert not crashes
    assert len(terminal) == 100
    assert report.completed == 100
    assert elapsed < 10.0
    print(
        f"A1 pipeline completeness: PASS, 100/100 terminal outcomes, "
        f"0 crashes, {elapsed:.2f}s"
    )


def test_a2_reference_table_reproduction(reference_run):
    report, trace_csv = reference_run
    records = read_trace_csv(trace_csv)
    by_session = {}
    for record in records:
        by_session.setdefault(record.session_id, []).append(record)

    rows = {s.session_id: s for s in report.sessions}
    exact = 0
    for persona, expected in zip(reference_personas(), _REFERENCE_ROWS):
        mode, stage, attention, strategy, font, _ = expected
        measured = split_runs(by_session[persona.name])[-1]
        classified = {
            r.stage.value: r.payload_dict()["value"]
            for r in measured
            if r.stage
            in (TraceStage.COGNITIVE_MODE, TraceStage.BEHAVIORAL_STAGE, TraceStage.ATTENTION)
        }
        got = (
            classified["cognitive_mode"],
            classified["behavioral_stage"],
            classified["attention"],
            rows[persona.name].strategy_id,
        )
        assert got == (mode, stage, attention, strategy), persona.name
        assert rows[persona.name].font_size_px == font, persona.name
        exact += 1

    assert exact == 15
    assert report.strategy_histogram["just_in_time"] == 8
    assert report.font_histogram["16"] == 11
    assert report.strategy_histogram == {
        "just_in_time": 8,
        "raise_visibility": 3,
        "remind_consequences": 2,
        "enable_comparisons": 1,
        "reduce_distance": 1,
    }
    assert report.font_histogram == {"16": 11, "19": 2, "24": 2}
    print(
        "A2 reference table: PASS, 15/15 exact tuples, "
        "just_in_time 8/15 (53.3%), font 16px 11/15 (73.3%)"
    )


def test_a3_interceptor_blocks_poisoned_generator():
    poison = "You must act now, everyone else already switched."
    engine = Engine(
        message_generator=lambda strategy_id, signals, attempt: poison,
        clock=_stepping_clock(),
    )
    script = simulate_session(reference_personas()[2], 7)  # grounded contemplation events

    outcomes = []
    for i in range(50):
        sid = f"poisoned-{i:02d}"
        engine.create_session(sid)
        engine.set_context(sid, script.device.value, at=script.started_at)
        events = [
            type(e)(session_id=sid, kind=e.kind, at=e.at, attributes=dict(e.attributes))
            for e in script.events
        ]
        engine.ingest_events(sid, events)
        outcomes.append(engine.run_pipeline(sid, ReasonerKind.RULE_BASED))

    assert all(o.status is OutcomeStatus.NO_NUDGE for o in outcomes)
    assert all(o.reason == "compliance_exhausted" for o in outcomes)
    assert all(o.delivery is None for o in outcomes)

    records = engine.trace_log.records()
    deliveries = [r for r in records if r.stage is TraceStage.DELIVERY]
    assert deliveries == []
    for i in range(50):
        session_records = engine.trace_log.records(f"poisoned-{i:02d}")
        failed = [
            r
            for r in session_records
            if r.stage is TraceStage.COMPLIANCE_VERDICT
            and r.payload_dict()["passed"] is False
        ]
        assert len(failed) >= 4, f"poisoned-{i:02d} saw only {len(failed)} failed verdicts"

    # the structural scan the criterion asks for, run on this hostile log
    assert audit_interceptor_totality(records) == []
    print(
        "A3 interceptor invariant: PASS, 0/50 delivered, all "
        "compliance_exhausted with >=4 failed verdicts, totality scan clean"
    )


def test_a4_low_attention_always_simplified():
    cfg = default_config()
    strategies = {s.id: s for s in cfg.taxonomy.strategies}
    rng = random.Random(404)
    checked = 0
    for i in range(1000):
        profile = UserProfile(
            session_id=f"low-{i}",
            cognitive_mode=rng.choice(list(CognitiveMode)),
            behavioral_stage=rng.choice(list(BehavioralStage)),
            attention=AttentionLevel.LOW,
            reasoner=ReasonerKind.RULE_BASED,
            classified_at=T0,
        )
        selection = select_strategy(profile, cfg.taxonomy)
        ui = adapt_ui(profile, cfg.palette)
        assert strategies[selection.strategy_id].complexity is Complexity.LOW
        assert ui.font_size_px == 24
        checked += 1
    assert checked == 1000
    print(
        "A4 coordination invariant: PASS, 1000/1000 low-attention profiles "
        "got font 24 and a low-complexity strategy"
    )


def test_a5_replay_determinism(tmp_path):
    scripts = [simulate_session(p, 7) for p in reference_personas()]
    columns = []
    reports = []
    for name in ("first", "second"):
        trace_csv = tmp_path / f"{name}.csv"
        client = InprocEngineClient(trace_path=trace_csv)
        reports.append(replay(scripts, client, trace_csv=trace_csv))
        client.close()
        records = read_trace_csv(trace_csv)
        # every column except the timestamp
        columns.append(
            [(r.session_id, r.seq, r.stage.value, r.payload) for r in records]
        )
    assert columns[0] == columns[1]
    assert len(columns[0]) > 100  # a real log, not a trivially empty one
    assert reports[0].to_payload() == reports[1].to_payload()
    print(
        f"A5 determinism: PASS, two replays, {len(columns[0])} trace rows "
        "byte-identical outside timestamps"
    )


def test_a6_emotion_arithmetic():
    def dist(happiness: float, phase: NudgePhase) -> EmotionDistribution:
        rest = (1.0 - happiness) / 6.0
        values = {key: round(rest, 6) for key in EMOTION_KEYS if key != "happiness"}
        values["neutral"] += round(1.0 - happiness - sum(values.values()), 6)
        return EmotionDistribution(happiness=happiness, phase=phase, **values)

    pre = dist(0.000170, NudgePhase.PRE_NUDGE)
    post = dist(0.000500, NudgePhase.POST_NUDGE)
    assert emotion_delta(pre, post)["happiness"] == 0.000330

    rng = random.Random(606)
    for _ in range(1000):
        cuts = sorted(rng.randrange(0, 1_000_001) for _ in range(len(EMOTION_KEYS) - 1))
        parts = [b - a for a, b in zip([0] + cuts, cuts + [1_000_000])]
        values = {key: part / 1_000_000.0 for key, part in zip(EMOTION_KEYS, parts)}
        same_pre = EmotionDistribution(phase=NudgePhase.PRE_NUDGE, **values)
        same_post = EmotionDistribution(phase=NudgePhase.POST_NUDGE, **values)
        delta = emotion_delta(same_pre, same_post)
        assert all(value == 0.0 for value in delta.values())
    print(
        "A6 emotion arithmetic: PASS, fixture delta 0.000330 exact, "
        "self-delta zero for 1000 random distributions"
    )


def _fairness_log(path, desktop_blocked, desktop_delivered, mobile_blocked, mobile_delivered):
    log = TraceLog(path)
    n = 0
    for device, blocked, delivered in (
        ("desktop", desktop_blocked, desktop_delivered),
        ("mobile", mobile_blocked, mobile_delivered),
    ):
        for outcome in ["blocked"] * blocked + ["delivered"] * delivered:
            sid = f"fair-{n:03d}"
            n += 1
            rows = [
                (TraceStage.RAW_SIGNALS, {"run": 1}),
                (TraceStage.CONTEXT, {"device": device, "time_of_day": "morning"}),
                (
                    TraceStage.COMPLIANCE_VERDICT,
                    {"passed": outcome == "delivered", "nudge_id": sid},
                ),
            ]
            if outcome == "delivered":
                rows.append((TraceStage.DELIVERY, {"nudge_id": sid}))
            for seq, (stage, payload) in enumerate(rows, start=1):
                log.append(
                    TraceRecord(
                        session_id=sid,
                        seq=seq,
                        stage=stage,
                        at=T0 + timedelta(seconds=seq),
                        payload=canonical_json(payload),
                    )
                )
    log.close()


def _brute_force_ratio(path) -> float:
    sessions = {}
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            entry = sessions.setdefault(row["session_id"], {"stages": []})
            entry["stages"].append(row["stage"])
            if row["stage"] == "context":
                entry["device"] = json.loads(row["payload"])["device"]
    rates = {}
    for entry in sessions.values():
        counts = rates.setdefault(entry["device"], {"blocked": 0, "delivered": 0})
        if "delivery" in entry["stages"]:
            counts["delivered"] += 1
        else:
            counts["blocked"] += 1
    block_rates = [
        c["blocked"] / (c["blocked"] + c["delivered"]) for c in rates.values()
    ]
    return max(block_rates) / min(block_rates)


def test_a7_fairness_oracle(tmp_path):
    skewed = tmp_path / "skewed.csv"
    _fairness_log(skewed, desktop_blocked=3, desktop_delivered=1, mobile_blocked=1, mobile_delivered=3)
    report = audit_fairness(read_trace_csv(skewed), "device", threshold=2.0)
    assert report.flagged
    assert report.disparity_ratio == pytest.approx(3.0, abs=1e-9)
    assert abs(_brute_force_ratio(skewed) - report.disparity_ratio) <= 1e-9

    even = tmp_path / "even.csv"
    _fairness_log(even, desktop_blocked=1, desktop_delivered=3, mobile_blocked=1, mobile_delivered=3)
    for threshold in (1.000001, 1.5, 2.0, 1e9):
        balanced = audit_fairness(read_trace_csv(even), "device", threshold=threshold)
        assert not balanced.flagged
        assert balanced.disparity_ratio == pytest.approx(1.0, abs=1e-9)
    assert abs(_brute_force_ratio(even) - 1.0) <= 1e-9
    print(
        "A7 fairness oracle: PASS, ratio 3.0 flags at 2.0, ratio 1.0 never "
        "flags, CSV recomputation within 1e-9"
    )


def test_a8_guardrails_on_every_model_call():
    cfg = default_config()
    hook = []
    engine = Engine(
        config=cfg,
        gateway=LlmGateway(cfg, capture_hook=hook),
        clock=_stepping_clock(),
    )
    script = simulate_session(reference_personas()[2], 7)
    runs = 0
    while len(hook) < 200:
        sid = f"prompted-{runs:02d}"
        engine.create_session(sid)
        engine.set_context(sid, script.device.value, at=script.started_at)
        events = [
            type(e)(session_id=sid, kind=e.kind, at=e.at, attributes=dict(e.attributes))
            for e in script.events
        ]
        engine.ingest_events(sid, events)
        engine.run_pipeline(sid, ReasonerKind.LLM_BACKED)
        runs += 1
        assert runs <= 200, "model-backed runs are not generating prompts"

    fragments = [f.text for f in cfg.fragments]
    carrying = [
        entry for entry in hook if all(text in entry["prompt"] for text in fragments)
    ]
    assert len(hook) >= 200
    assert len(carrying) == len(hook)

    for partial in (cfg.fragments[:1], cfg.fragments[1:], ()):
        with pytest.raises(InvariantViolation):
            PromptBundle(
                template_id="attention",
                variables={},
                system_fragments=partial,
                temperature=0.3,
            )
    print(
        f"A8 guardrail injection: PASS, {len(carrying)}/{len(hook)} captured "
        "prompts carry both fragments; partial bundles refused"
    )


def test_a9_trace_integrity(reference_run, tmp_path):
    _, trace_csv = reference_run
    records = read_trace_csv(trace_csv)
    assert audit_sequences(records) == []
    assert audit_stage_order(records) == []
    by_session = {}
    for record in records:
        by_session.setdefault(record.session_id, []).append(record)
    assert len(by_session) == 15
    for session_records in by_session.values():
        seqs = sorted(r.seq for r in session_records)
        assert seqs == list(range(1, len(seqs) + 1))

    # lossless round trip: write what was read, read it back, compare all
    copy_path = tmp_path / "copy.csv"
    copy = TraceLog(copy_path)
    for record in records:
        copy.append(record)
    copy.close()
    again = read_trace_csv(copy_path)
    assert [r.to_payload() for r in again] == [r.to_payload() for r in records]
    print(
        f"A9 trace integrity: PASS, {len(records)} rows over "
        f"{len(by_session)} sessions gapless, CSV round-trip lossless"
    )
