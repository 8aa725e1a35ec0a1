"""Compliance rules, trace log durability, emotion deltas, fairness audit."""

import json
from datetime import datetime, timedelta, timezone

import pytest

from nudge_engine.config import default_config
from nudge_engine.domain import (
    UNBOUNDED_DISPARITY,
    ApplianceInteraction,
    ApplianceVerb,
    BehavioralSignals,
    ChartType,
    EmotionDistribution,
    NudgeDelivery,
    NudgePhase,
    TraceRecord,
    TraceStage,
    UIContext,
    canonical_json,
    replay_appliances,
)
from nudge_engine.guardrails import (
    AuditError,
    TraceError,
    TraceLog,
    audit_fairness,
    audit_interceptor_totality,
    audit_sequences,
    audit_stage_order,
    build_default_rules,
    emotion_delta,
    guardrail_prompts,
    read_trace_csv,
    split_runs,
    validate_nudge,
)

CONFIG = default_config()
RULES = build_default_rules(CONFIG)
AT = datetime(2026, 3, 2, 9, 30, tzinfo=timezone.utc)

UI = UIContext(font_size_px=16, chart_type=ChartType.LINE, color_primary="#2f8f4e", color_secondary="#d7f0de")


def signals_with(*interactions, frames=()):
    items = tuple(interactions)
    return BehavioralSignals(
        click_count=8,
        mean_hesitation_ms=2500.0,
        appliance_interactions=items,
        total_consumption_kwh=replay_appliances(items).consumption_kwh,
        emotion_frames=tuple(frames),
    )


def on(appliance, watts, hours):
    return ApplianceInteraction(
        appliance_id=appliance, action=ApplianceVerb.TURN_ON, wattage_w=watts, usage_hours=hours
    )


# heater 2000 W x 3 h = 6 kWh; lamp 60 W x 5 h = 0.3 kWh; total 6.3
SIG = signals_with(on("heater", 2000.0, 3.0), on("lamp", 60.0, 5.0))


def draft(message, explanation="Chosen because it fits your profile.", strategy="just_in_time"):
    return NudgeDelivery(
        nudge_id="n-1",
        session_id="s1",
        strategy_id=strategy,
        message=message,
        explanation=explanation,
        ui=UI,
        delivered_at=AT,
    )


def frame(phase=NudgePhase.PRE_NUDGE, sadness=0.0, fear=0.0, happiness=0.0):
    neutral = 1.0 - sadness - fear - happiness
    return EmotionDistribution(
        anger=0.0,
        disgust=0.0,
        fear=fear,
        happiness=happiness,
        neutral=neutral,
        sadness=sadness,
        surprise=0.0,
        phase=phase,
    )


# ---------------------------------------------------------------------------
# compliance rules
# ---------------------------------------------------------------------------


def test_compliant_draft_passes_all_five_rules():
    verdict = validate_nudge(
        draft("Your heater runs 3 h at 2000 W, about 6 kWh of today's 6.3 kWh."),
        SIG,
        RULES,
        AT,
    )
    assert verdict.passed and verdict.violations == ()


def test_blacklist_hit_reported():
    verdict = validate_nudge(draft("Last chance to cut your heater use!"), SIG, RULES, AT)
    assert not verdict.passed
    assert [rule_id for rule_id, _ in verdict.violations] == ["blacklist_lexicon"]
    assert "last chance" in verdict.violations[0][1]


def test_fabricated_number_reported():
    verdict = validate_nudge(draft("You used 12.0 kWh today."), SIG, RULES, AT)
    assert not verdict.passed
    assert [rule_id for rule_id, _ in verdict.violations] == ["fact_grounding"]
    assert "12.0" in verdict.violations[0][1]


def test_rounded_numbers_within_tolerance_pass():
    # total is 6.3; citing 6.3 exactly and hours as 3 both ground cleanly;
    # 6.2 sits inside +/-5% of 6.3 as well
    verdict = validate_nudge(draft("Roughly 6.2 kWh today, 3 h of heating."), SIG, RULES, AT)
    assert verdict.passed


def test_zero_quantity_only_matches_zero():
    sig = signals_with(on("heater", 2000.0, 0.0))  # 0 kWh total
    ok = validate_nudge(draft("Scheduled 0 h today on your 2000 W heater."), sig, RULES, AT)
    assert ok.passed
    bad = validate_nudge(draft("About 0.4 kWh today."), sig, RULES, AT)
    assert not bad.passed


def test_empty_explanation_reported():
    verdict = validate_nudge(draft("About 6 kWh from your heater.", explanation="  "), SIG, RULES, AT)
    assert ("explanation_present", "explanation is empty") in verdict.violations


def test_unknown_strategy_reported():
    verdict = validate_nudge(
        draft("About 6 kWh from your heater.", strategy="dark_pattern"), SIG, RULES, AT
    )
    assert not verdict.passed
    assert verdict.violations[0][0] == "taxonomy_membership"


def test_all_violations_reported_together():
    verdict = validate_nudge(
        draft("Last chance! You used 99 kWh.", explanation=" ", strategy="dark_pattern"),
        SIG,
        RULES,
        AT,
    )
    assert {rule_id for rule_id, _ in verdict.violations} == {
        "explanation_present",
        "blacklist_lexicon",
        "fact_grounding",
        "taxonomy_membership",
    }


def test_vulnerable_user_blocks_loss_framing():
    sad = signals_with(
        on("heater", 2000.0, 3.0), frames=[frame(sadness=0.6)]
    )
    verdict = validate_nudge(
        draft("Act now or you will lose savings on your 2000 W heater, 3 h a day."),
        sad,
        RULES,
        AT,
    )
    assert not verdict.passed
    assert verdict.violations[0][0] == "vulnerability_protection"
    assert "you will lose" in verdict.violations[0][1]


def test_calm_user_tolerates_same_wording():
    calm = signals_with(on("heater", 2000.0, 3.0), frames=[frame(sadness=0.2)])
    verdict = validate_nudge(
        draft("Act now or you will lose savings on your 2000 W heater, 3 h a day."),
        calm,
        RULES,
        AT,
    )
    assert verdict.passed


def test_vulnerability_reads_latest_pre_frame_only():
    recovered = signals_with(
        on("heater", 2000.0, 3.0),
        frames=[frame(sadness=0.8), frame(sadness=0.1)],
    )
    verdict = validate_nudge(
        draft("Do not miss out: your heater runs 3 h at 2000 W."), recovered, RULES, AT
    )
    assert verdict.passed


def test_neutral_message_fine_for_vulnerable_user():
    sad = signals_with(on("heater", 2000.0, 3.0), frames=[frame(fear=0.7)])
    verdict = validate_nudge(
        draft("Your heater runs 3 h at 2000 W, about 6 kWh."), sad, RULES, AT
    )
    assert verdict.passed


def test_throwing_evaluator_fails_closed():
    from nudge_engine.guardrails import ComplianceRule, RuleKind

    # fact grounding with a broken parameter explodes inside the evaluator
    broken = ComplianceRule("fact_grounding", RuleKind.FACT_GROUNDING, {"tolerance": "wide"})
    verdict = validate_nudge(draft("About 6 kWh."), SIG, (broken,), AT)
    assert not verdict.passed
    assert "rule evaluation failed" in verdict.violations[0][1]


def test_guardrail_prompts_passthrough():
    fragments = guardrail_prompts(CONFIG)
    assert [f.id for f in fragments] == ["bias_mitigation", "ethics_compliance"]
    assert all(f.text for f in fragments)


# ---------------------------------------------------------------------------
# trace log
# ---------------------------------------------------------------------------


def record(session, seq, stage, payload=None, minute=0):
    return TraceRecord(
        session_id=session,
        seq=seq,
        stage=stage,
        at=AT + timedelta(minutes=minute),
        payload=canonical_json(payload or {"seq": seq}),
    )


def test_trace_log_enforces_gapless_sequence():
    log = TraceLog()
    log.append(record("s1", 1, TraceStage.RAW_SIGNALS))
    log.append(record("s1", 2, TraceStage.CONTEXT))
    log.append(record("s2", 1, TraceStage.RAW_SIGNALS))  # sessions independent
    with pytest.raises(TraceError, match="expected seq 3"):
        log.append(record("s1", 5, TraceStage.COGNITIVE_MODE))
    with pytest.raises(TraceError):
        log.append(record("s1", 2, TraceStage.COGNITIVE_MODE))  # duplicate
    assert log.next_seq("s1") == 3


def test_trace_log_csv_round_trip(tmp_path):
    path = tmp_path / "traces.csv"
    log = TraceLog(path)
    payload = {"value": "analytical", "note": 'quoted "text", with comma'}
    log.append(record("s1", 1, TraceStage.RAW_SIGNALS))
    log.append(record("s1", 2, TraceStage.COGNITIVE_MODE, payload))
    log.close()

    back = read_trace_csv(path)
    assert len(back) == 2
    assert back[1].payload_dict() == payload
    assert back[1].stage is TraceStage.COGNITIVE_MODE
    assert back[1].at == AT


def test_trace_log_resumes_from_existing_file(tmp_path):
    path = tmp_path / "traces.csv"
    first = TraceLog(path)
    first.append(record("s1", 1, TraceStage.RAW_SIGNALS))
    first.close()

    second = TraceLog(path)
    assert second.next_seq("s1") == 2
    second.append(record("s1", 2, TraceStage.CONTEXT))
    second.close()
    assert [r.seq for r in read_trace_csv(path)] == [1, 2]


def test_trace_csv_rejects_foreign_columns(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n", encoding="utf-8")
    with pytest.raises(TraceError, match="columns"):
        read_trace_csv(path)


# ---------------------------------------------------------------------------
# emotion deltas
# ---------------------------------------------------------------------------


def test_happiness_delta_on_reference_frames():
    pre = EmotionDistribution(
        anger=0.0, disgust=0.0, fear=0.0, happiness=0.00017,
        neutral=0.99983, sadness=0.0, surprise=0.0, phase=NudgePhase.PRE_NUDGE,
    )
    post = EmotionDistribution(
        anger=0.0, disgust=0.0, fear=0.0, happiness=0.0005,
        neutral=0.9995, sadness=0.0, surprise=0.0, phase=NudgePhase.POST_NUDGE,
    )
    delta = emotion_delta(pre, post)
    assert delta["happiness"] == 0.00033
    assert delta["neutral"] == -0.00033


def test_identical_frames_zero_delta():
    pre = frame()
    post = frame(phase=NudgePhase.POST_NUDGE)
    assert set(emotion_delta(pre, post).values()) == {0.0}


def test_neutral_absorbs_happiness_shift():
    pre = EmotionDistribution(
        anger=0.0, disgust=0.0, fear=0.0, happiness=0.03,
        neutral=0.97, sadness=0.0, surprise=0.0, phase=NudgePhase.PRE_NUDGE,
    )
    post = EmotionDistribution(
        anger=0.0, disgust=0.0, fear=0.0, happiness=0.10,
        neutral=0.90, sadness=0.0, surprise=0.0, phase=NudgePhase.POST_NUDGE,
    )
    delta = emotion_delta(pre, post)
    assert delta["neutral"] == -0.07
    assert delta["happiness"] == 0.07


def test_phase_mismatch_rejected():
    with pytest.raises(Exception, match="phase"):
        emotion_delta(frame(), frame())  # both pre_nudge


# ---------------------------------------------------------------------------
# run segmentation and auditors
# ---------------------------------------------------------------------------


def clean_run(session, start_seq, device="desktop", deliver=True, retries=0):
    """Build one well-formed run's records; returns (records, next_seq)."""
    seq = start_seq
    records = []

    def emit(stage, payload):
        nonlocal seq
        records.append(record(session, seq, stage, payload))
        seq += 1

    emit(TraceStage.RAW_SIGNALS, {"events": 12})
    emit(TraceStage.CONTEXT, {"device": device, "time_of_day": "morning"})
    emit(TraceStage.COGNITIVE_MODE, {"value": "intuitive"})
    emit(TraceStage.BEHAVIORAL_STAGE, {"value": "contemplation"})
    emit(TraceStage.ATTENTION, {"value": "high"})
    emit(TraceStage.STRATEGY_SELECTION, {"strategy_id": "enable_comparisons"})
    for _ in range(retries):
        emit(TraceStage.NUDGE_DRAFT, {"attempt": 1})
        emit(TraceStage.COMPLIANCE_VERDICT, {"passed": False})
    emit(TraceStage.NUDGE_DRAFT, {"attempt": retries + 1})
    emit(TraceStage.COMPLIANCE_VERDICT, {"passed": deliver})
    if deliver:
        emit(TraceStage.UI_ADAPTATION, {"font_size_px": 16})
        emit(TraceStage.DELIVERY, {"nudge_id": "n-1"})
    return records, seq


def test_split_runs_cuts_at_raw_signals():
    run1, next_seq = clean_run("s1", 1)
    run2, _ = clean_run("s1", next_seq)
    runs = split_runs(run1 + run2)
    assert len(runs) == 2
    assert [r.stage for r in runs[0]][0] is TraceStage.RAW_SIGNALS


def test_clean_log_passes_all_auditors():
    run1, next_seq = clean_run("s1", 1, retries=1)
    run2, _ = clean_run("s2", 1, deliver=False)
    records = run1 + run2
    assert audit_sequences(records) == []
    assert audit_stage_order(records) == []
    assert audit_interceptor_totality(records) == []


def test_stage_order_rejects_backwards_jump():
    records = [
        record("s1", 1, TraceStage.RAW_SIGNALS),
        record("s1", 2, TraceStage.ATTENTION),
        record("s1", 3, TraceStage.CONTEXT),  # backwards without a verdict
    ]
    problems = audit_stage_order(records)
    assert len(problems) == 1 and "context" in problems[0]


def test_stage_order_allows_retry_back_edge():
    records = [
        record("s1", 1, TraceStage.RAW_SIGNALS),
        record("s1", 2, TraceStage.STRATEGY_SELECTION),
        record("s1", 3, TraceStage.NUDGE_DRAFT),
        record("s1", 4, TraceStage.COMPLIANCE_VERDICT, {"passed": False}),
        record("s1", 5, TraceStage.STRATEGY_SELECTION),  # reselect
        record("s1", 6, TraceStage.NUDGE_DRAFT),
    ]
    assert audit_stage_order(records) == []


def test_feedback_and_emotion_ride_outside_order():
    run, next_seq = clean_run("s1", 1)
    run.append(record("s1", next_seq, TraceStage.FEEDBACK, {"signal": "down"}))
    run.append(record("s1", next_seq + 1, TraceStage.EMOTION_POST, {"happiness": 0.5}))
    assert audit_stage_order(run) == []


def test_interceptor_totality_catches_unvalidated_delivery():
    records = [
        record("s1", 1, TraceStage.RAW_SIGNALS),
        record("s1", 2, TraceStage.DELIVERY, {"nudge_id": "n-1"}),
    ]
    problems = audit_interceptor_totality(records)
    assert len(problems) == 1 and "passed verdict" in problems[0]


def test_interceptor_totality_catches_stale_verdict():
    records = [
        record("s1", 1, TraceStage.RAW_SIGNALS),
        record("s1", 2, TraceStage.NUDGE_DRAFT, {"attempt": 1}),
        record("s1", 3, TraceStage.COMPLIANCE_VERDICT, {"passed": True}),
        record("s1", 4, TraceStage.NUDGE_DRAFT, {"attempt": 2}),  # never re-checked
        record("s1", 5, TraceStage.DELIVERY, {"nudge_id": "n-1"}),
    ]
    problems = audit_interceptor_totality(records)
    assert len(problems) == 1 and "re-validated" in problems[0]


# ---------------------------------------------------------------------------
# fairness
# ---------------------------------------------------------------------------


def synthetic_log(desktop_blocked, desktop_delivered, mobile_blocked, mobile_delivered):
    records = []
    session = 0
    for device, blocked, delivered in (
        ("desktop", desktop_blocked, desktop_delivered),
        ("mobile", mobile_blocked, mobile_delivered),
    ):
        for outcome_delivered, count in ((True, delivered), (False, blocked)):
            for _ in range(count):
                session += 1
                run, _ = clean_run(f"s{session}", 1, device=device, deliver=outcome_delivered)
                records.extend(run)
    return records


def test_disparity_ratio_flags_three_to_one():
    # desktop blocks 30%, mobile blocks 10% -> ratio 3.0 > 2.0
    records = synthetic_log(3, 7, 1, 9)
    report = audit_fairness(records, "device", threshold=2.0)
    assert report.per_group["desktop"].block_rate == pytest.approx(0.3)
    assert report.per_group["mobile"].block_rate == pytest.approx(0.1)
    assert report.disparity_ratio == pytest.approx(3.0)
    assert report.flagged


def test_identical_groups_ratio_one():
    records = synthetic_log(2, 8, 2, 8)
    report = audit_fairness(records, "device", threshold=2.0)
    assert report.disparity_ratio == 1.0
    assert not report.flagged


def test_single_group_ratio_one():
    records = synthetic_log(3, 7, 0, 0)
    report = audit_fairness(records, "device", threshold=2.0)
    assert report.disparity_ratio == 1.0
    assert not report.flagged


def test_zero_against_nonzero_is_unbounded_sentinel():
    records = synthetic_log(0, 10, 2, 8)
    report = audit_fairness(records, "device", threshold=2.0)
    assert report.disparity_ratio == UNBOUNDED_DISPARITY
    assert report.flagged


def test_strategy_histogram_surfaces():
    records = synthetic_log(1, 4, 0, 5)
    report = audit_fairness(records, "device", threshold=2.0)
    assert report.per_group["desktop"].strategy_histogram == {"enable_comparisons": 5}


def test_unknown_grouping_key_rejected():
    records = synthetic_log(1, 1, 1, 1)
    with pytest.raises(AuditError, match="shoe_size"):
        audit_fairness(records, "shoe_size")


def test_fairness_report_serializes_canonically():
    records = synthetic_log(3, 7, 1, 9)
    report = audit_fairness(records, "device", threshold=2.0)
    blob = canonical_json(report)
    parsed = json.loads(blob)
    assert parsed["disparity_ratio"] == 3.0
    assert parsed["grouping_key"] == "device"
