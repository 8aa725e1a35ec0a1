"""Side-mounted evaluation: compliance interceptor, trace log, fairness audit.

Nothing here decides what to nudge; it decides whether a draft may ship,
writes the durable record of everything the pipeline did, and reads that
record back to look for population-level skew. Rules are data: five kinds,
parameterized from config, every one evaluated on every draft (no
short-circuit), and an evaluator that throws counts as a violation rather
than a pass.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from nudge_engine.config import EngineConfig, GuardrailFragment
from nudge_engine.domain import (
    EMOTION_KEYS,
    UNBOUNDED_DISPARITY,
    BehavioralSignals,
    ComplianceVerdict,
    EmotionDistribution,
    FairnessReport,
    GroupStats,
    InvariantViolation,
    NudgeDelivery,
    NudgePhase,
    TraceRecord,
    TraceStage,
    format_ts,
    parse_ts,
    quantize,
    replay_appliances,
)


class TraceError(ValueError):
    """Append would break the gapless per-session sequence."""


class AuditError(ValueError):
    """Fairness audit asked for something the traces cannot answer."""


# ============================================================================
# Compliance rules
# ============================================================================


class RuleKind(str, Enum):
    EXPLANATION_PRESENT = "explanation_present"
    BLACKLIST_LEXICON = "blacklist_lexicon"
    FACT_GROUNDING = "fact_grounding"
    TAXONOMY_MEMBERSHIP = "taxonomy_membership"
    VULNERABILITY_PROTECTION = "vulnerability_protection"


@dataclass(frozen=True)
class ComplianceRule:
    rule_id: str
    kind: RuleKind
    parameters: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.rule_id:
            raise InvariantViolation("ComplianceRule.rule_id must be non-empty")
        object.__setattr__(self, "parameters", dict(self.parameters))


def build_default_rules(config: EngineConfig) -> Tuple[ComplianceRule, ...]:
    return (
        ComplianceRule("explanation_present", RuleKind.EXPLANATION_PRESENT),
        ComplianceRule(
            "blacklist_lexicon",
            RuleKind.BLACKLIST_LEXICON,
            {"phrases": tuple(config.blacklist)},
        ),
        ComplianceRule(
            "fact_grounding",
            RuleKind.FACT_GROUNDING,
            {"tolerance": config.fact_tolerance},
        ),
        ComplianceRule(
            "taxonomy_membership",
            RuleKind.TAXONOMY_MEMBERSHIP,
            {"strategy_ids": tuple(config.taxonomy.ids())},
        ),
        ComplianceRule(
            "vulnerability_protection",
            RuleKind.VULNERABILITY_PROTECTION,
            {
                "threshold": config.vulnerability_threshold,
                "loss_phrases": tuple(config.loss_phrases),
            },
        ),
    )


# numbers embedded in words ("mp3") or version strings don't count
_NUMBER = re.compile(r"(?<![\w.])(\d+(?:\.\d+)?)(?![\w.])")


def grounded_quantities(signals: BehavioralSignals) -> List[float]:
    """Every number a message is allowed to cite: per-appliance wattage,
    hours, and kWh from the replayed registry, plus the session total."""
    replay = replay_appliances(signals.appliance_interactions)
    quantities: List[float] = []
    for state in replay.registry.values():
        quantities.extend(
            [state.wattage_w, state.usage_hours, state.wattage_w * state.usage_hours / 1000.0]
        )
    quantities.append(replay.consumption_kwh)
    return quantities


def _matched_phrases(message: str, phrases: Iterable[str]) -> List[str]:
    lowered = message.lower()
    return [p for p in phrases if p in lowered]


def _check_fact_grounding(
    draft: NudgeDelivery, signals: BehavioralSignals, tolerance: float
) -> Optional[str]:
    quantities = grounded_quantities(signals)
    orphans = []
    for token in _NUMBER.findall(draft.message):
        cited = float(token)
        matched = any(
            (cited == 0.0 and q == 0.0)
            or (q != 0.0 and abs(cited - q) <= tolerance * abs(q))
            for q in quantities
        )
        if not matched:
            orphans.append(token)
    if orphans:
        return f"numbers not grounded in session appliances: {', '.join(orphans)}"
    return None


def _check_vulnerability(
    draft: NudgeDelivery,
    signals: BehavioralSignals,
    threshold: float,
    loss_phrases: Iterable[str],
) -> Optional[str]:
    pre_frames = [
        f for f in signals.emotion_frames if f.phase is NudgePhase.PRE_NUDGE
    ]
    if not pre_frames:
        return None
    latest = pre_frames[-1]
    if latest.sadness <= threshold and latest.fear <= threshold:
        return None
    matched = _matched_phrases(draft.message, loss_phrases)
    if matched:
        return (
            "loss framing toward a vulnerable state: " + ", ".join(sorted(matched))
        )
    return None


def _evaluate(
    rule: ComplianceRule, draft: NudgeDelivery, signals: BehavioralSignals
) -> Optional[str]:
    p = rule.parameters
    if rule.kind is RuleKind.EXPLANATION_PRESENT:
        return None if draft.explanation.strip() else "explanation is empty"
    if rule.kind is RuleKind.BLACKLIST_LEXICON:
        matched = _matched_phrases(draft.message, p["phrases"])
        return f"manipulative phrasing: {', '.join(sorted(matched))}" if matched else None
    if rule.kind is RuleKind.FACT_GROUNDING:
        return _check_fact_grounding(draft, signals, float(p["tolerance"]))
    if rule.kind is RuleKind.TAXONOMY_MEMBERSHIP:
        if draft.strategy_id in p["strategy_ids"]:
            return None
        return f"strategy {draft.strategy_id!r} not in the active catalog"
    if rule.kind is RuleKind.VULNERABILITY_PROTECTION:
        return _check_vulnerability(
            draft, signals, float(p["threshold"]), p["loss_phrases"]
        )
    return f"unknown rule kind {rule.kind!r}"


def validate_nudge(
    draft: NudgeDelivery,
    signals: BehavioralSignals,
    rules: Sequence[ComplianceRule],
    at: datetime,
) -> ComplianceVerdict:
    """Run every rule; collect every violation. A rule that blows up is a
    violation of that rule, never a free pass."""
    violations: List[Tuple[str, str]] = []
    for rule in rules:
        try:
            reason = _evaluate(rule, draft, signals)
        except Exception as err:  # noqa: BLE001 - fail-closed by contract
            reason = f"rule evaluation failed: {err}"
        if reason is not None:
            violations.append((rule.rule_id, reason))
    return ComplianceVerdict(
        nudge_id=draft.nudge_id,
        passed=not violations,
        violations=tuple(violations),
        checked_at=at,
    )


def guardrail_prompts(config: EngineConfig) -> Tuple[GuardrailFragment, ...]:
    """The fragments every outgoing prompt must carry; loading already
    refused configs without both mandatory ids."""
    return tuple(config.fragments)


# ============================================================================
# Trace log
# ============================================================================

CSV_COLUMNS = ("session_id", "seq", "stage", "at", "payload")


class TraceLog:
    """Append-only, gapless per session, optionally file-backed.

    With a path, every append lands on disk (write + flush) before the call
    returns; reopening the same path resumes the sequences where they left
    off. There is no update or delete.
    """

    def __init__(self, path: Optional[Path] = None):
        self._records: List[TraceRecord] = []
        self._last_seq: Dict[str, int] = {}
        self._path = Path(path) if path else None
        self._handle = None
        if self._path and self._path.exists():
            for record in read_trace_csv(self._path):
                self._admit(record)
        if self._path:
            is_new = not self._path.exists() or self._path.stat().st_size == 0
            self._handle = self._path.open("a", encoding="utf-8", newline="")
            self._writer = csv.writer(self._handle, quoting=csv.QUOTE_NONNUMERIC)
            if is_new:
                self._writer.writerow(CSV_COLUMNS)
                self._handle.flush()

    def _admit(self, record: TraceRecord) -> None:
        expected = self._last_seq.get(record.session_id, 0) + 1
        if record.seq != expected:
            raise TraceError(
                f"session {record.session_id!r} expected seq {expected}, got {record.seq}"
            )
        self._records.append(record)
        self._last_seq[record.session_id] = record.seq

    def append(self, record: TraceRecord) -> None:
        self._admit(record)
        if self._handle is not None:
            self._writer.writerow(
                [
                    record.session_id,
                    record.seq,
                    record.stage.value,
                    format_ts(record.at),
                    record.payload,
                ]
            )
            self._handle.flush()

    def next_seq(self, session_id: str) -> int:
        return self._last_seq.get(session_id, 0) + 1

    def records(self, session_id: Optional[str] = None) -> Tuple[TraceRecord, ...]:
        if session_id is None:
            return tuple(self._records)
        return tuple(r for r in self._records if r.session_id == session_id)

    def sessions(self) -> Tuple[str, ...]:
        seen = []
        for record in self._records:
            if record.session_id not in seen:
                seen.append(record.session_id)
        return tuple(seen)

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None


def read_trace_csv(path: Path) -> Tuple[TraceRecord, ...]:
    records = []
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise TraceError(f"trace csv {path} has wrong columns: {reader.fieldnames}")
        for row in reader:
            records.append(
                TraceRecord(
                    session_id=row["session_id"],
                    seq=int(float(row["seq"])),
                    stage=TraceStage(row["stage"]),
                    at=parse_ts(row["at"]),
                    payload=row["payload"],
                )
            )
    return tuple(records)


# ============================================================================
# Emotion deltas
# ============================================================================


def emotion_delta(pre: EmotionDistribution, post: EmotionDistribution) -> Dict[str, float]:
    if pre.phase is not NudgePhase.PRE_NUDGE:
        raise InvariantViolation("emotion_delta: pre frame must be pre_nudge phase")
    if post.phase is not NudgePhase.POST_NUDGE:
        raise InvariantViolation("emotion_delta: post frame must be post_nudge phase")
    return {
        key: quantize(getattr(post, key) - getattr(pre, key)) for key in EMOTION_KEYS
    }


# ============================================================================
# Run segmentation and trace auditors
# ============================================================================

# stages that ride alongside the pipeline rather than inside its order
_FLOATING_STAGES = (
    TraceStage.FEEDBACK,
    TraceStage.EMOTION_PRE,
    TraceStage.EMOTION_POST,
)

_ORDERED_STAGES = tuple(
    s for s in TraceStage if s not in _FLOATING_STAGES
)
_STAGE_INDEX = {stage: i for i, stage in enumerate(_ORDERED_STAGES)}

# a failed verdict may loop back to regeneration or reselection
_RETRY_TARGETS = (TraceStage.STRATEGY_SELECTION, TraceStage.NUDGE_DRAFT)


def split_runs(records: Sequence[TraceRecord]) -> List[List[TraceRecord]]:
    """One session's records, seq order, cut at each raw-signals marker."""
    runs: List[List[TraceRecord]] = []
    current: List[TraceRecord] = []
    for record in sorted(records, key=lambda r: r.seq):
        if record.stage is TraceStage.RAW_SIGNALS and current:
            runs.append(current)
            current = []
        current.append(record)
    if current:
        runs.append(current)
    return runs


def audit_sequences(records: Sequence[TraceRecord]) -> List[str]:
    """Per-session seq must be exactly 1..n."""
    problems = []
    by_session: Dict[str, List[int]] = {}
    for record in records:
        by_session.setdefault(record.session_id, []).append(record.seq)
    for session_id, seqs in by_session.items():
        if sorted(seqs) != list(range(1, len(seqs) + 1)):
            problems.append(f"session {session_id}: seq not gapless 1..n: {sorted(seqs)}")
    return problems


def audit_stage_order(records: Sequence[TraceRecord]) -> List[str]:
    """Within each run, pipeline stages only move forward, except the
    retry back-edge from a compliance verdict to reselection/regeneration."""
    problems = []
    by_session: Dict[str, List[TraceRecord]] = {}
    for record in records:
        by_session.setdefault(record.session_id, []).append(record)
    for session_id, session_records in by_session.items():
        for run_index, run in enumerate(split_runs(session_records)):
            ordered = [r for r in run if r.stage not in _FLOATING_STAGES]
            for prev, cur in zip(ordered, ordered[1:]):
                pi, ci = _STAGE_INDEX[prev.stage], _STAGE_INDEX[cur.stage]
                if ci >= pi:
                    continue
                if prev.stage is TraceStage.COMPLIANCE_VERDICT and cur.stage in _RETRY_TARGETS:
                    continue
                problems.append(
                    f"session {session_id} run {run_index}: {cur.stage.value} (seq {cur.seq}) "
                    f"cannot follow {prev.stage.value} (seq {prev.seq})"
                )
    return problems


def audit_interceptor_totality(records: Sequence[TraceRecord]) -> List[str]:
    """Every delivery must sit directly behind exactly one passed verdict:
    one passed verdict in the run, earlier in sequence, with no fresh draft
    between it and the delivery."""
    problems = []
    by_session: Dict[str, List[TraceRecord]] = {}
    for record in records:
        by_session.setdefault(record.session_id, []).append(record)
    for session_id, session_records in by_session.items():
        for run_index, run in enumerate(split_runs(session_records)):
            deliveries = [r for r in run if r.stage is TraceStage.DELIVERY]
            if not deliveries:
                continue
            label = f"session {session_id} run {run_index}"
            if len(deliveries) > 1:
                problems.append(f"{label}: {len(deliveries)} deliveries in one run")
                continue
            delivery = deliveries[0]
            passed = [
                r
                for r in run
                if r.stage is TraceStage.COMPLIANCE_VERDICT
                and r.payload_dict().get("passed") is True
            ]
            if len(passed) != 1:
                problems.append(f"{label}: expected exactly one passed verdict, found {len(passed)}")
                continue
            verdict = passed[0]
            if verdict.seq > delivery.seq:
                problems.append(f"{label}: delivery at seq {delivery.seq} precedes its verdict")
                continue
            stale = [
                r
                for r in run
                if r.stage is TraceStage.NUDGE_DRAFT and verdict.seq < r.seq < delivery.seq
            ]
            if stale:
                problems.append(
                    f"{label}: draft at seq {stale[0].seq} was never re-validated before delivery"
                )
    return problems


# ============================================================================
# Fairness audit
# ============================================================================

_GROUPING_KEYS = ("device", "time_of_day")


def audit_fairness(
    records: Sequence[TraceRecord],
    grouping_key: str,
    threshold: float = 2.0,
) -> FairnessReport:
    """Offline batch pass over the trace log.

    A run counts as delivered when it shipped a nudge, blocked when the
    interceptor stopped every attempt. Runs that never reached a verdict
    (no strategy, no grounding) are neither. Groups that saw no eligible
    runs are excluded; with fewer than two eligible groups the ratio is 1.
    A group with zero block rate against any nonzero group is reported as
    the unbounded sentinel rather than infinity.
    """
    if grouping_key not in _GROUPING_KEYS:
        raise AuditError(
            f"unknown grouping_key {grouping_key!r}; traces can group by {_GROUPING_KEYS}"
        )
    if threshold <= 1.0:
        raise AuditError("threshold must exceed 1")

    counts: Dict[str, Dict[str, Any]] = {}
    by_session: Dict[str, List[TraceRecord]] = {}
    for record in records:
        by_session.setdefault(record.session_id, []).append(record)

    for session_records in by_session.values():
        for run in split_runs(session_records):
            group = None
            for record in run:
                if record.stage is TraceStage.CONTEXT:
                    group = record.payload_dict().get(grouping_key)
                    break
            if group is None:
                continue
            entry = counts.setdefault(
                str(group), {"delivered": 0, "blocked": 0, "strategies": {}}
            )
            delivered = any(r.stage is TraceStage.DELIVERY for r in run)
            failed_verdicts = [
                r
                for r in run
                if r.stage is TraceStage.COMPLIANCE_VERDICT
                and r.payload_dict().get("passed") is False
            ]
            selections = [r for r in run if r.stage is TraceStage.STRATEGY_SELECTION]
            if selections:
                last = selections[-1].payload_dict().get("strategy_id")
                if last:
                    entry["strategies"][last] = entry["strategies"].get(last, 0) + 1
            if delivered:
                entry["delivered"] += 1
            elif failed_verdicts:
                entry["blocked"] += 1

    per_group = {
        name: GroupStats(
            delivered=data["delivered"],
            blocked=data["blocked"],
            strategy_histogram=data["strategies"],
        )
        for name, data in sorted(counts.items())
    }

    eligible = {
        name: stats for name, stats in per_group.items() if stats.delivered + stats.blocked > 0
    }
    if len(eligible) < 2:
        ratio = 1.0
    else:
        rates = [stats.block_rate for stats in eligible.values()]
        low, high = min(rates), max(rates)
        if high == 0.0:
            ratio = 1.0
        elif low == 0.0:
            ratio = UNBOUNDED_DISPARITY
        else:
            ratio = high / low
    ratio = quantize(ratio)
    return FairnessReport(
        grouping_key=grouping_key,
        threshold=threshold,
        per_group=per_group,
        disparity_ratio=ratio,
        flagged=ratio > threshold,
    )
