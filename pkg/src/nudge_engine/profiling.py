"""Turns captured signals into a user profile along three dimensions.

Each dimension has a deterministic rule path and an optional model-backed
path. The model path must land on the same label vocabulary; when it cannot
(unparseable twice, or the endpoint is down) the rule result steps in and
the substitution is recorded, never hidden.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Any, Dict, Optional, Tuple

from nudge_engine.config import EngineConfig, Thresholds
from nudge_engine.domain import (
    ApplianceVerb,
    AttentionLevel,
    BehavioralSignals,
    BehavioralStage,
    CognitiveMode,
    ContextSnapshot,
    DeviceType,
    ReasonerKind,
    TraceStage,
    UserProfile,
    replay_appliances,
)
from nudge_engine.gateway import (
    GatewayUnavailable,
    LlmGateway,
    ParseFailure,
    PromptBundle,
    parse_enum,
)


class ProfilingError(ValueError):
    """Signals too thin or malformed to classify."""


@dataclass(frozen=True)
class Classification:
    """One classified dimension plus how the value was produced."""

    stage: TraceStage
    value: str
    reasoner: ReasonerKind
    fallback: bool

    def trace_payload(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "reasoner": self.reasoner.value,
            "fallback": self.fallback,
        }


# ---------------------------------------------------------------------------
# Derived features
# ---------------------------------------------------------------------------


def stage_features(signals: BehavioralSignals, thresholds: Thresholds) -> Dict[str, int]:
    replay = replay_appliances(signals.appliance_interactions)
    high_views = sum(
        1
        for item in signals.appliance_interactions
        if item.action is ApplianceVerb.VIEW and item.wattage_w >= thresholds.high_wattage_w
    )
    return {
        "applied_reductions": replay.applied_reductions,
        "planned_reductions": replay.planned_reductions,
        "high_wattage_views": high_views,
    }


def _max_wattage(signals: BehavioralSignals) -> float:
    return max((i.wattage_w for i in signals.appliance_interactions), default=0.0)


# ---------------------------------------------------------------------------
# Rule-based classifiers. Pure functions of (signals, context, thresholds);
# the whole pipeline's determinism rests on that purity.
# ---------------------------------------------------------------------------


def classify_cognitive_mode(
    signals: BehavioralSignals, thresholds: Thresholds
) -> CognitiveMode:
    """Analytical takes sustained, deliberate, consumption-aware engagement;
    anything less reads as intuitive."""
    deliberate = (
        signals.click_count >= thresholds.analytical_min_clicks
        and signals.mean_hesitation_ms >= thresholds.analytical_min_hesitation_ms
    )
    aware = _max_wattage(signals) >= thresholds.high_wattage_w
    return CognitiveMode.ANALYTICAL if deliberate and aware else CognitiveMode.INTUITIVE


def classify_behavioral_stage(
    signals: BehavioralSignals,
    thresholds: Thresholds,
    prior_reducing_sessions: int = 0,
) -> BehavioralStage:
    """Most-committed stage the evidence supports wins."""
    features = stage_features(signals, thresholds)
    if (
        features["applied_reductions"] >= 1
        and prior_reducing_sessions >= thresholds.maintenance_prior_sessions
    ):
        return BehavioralStage.MAINTENANCE
    if features["applied_reductions"] >= 1:
        return BehavioralStage.ACTION
    if features["planned_reductions"] >= 1:
        return BehavioralStage.PREPARATION
    if features["high_wattage_views"] >= 1:
        return BehavioralStage.CONTEMPLATION
    return BehavioralStage.PRE_CONTEMPLATION


def classify_attention(
    signals: BehavioralSignals,
    context: ContextSnapshot,
    thresholds: Thresholds,
) -> AttentionLevel:
    levels = list(AttentionLevel)  # low, medium, high
    rank = len(levels) - 1
    if context.device is DeviceType.MOBILE:
        rank -= 1
    overloaded = signals.mean_hesitation_ms > thresholds.overload_hesitation_ms
    disengaged = signals.click_count < thresholds.low_engagement_max_clicks
    if overloaded or disengaged:
        rank -= 1
    return levels[max(rank, 0)]


# ---------------------------------------------------------------------------
# Model-backed path
# ---------------------------------------------------------------------------


class _ModelPathFailed(Exception):
    pass


def _classify_with_model(
    gateway: LlmGateway,
    config: EngineConfig,
    template_id: str,
    variables: Dict[str, Any],
) -> str:
    domain = gateway.template_domain(template_id)
    if not domain:
        raise _ModelPathFailed(f"template {template_id!r} declares no label domain")
    bundle = PromptBundle(
        template_id=template_id,
        variables=variables,
        system_fragments=config.fragments,
        temperature=config.classify_temperature,
    )
    try:
        reply = gateway.complete(bundle)
    except GatewayUnavailable as err:
        raise _ModelPathFailed(str(err)) from None
    try:
        return parse_enum(reply, domain)
    except ParseFailure:
        pass
    # one reprompt, with the vocabulary spelled out
    retry = PromptBundle(
        template_id=template_id,
        variables=variables,
        system_fragments=config.fragments,
        temperature=config.classify_temperature,
        suffix="Answer with exactly one of: " + ", ".join(domain) + ".",
    )
    try:
        reply = gateway.complete(retry)
        return parse_enum(reply, domain)
    except (ParseFailure, GatewayUnavailable) as err:
        raise _ModelPathFailed(str(err)) from None


def _model_variables(
    template_id: str,
    signals: BehavioralSignals,
    context: ContextSnapshot,
    thresholds: Thresholds,
    prior_reducing_sessions: int,
) -> Dict[str, Any]:
    if template_id == "cognitive_mode":
        return {
            "click_count": signals.click_count,
            "mean_hesitation_ms": round(signals.mean_hesitation_ms, 1),
            "max_wattage_w": round(_max_wattage(signals), 1),
            "device": context.device.value,
        }
    if template_id == "behavioral_stage":
        features = stage_features(signals, thresholds)
        return {**features, "prior_reducing_sessions": prior_reducing_sessions}
    if template_id == "attention":
        return {
            "device": context.device.value,
            "mean_hesitation_ms": round(signals.mean_hesitation_ms, 1),
            "click_count": signals.click_count,
        }
    raise ProfilingError(f"no variable mapping for template {template_id!r}")


# ---------------------------------------------------------------------------
# Profile assembly
# ---------------------------------------------------------------------------

_DIMENSIONS = (
    (TraceStage.COGNITIVE_MODE, "cognitive_mode", CognitiveMode),
    (TraceStage.BEHAVIORAL_STAGE, "behavioral_stage", BehavioralStage),
    (TraceStage.ATTENTION, "attention", AttentionLevel),
)


def build_profile(
    signals: BehavioralSignals,
    context: ContextSnapshot,
    config: EngineConfig,
    at: datetime,
    reasoner: ReasonerKind = ReasonerKind.RULE_BASED,
    gateway: Optional[LlmGateway] = None,
    prior_reducing_sessions: int = 0,
) -> Tuple[UserProfile, Tuple[Classification, ...]]:
    """Classify all three dimensions; returns the profile plus one
    Classification per dimension, in trace order. Session identity comes
    from the context snapshot; signals are already session-scoped."""
    if reasoner is ReasonerKind.LLM_BACKED and gateway is None:
        raise ProfilingError("model-backed profiling needs a gateway")

    thresholds = config.thresholds
    rule_values = {
        "cognitive_mode": classify_cognitive_mode(signals, thresholds),
        "behavioral_stage": classify_behavioral_stage(
            signals, thresholds, prior_reducing_sessions
        ),
        "attention": classify_attention(signals, context, thresholds),
    }

    classifications = []
    chosen: Dict[str, Any] = {}
    for stage, template_id, enum_cls in _DIMENSIONS:
        if reasoner is ReasonerKind.RULE_BASED:
            value = rule_values[template_id]
            classifications.append(
                Classification(stage, value.value, ReasonerKind.RULE_BASED, False)
            )
        else:
            variables = _model_variables(
                template_id, signals, context, thresholds, prior_reducing_sessions
            )
            try:
                label = _classify_with_model(gateway, config, template_id, variables)
                value = enum_cls(label)
                classifications.append(
                    Classification(stage, value.value, ReasonerKind.LLM_BACKED, False)
                )
            except _ModelPathFailed:
                value = rule_values[template_id]
                classifications.append(
                    Classification(stage, value.value, ReasonerKind.RULE_BASED, True)
                )
        chosen[template_id] = value

    profile = UserProfile(
        session_id=context.session_id,
        cognitive_mode=chosen["cognitive_mode"],
        behavioral_stage=chosen["behavioral_stage"],
        attention=chosen["attention"],
        reasoner=reasoner,
        classified_at=at,
    )
    return profile, tuple(classifications)
