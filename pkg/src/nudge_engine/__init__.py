"""Adaptive energy-nudging engine: capture, profiling, strategy selection,
compliance guardrails, and a simulation harness around one sequential
per-session pipeline."""

from nudge_engine.domain import (
    AttentionLevel,
    BehavioralSignals,
    BehavioralStage,
    ChartType,
    CognitiveMode,
    ComplianceVerdict,
    ContextSnapshot,
    DeviceType,
    EmotionDistribution,
    FairnessReport,
    FeedbackRecord,
    InvariantViolation,
    NudgeDelivery,
    PipelineOutcome,
    RawEvent,
    Strategy,
    StrategySelection,
    StrategyTaxonomy,
    TimeOfDay,
    TraceRecord,
    TraceStage,
    UIContext,
    UserProfile,
    canonical_serialize,
    deserialize,
)

__all__ = [
    "AttentionLevel",
    "BehavioralSignals",
    "BehavioralStage",
    "ChartType",
    "CognitiveMode",
    "ComplianceVerdict",
    "ContextSnapshot",
    "DeviceType",
    "EmotionDistribution",
    "FairnessReport",
    "FeedbackRecord",
    "InvariantViolation",
    "NudgeDelivery",
    "PipelineOutcome",
    "RawEvent",
    "Strategy",
    "StrategySelection",
    "StrategyTaxonomy",
    "TimeOfDay",
    "TraceRecord",
    "TraceStage",
    "UIContext",
    "UserProfile",
    "canonical_serialize",
    "deserialize",
]
