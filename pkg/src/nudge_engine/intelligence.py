"""Nudge intelligence: pick a strategy, write the message, shape the UI.

Selection is a deterministic ranking, not a scoring model: filter the
catalog by profile compatibility, honor recent thumbs-down vetoes, then
take the strategy whose complexity sits closest to the user's attention
budget. Ties break by id, so reruns never flap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Tuple

from nudge_engine.config import EngineConfig
from nudge_engine.domain import (
    ApplianceReplay,
    AttentionLevel,
    BehavioralSignals,
    BehavioralStage,
    ChartType,
    CognitiveMode,
    MESSAGE_MAX_CHARS,
    ReasonerKind,
    Strategy,
    StrategySelection,
    StrategyTaxonomy,
    ThumbSignal,
    UIContext,
    UserProfile,
    replay_appliances,
)
from nudge_engine.gateway import GatewayUnavailable, LlmGateway, PromptBundle

RELAXED_MARKER = "feedback_relaxed"


class NoStrategyError(Exception):
    """Nothing in the catalog fits this profile."""


class GroundingError(Exception):
    """No powered appliance to anchor the message in."""


# ---------------------------------------------------------------------------
# Strategy selection
# ---------------------------------------------------------------------------


def _rank(level) -> int:
    return list(type(level)).index(level)


def select_strategy(
    profile: UserProfile,
    taxonomy: StrategyTaxonomy,
    recent_feedback: Optional[Mapping[str, ThumbSignal]] = None,
    exclude: Tuple[str, ...] = (),
) -> StrategySelection:
    """One deterministic pass over the catalog.

    recent_feedback maps strategy_id to the most recent thumb for this user;
    a Down there vetoes the strategy unless that would empty the pool, in
    which case the veto is relaxed and the selection says so. `exclude` is
    the retry path: strategies already tried and exhausted this run.
    """
    feedback = dict(recent_feedback or {})
    reasons: Dict[str, str] = {}
    eligible: List[Strategy] = []
    for strategy in taxonomy.strategies:
        if strategy.id in exclude:
            reasons[strategy.id] = "exhausted_this_run"
        elif profile.cognitive_mode not in strategy.compatible_modes:
            reasons[strategy.id] = "incompatible_mode"
        elif profile.behavioral_stage not in strategy.compatible_stages:
            reasons[strategy.id] = "incompatible_stage"
        elif profile.attention < strategy.min_attention:
            reasons[strategy.id] = "attention_below_minimum"
        else:
            eligible.append(strategy)

    if not eligible:
        raise NoStrategyError(
            f"no strategy fits mode={profile.cognitive_mode.value} "
            f"stage={profile.behavioral_stage.value} attention={profile.attention.value}"
        )

    vetoed = [s for s in eligible if feedback.get(s.id) is ThumbSignal.DOWN]
    pool = [s for s in eligible if s not in vetoed]
    relaxed = False
    if not pool:
        pool = eligible  # everything eligible was thumbed down; veto yields
        relaxed = True

    attention_rank = _rank(profile.attention)

    def key(strategy: Strategy) -> Tuple[int, str]:
        return (abs(_rank(strategy.complexity) - attention_rank), strategy.id)

    winner = min(pool, key=key)
    for strategy in pool:
        if strategy is not winner:
            reasons[strategy.id] = "ranked_below_winner"
    if not relaxed:
        for strategy in vetoed:
            reasons[strategy.id] = "recent_negative_feedback"

    distance = abs(_rank(winner.complexity) - attention_rank)
    because = (
        f"complexity {winner.complexity.value} sits distance {distance} from "
        f"attention {profile.attention.value}"
    )
    if relaxed:
        because += f"; {RELAXED_MARKER}"
    return StrategySelection(
        strategy_id=winner.id,
        candidates_considered=tuple(s.id for s in taxonomy.strategies),
        rejection_reasons=reasons,
        selected_because=because,
    )


def selection_was_relaxed(selection: StrategySelection) -> bool:
    return RELAXED_MARKER in selection.selected_because


# ---------------------------------------------------------------------------
# Grounding
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    # whole numbers stay whole; otherwise the fewest decimals that keep the
    # printed figure within half a percent of the true value, so a cited
    # number always re-parses inside the grounding tolerance
    if float(value).is_integer():
        return f"{value:.0f}"
    for digits in range(1, 6):
        text = f"{value:.{digits}f}"
        if abs(float(text) - value) <= 0.005 * abs(value):
            return text
    return f"{value:.6f}"


def grounding_facts(signals: BehavioralSignals) -> Dict[str, Any]:
    """Facts of record for the message: the heaviest powered appliance plus
    the session total. Every quantity a message cites must come from here."""
    replay: ApplianceReplay = replay_appliances(signals.appliance_interactions)
    powered = {
        appliance_id: state
        for appliance_id, state in replay.registry.items()
        if state.powered
    }
    if not powered:
        raise GroundingError("no powered appliance in this session's registry")
    top_id, top = max(
        powered.items(), key=lambda kv: (kv[1].wattage_w * kv[1].usage_hours, kv[0])
    )
    return {
        "appliance_id": top_id,
        "wattage_w": top.wattage_w,
        "usage_hours": top.usage_hours,
        "kwh": top.wattage_w * top.usage_hours / 1000.0,
        "total_kwh": replay.consumption_kwh,
    }


# ---------------------------------------------------------------------------
# Message generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NudgeDraft:
    strategy_id: str
    message: str
    attempt: int
    reasoner: ReasonerKind
    fallback: bool

    def trace_payload(self) -> Dict[str, Any]:
        return {
            "strategy_id": self.strategy_id,
            "message": self.message,
            "attempt": self.attempt,
            "reasoner": self.reasoner.value,
            "fallback": self.fallback,
        }


def _rule_message(strategy_id: str, facts: Mapping[str, Any]) -> str:
    app = facts["appliance_id"]
    watts = _fmt(facts["wattage_w"])
    hours = _fmt(facts["usage_hours"])
    kwh = _fmt(facts["kwh"])
    total = _fmt(facts["total_kwh"])
    if strategy_id == "enable_comparisons":
        return (
            f"Side by side: {app} is your biggest draw at {watts} W for {hours} h, "
            f"about {kwh} kWh of today's {total} kWh. Seeing it next to your other "
            f"appliances makes the trade-offs easy to weigh."
        )
    if strategy_id == "just_in_time":
        return (
            f"While you are here: {app} is set for {hours} h at {watts} W, about "
            f"{kwh} kWh. A quick schedule tweak now keeps that entirely in your hands."
        )
    if strategy_id == "raise_visibility":
        return (
            f"Worth a look: {app} accounts for {kwh} kWh of today's {total} kWh, "
            f"running {hours} h at {watts} W. The chart below breaks it down."
        )
    if strategy_id == "reduce_distance":
        return (
            f"One tap away: the schedule for {app} ({watts} W, {hours} h, about "
            f"{kwh} kWh) is right on this screen, so trying a shorter run takes seconds."
        )
    if strategy_id == "remind_consequences":
        return (
            f"Small habits add up: {app} at {watts} W for {hours} h comes to about "
            f"{kwh} kWh each day, and a gentler schedule would show on your next summary."
        )
    raise NoStrategyError(f"no message template for strategy {strategy_id!r}")


_ATTEMPT_PREFIXES = ("", "Another angle: ", "Put differently: ")


def generate_nudge(
    strategy_id: str,
    signals: BehavioralSignals,
    config: EngineConfig,
    attempt: int = 1,
    hint: str = "",
    reasoner: ReasonerKind = ReasonerKind.RULE_BASED,
    gateway: Optional[LlmGateway] = None,
) -> NudgeDraft:
    """Write one message grounded in this session's facts.

    Regeneration attempts must not repeat themselves verbatim, so the
    attempt index reshapes the text deterministically.
    """
    if attempt < 1:
        raise ValueError("attempt counts from 1")
    facts = grounding_facts(signals)

    if reasoner is ReasonerKind.LLM_BACKED and gateway is not None:
        bundle = PromptBundle(
            template_id="nudge_message",
            variables={
                "strategy_id": strategy_id,
                "appliance_id": facts["appliance_id"],
                "kwh": _fmt(facts["kwh"]),
                "usage_hours": _fmt(facts["usage_hours"]),
                "wattage_w": _fmt(facts["wattage_w"]),
                "hint": hint or f"attempt {attempt}",
            },
            system_fragments=config.fragments,
            temperature=config.generate_temperature,
        )
        try:
            message = gateway.complete(bundle).strip()
            # an overlong reply is as unusable as an empty one
            if message and len(message) <= MESSAGE_MAX_CHARS:
                return NudgeDraft(strategy_id, message, attempt, ReasonerKind.LLM_BACKED, False)
        except GatewayUnavailable:
            pass
        message = _attempt_shaped(strategy_id, facts, attempt)
        return NudgeDraft(strategy_id, message, attempt, ReasonerKind.RULE_BASED, True)

    message = _attempt_shaped(strategy_id, facts, attempt)
    return NudgeDraft(strategy_id, message, attempt, ReasonerKind.RULE_BASED, False)


def _attempt_shaped(strategy_id: str, facts: Mapping[str, Any], attempt: int) -> str:
    prefix = _ATTEMPT_PREFIXES[(attempt - 1) % len(_ATTEMPT_PREFIXES)]
    return prefix + _rule_message(strategy_id, facts)


# ---------------------------------------------------------------------------
# UI adaptation
# ---------------------------------------------------------------------------

FONT_LOW_ATTENTION_PX = 24
FONT_MEDIUM_ATTENTION_PX = 19
FONT_HIGH_ATTENTION_PX = 16


def adapt_ui(
    profile: UserProfile, palette: Mapping[BehavioralStage, Mapping[str, str]]
) -> UIContext:
    """Profile-driven presentation.

    Larger type for lower attention. The one exception: an analytical reader
    still at pre_contemplation gets the dense layout even at medium
    attention, since that pairing reads charts, not headlines.
    """
    if profile.attention is AttentionLevel.LOW:
        font = FONT_LOW_ATTENTION_PX
    elif profile.attention is AttentionLevel.HIGH:
        font = FONT_HIGH_ATTENTION_PX
    elif (
        profile.cognitive_mode is CognitiveMode.ANALYTICAL
        and profile.behavioral_stage is BehavioralStage.PRE_CONTEMPLATION
    ):
        font = FONT_HIGH_ATTENTION_PX
    else:
        font = FONT_MEDIUM_ATTENTION_PX

    if profile.attention is AttentionLevel.LOW:
        chart = ChartType.BAR
    elif profile.cognitive_mode is CognitiveMode.ANALYTICAL:
        chart = ChartType.LINE
    else:
        chart = ChartType.PIE

    colors = palette[profile.behavioral_stage]
    return UIContext(
        font_size_px=font,
        chart_type=chart,
        color_primary=colors["primary"],
        color_secondary=colors["secondary"],
    )


# ---------------------------------------------------------------------------
# Explanation
# ---------------------------------------------------------------------------


_EXPLAIN_REQUIRED_HINT = (
    "Your answer must literally name the cognitive mode, behavioral stage, "
    "attention level, the chosen strategy id, and at least one rejected "
    "alternative with its reason."
)


def _explanation_complete(text: str, profile: UserProfile, selection: StrategySelection) -> bool:
    lowered = text.lower()
    required = [
        profile.cognitive_mode.value,
        profile.behavioral_stage.value,
        profile.attention.value,
        selection.strategy_id,
    ]
    if not all(token in lowered for token in required):
        return False
    if not selection.rejection_reasons:
        return True
    return any(sid in lowered for sid in selection.rejection_reasons)


def compose_explanation(
    profile: UserProfile,
    selection: StrategySelection,
    taxonomy: StrategyTaxonomy,
    config: Optional[EngineConfig] = None,
    reasoner: ReasonerKind = ReasonerKind.RULE_BASED,
    gateway: Optional[LlmGateway] = None,
) -> str:
    """Human-readable account of why this nudge, for the transparency panel.

    Model-written text is only trusted if it actually names the profile,
    the chosen strategy, and a rejected alternative; one reprompt, then the
    sentence templates take over.
    """
    rejected = [
        f"{sid} ({reason})" for sid, reason in sorted(selection.rejection_reasons.items())
    ]
    rejected_summary = "; ".join(rejected) if rejected else "only compatible option"

    if reasoner is ReasonerKind.LLM_BACKED and gateway is not None and config is not None:
        variables = {
            "cognitive_mode": profile.cognitive_mode.value,
            "behavioral_stage": profile.behavioral_stage.value,
            "attention": profile.attention.value,
            "strategy_id": selection.strategy_id,
            "selected_because": selection.selected_because,
            "rejected_summary": rejected_summary,
        }
        for suffix in ("", _EXPLAIN_REQUIRED_HINT):
            bundle = PromptBundle(
                template_id="explain",
                variables=variables,
                system_fragments=config.fragments,
                temperature=config.classify_temperature,
                suffix=suffix,
            )
            try:
                text = gateway.complete(bundle).strip()
            except GatewayUnavailable:
                break
            if text and _explanation_complete(text, profile, selection):
                return text

    strategy = taxonomy.get(selection.strategy_id)
    return (
        f"This session read as {profile.cognitive_mode.value} at the "
        f"{profile.behavioral_stage.value} stage with {profile.attention.value} "
        f"attention. {strategy.display_name} ({selection.strategy_id}) fit best: "
        f"{selection.selected_because}. Also weighed: {rejected_summary}."
    )
