"""Configuration loading: thresholds, taxonomy, guardrail text, palette.

Every tunable that the classifiers or guardrails depend on lives in a file
under assets/ so a deployment can replace them without touching code. All
loaders validate wholesale: one bad entry rejects the whole file.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from nudge_engine.domain import (
    BehavioralStage,
    InvariantViolation,
    StrategyTaxonomy,
)


class ConfigError(ValueError):
    """A configuration file is missing or does not validate."""


def _asset(name: str) -> Path:
    return Path(str(resources.files("nudge_engine").joinpath("assets", name)))


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file missing: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from None


# ============================================================================
# Classifier thresholds
# ============================================================================


@dataclass(frozen=True)
class Thresholds:
    version: str
    analytical_min_clicks: int
    analytical_min_hesitation_ms: float
    high_wattage_w: float
    overload_hesitation_ms: float
    low_engagement_max_clicks: int
    maintenance_prior_sessions: int


def load_thresholds(path: Optional[Path] = None) -> Thresholds:
    raw = _read_json(path or _asset("thresholds.json"))
    try:
        return Thresholds(
            version=str(raw["version"]),
            analytical_min_clicks=int(raw["analytical_min_clicks"]),
            analytical_min_hesitation_ms=float(raw["analytical_min_hesitation_ms"]),
            high_wattage_w=float(raw["high_wattage_w"]),
            overload_hesitation_ms=float(raw["overload_hesitation_ms"]),
            low_engagement_max_clicks=int(raw["low_engagement_max_clicks"]),
            maintenance_prior_sessions=int(raw["maintenance_prior_sessions"]),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"thresholds config invalid: {err}") from None


# ============================================================================
# Strategy taxonomy
# ============================================================================

# The catalog must always cover these; selection math assumes they exist.
REQUIRED_STRATEGY_IDS = (
    "enable_comparisons",
    "just_in_time",
    "raise_visibility",
    "reduce_distance",
    "remind_consequences",
)


def load_taxonomy(path: Optional[Path] = None) -> StrategyTaxonomy:
    raw = _read_json(path or _asset("taxonomy.json"))
    try:
        taxonomy = StrategyTaxonomy.from_payload(raw)
    except InvariantViolation as err:
        raise ConfigError(f"taxonomy config invalid: {err}") from None
    missing = [sid for sid in REQUIRED_STRATEGY_IDS if sid not in taxonomy.ids()]
    if missing:
        raise ConfigError(f"taxonomy config missing required strategies: {missing}")
    return taxonomy


# ============================================================================
# Guardrail prompt fragments
# ============================================================================

REQUIRED_FRAGMENT_IDS = ("bias_mitigation", "ethics_compliance")


@dataclass(frozen=True)
class GuardrailFragment:
    id: str
    text: str


def load_fragments(path: Optional[Path] = None) -> Tuple[GuardrailFragment, ...]:
    raw = _read_json(path or _asset("guardrail_fragments.json"))
    items = raw.get("fragments")
    if not isinstance(items, list) or not items:
        raise ConfigError("guardrail fragments config must list at least one fragment")
    fragments: List[GuardrailFragment] = []
    for item in items:
        frag_id = item.get("id")
        text = item.get("text")
        if not frag_id or not isinstance(frag_id, str):
            raise ConfigError("guardrail fragment missing id")
        if not text or not isinstance(text, str):
            raise ConfigError(f"guardrail fragment {frag_id!r} missing text")
        fragments.append(GuardrailFragment(frag_id, text))
    present = {f.id for f in fragments}
    missing = [fid for fid in REQUIRED_FRAGMENT_IDS if fid not in present]
    if missing:
        raise ConfigError(f"guardrail fragments config missing: {missing}")
    return tuple(fragments)


# ============================================================================
# Phrase lists (plain text, one entry per line)
# ============================================================================


def _load_phrases(path: Path) -> Tuple[str, ...]:
    if not path.exists():
        raise ConfigError(f"config file missing: {path}")
    phrases = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            phrases.append(line.lower())
    if not phrases:
        raise ConfigError(f"phrase list {path} is empty")
    return tuple(phrases)


def load_blacklist(path: Optional[Path] = None) -> Tuple[str, ...]:
    return _load_phrases(path or _asset("blacklist.txt"))


def load_loss_phrases(path: Optional[Path] = None) -> Tuple[str, ...]:
    return _load_phrases(path or _asset("loss_framing.txt"))


# ============================================================================
# Palette
# ============================================================================

_HEX = re.compile(r"^#[0-9a-f]{6}$")


def load_palette(path: Optional[Path] = None) -> Dict[BehavioralStage, Dict[str, str]]:
    raw = _read_json(path or _asset("palette.json"))
    palette: Dict[BehavioralStage, Dict[str, str]] = {}
    for stage in BehavioralStage:
        entry = raw.get(stage.value)
        if not isinstance(entry, dict):
            raise ConfigError(f"palette config missing stage {stage.value!r}")
        colors = {}
        for role in ("primary", "secondary"):
            value = str(entry.get(role, "")).lower()
            if not _HEX.match(value):
                raise ConfigError(f"palette {stage.value}.{role} must be #rrggbb, got {value!r}")
            colors[role] = value
        palette[stage] = colors
    return palette


# ============================================================================
# Engine configuration
# ============================================================================


@dataclass
class EngineConfig:
    thresholds: Thresholds
    taxonomy: StrategyTaxonomy
    fragments: Tuple[GuardrailFragment, ...]
    blacklist: Tuple[str, ...]
    loss_phrases: Tuple[str, ...]
    palette: Dict[BehavioralStage, Dict[str, str]]
    templates_dir: Path
    fairness_threshold: float = 2.0
    fact_tolerance: float = 0.05
    vulnerability_threshold: float = 0.5
    # generation temperatures: cooler for classification, warmer for text
    classify_temperature: float = 0.3
    generate_temperature: float = 0.7
    llm_endpoint: Optional[str] = None
    llm_api_key: Optional[str] = None
    llm_model: str = "gpt-4o"
    llm_timeout_s: float = 10.0
    # run the pipeline automatically once a session accumulates this many
    # events (None = only on explicit request)


def default_config() -> EngineConfig:
    """Load everything from the packaged assets, honoring env overrides for
    the LLM transport."""
    return EngineConfig(
        thresholds=load_thresholds(),
        taxonomy=load_taxonomy(),
        fragments=load_fragments(),
        blacklist=load_blacklist(),
        loss_phrases=load_loss_phrases(),
        palette=load_palette(),
        templates_dir=_asset("templates"),
        llm_endpoint=os.environ.get("NUDGE_LLM_ENDPOINT"),
        llm_api_key=os.environ.get("NUDGE_LLM_API_KEY"),
        llm_model=os.environ.get("NUDGE_LLM_MODEL", "gpt-4o"),
    )
