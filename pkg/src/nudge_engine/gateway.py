"""Single egress point for model calls.

Nothing else in the engine is allowed to talk to a language model. Every
prompt is assembled here from a declared template plus the mandatory
guardrail fragments, so a prompt without them is unrepresentable. Without
a configured endpoint the gateway runs in mock mode: a pure function of
(template_id, canonical variables) with zero network activity.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from nudge_engine.config import REQUIRED_FRAGMENT_IDS, EngineConfig, GuardrailFragment
from nudge_engine.domain import InvariantViolation, canonical_json

logger = logging.getLogger(__name__)

RETRY_BASE_DELAY_S = 0.5


class TemplateError(ValueError):
    """Unknown template or placeholder mismatch; raised before any network."""


class ParseFailure(ValueError):
    """Model output did not resolve to exactly one domain label."""


class GatewayUnavailable(RuntimeError):
    """Transport failed after the retry budget was spent."""


# ============================================================================
# Template catalog
# ============================================================================


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    placeholders: Tuple[str, ...]
    output_domain: Optional[Tuple[str, ...]]
    body: str


class TemplateCatalog:
    """One JSON file per template under the configured directory."""

    def __init__(self, templates_dir: Path):
        self._dir = Path(templates_dir)
        self._cache: Dict[str, PromptTemplate] = {}

    def get(self, template_id: str) -> PromptTemplate:
        if template_id in self._cache:
            return self._cache[template_id]
        path = self._dir / f"{template_id}.json"
        if not path.exists():
            raise TemplateError(f"unknown template_id {template_id!r}")
        raw = json.loads(path.read_text(encoding="utf-8"))
        domain = raw.get("output_domain")
        template = PromptTemplate(
            template_id=raw["template_id"],
            placeholders=tuple(raw.get("placeholders", [])),
            output_domain=tuple(domain) if domain else None,
            body=raw["body"],
        )
        if template.template_id != template_id:
            raise TemplateError(
                f"template file {path.name} declares id {template.template_id!r}"
            )
        self._cache[template_id] = template
        return template

    def render(self, template: PromptTemplate, variables: Mapping[str, Any]) -> str:
        declared = set(template.placeholders)
        supplied = set(variables)
        missing = declared - supplied
        if missing:
            raise TemplateError(
                f"template {template.template_id!r} missing variables: {sorted(missing)}"
            )
        unknown = supplied - declared
        if unknown:
            raise TemplateError(
                f"template {template.template_id!r} got undeclared variables: {sorted(unknown)}"
            )
        body = template.body
        for name in template.placeholders:
            body = body.replace("{" + name + "}", str(variables[name]))
        return body


# ============================================================================
# Prompt bundle
# ============================================================================

_SCALARS = (str, int, float, bool)


@dataclass(frozen=True)
class PromptBundle:
    """Everything one model call needs. The guardrail fragments are a
    constructor requirement, not a convention."""

    template_id: str
    variables: Dict[str, Any]
    system_fragments: Tuple[GuardrailFragment, ...]
    temperature: float
    expected_domain: Optional[Tuple[str, ...]] = None
    suffix: str = ""

    def __post_init__(self):
        if not self.template_id or not isinstance(self.template_id, str):
            raise InvariantViolation("PromptBundle.template_id must be non-empty")
        object.__setattr__(self, "variables", dict(self.variables))
        for key, value in self.variables.items():
            if not isinstance(key, str) or not isinstance(value, _SCALARS):
                raise InvariantViolation("PromptBundle.variables must map str -> scalar")
        frags = tuple(self.system_fragments)
        for frag in frags:
            if not isinstance(frag, GuardrailFragment):
                raise InvariantViolation("system_fragments must hold GuardrailFragment")
        missing = [
            fid for fid in REQUIRED_FRAGMENT_IDS if fid not in {f.id for f in frags}
        ]
        if missing:
            raise InvariantViolation(
                "PromptBundle.system_fragments is missing mandatory guardrail "
                f"fragments: {', '.join(missing)}"
            )
        object.__setattr__(self, "system_fragments", frags)
        temp = self.temperature
        if isinstance(temp, bool) or not isinstance(temp, (int, float)):
            raise InvariantViolation("PromptBundle.temperature must be a number")
        if not 0.0 <= temp <= 2.0:
            raise InvariantViolation("PromptBundle.temperature must be within [0, 2]")
        object.__setattr__(self, "temperature", float(temp))
        if self.expected_domain is not None:
            object.__setattr__(self, "expected_domain", tuple(self.expected_domain))


# ============================================================================
# Enum parsing
# ============================================================================

_TRIM = " \t\r\n.,:;!?\"'`()[]{}"


def _normalize(text: str) -> str:
    return re.sub(r"[\s\-]+", "_", text.strip().lower()).strip("_")


def parse_enum(text: str, domain: Sequence[str]) -> str:
    """Map free-form model output onto exactly one domain label.

    Exact match (case/punctuation-insensitive) wins; otherwise the text must
    contain exactly one distinct label as a standalone token. Overlapping
    matches keep only the longest so 'pre_contemplation' never double-counts
    its 'contemplation' tail.
    """
    if not domain:
        raise ParseFailure("empty domain")
    cleaned = _normalize(text.strip(_TRIM))
    labels = [label.lower() for label in domain]
    if cleaned in labels:
        return domain[labels.index(cleaned)]

    spans: List[Tuple[int, int, str]] = []
    for label in labels:
        for match in re.finditer(
            r"(?<![a-z0-9])" + re.escape(label) + r"(?![a-z0-9])", cleaned
        ):
            spans.append((match.start(), match.end(), label))
    # drop any match fully contained inside a longer one
    kept = [
        (start, end, label)
        for start, end, label in spans
        if not any(
            (o_start <= start and end <= o_end and (o_start, o_end) != (start, end))
            for o_start, o_end, _ in spans
        )
    ]
    found = {label for _, _, label in kept}
    if len(found) == 1:
        label = found.pop()
        return domain[labels.index(label)]
    raise ParseFailure(
        f"expected exactly one of {list(domain)}, found {sorted(found) or 'none'} in {text!r}"
    )


# ============================================================================
# Deterministic mock
# ============================================================================


def mock_key(template_id: str, variables: Mapping[str, Any]) -> Tuple[str, str]:
    return (template_id, canonical_json(dict(variables)))


def mock_complete(
    template_id: str,
    variables: Mapping[str, Any],
    output_domain: Optional[Sequence[str]] = None,
    lookup: Optional[Mapping[Tuple[str, str], str]] = None,
) -> str:
    """Pure stand-in for a model call.

    Pinned fixtures win; otherwise enum templates hash onto their declared
    domain and free-text templates compose a reply from their variables.
    """
    key = mock_key(template_id, variables)
    if lookup and key in lookup:
        return lookup[key]
    if output_domain:
        digest = hashlib.sha256((key[0] + "\x00" + key[1]).encode("utf-8")).hexdigest()
        return list(output_domain)[int(digest, 16) % len(output_domain)]
    if template_id == "nudge_message":
        return (
            f"Your {variables.get('appliance_id', 'appliance')} runs about "
            f"{variables.get('usage_hours', '?')} h a day, roughly "
            f"{variables.get('kwh', '?')} kWh. Trimming an hour when you do not "
            f"need it would quietly shrink that."
        )
    if template_id == "explain":
        return (
            f"This suggestion fits a {variables.get('cognitive_mode', '?')} reader at the "
            f"{variables.get('behavioral_stage', '?')} stage with "
            f"{variables.get('attention', '?')} attention. We picked "
            f"{variables.get('strategy_id', '?')} because {variables.get('selected_because', '?')}. "
            f"Also weighed: {variables.get('rejected_summary', 'no alternatives')}."
        )
    return f"mock:{template_id}"


# ============================================================================
# Gateway
# ============================================================================


class LlmGateway:
    """Renders prompts, talks to the model (or the mock), records captures.

    capture_hook, when set, receives one dict per outgoing call:
    {template_id, prompt, temperature, network}. Tests use it to prove the
    guardrail fragments ride along on every single prompt.
    """

    def __init__(
        self,
        config: EngineConfig,
        transport: Optional[Callable[[str, PromptBundle], str]] = None,
        lookup: Optional[Mapping[Tuple[str, str], str]] = None,
        capture_hook: Optional[List[Dict[str, Any]]] = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self._config = config
        self._catalog = TemplateCatalog(config.templates_dir)
        self._transport = transport
        self._lookup = dict(lookup or {})
        self.capture_hook = capture_hook
        self._sleeper = sleeper

    @property
    def mock_mode(self) -> bool:
        return self._transport is None and not self._config.llm_endpoint

    def template_domain(self, template_id: str) -> Optional[Tuple[str, ...]]:
        return self._catalog.get(template_id).output_domain

    def render(self, bundle: PromptBundle) -> str:
        template = self._catalog.get(bundle.template_id)
        body = self._catalog.render(template, bundle.variables)
        parts = [frag.text for frag in bundle.system_fragments]
        parts.append(body)
        if bundle.suffix:
            parts.append(bundle.suffix)
        return "\n\n".join(parts)

    def complete(self, bundle: PromptBundle) -> str:
        """One model call; template problems surface before any transport."""
        template = self._catalog.get(bundle.template_id)
        prompt = self.render(bundle)  # raises TemplateError pre-network
        use_network = not self.mock_mode
        if self.capture_hook is not None:
            self.capture_hook.append(
                {
                    "template_id": bundle.template_id,
                    "prompt": prompt,
                    "temperature": bundle.temperature,
                    "network": use_network,
                }
            )
        if not use_network:
            domain = bundle.expected_domain or template.output_domain
            return mock_complete(bundle.template_id, bundle.variables, domain, self._lookup)
        return self._call_with_retry(prompt, bundle)

    def _call_with_retry(self, prompt: str, bundle: PromptBundle) -> str:
        last_error: Optional[Exception] = None
        for attempt in range(2):  # one try, one retry
            try:
                if self._transport is not None:
                    return self._transport(prompt, bundle)
                return self._http_call(prompt, bundle)
            except Exception as err:  # noqa: BLE001 - transport boundary
                last_error = err
                logger.warning("gateway call failed (attempt %d): %s", attempt + 1, err)
                if attempt == 0:
                    self._sleeper(RETRY_BASE_DELAY_S * (2 ** attempt))
        raise GatewayUnavailable(f"model endpoint unreachable: {last_error}")

    def _http_call(self, prompt: str, bundle: PromptBundle) -> str:
        import httpx  # deferred: mock mode must not need it at call time

        system_text = "\n\n".join(f.text for f in bundle.system_fragments)
        user_text = prompt[len(system_text) :].lstrip("\n")
        headers = {"Content-Type": "application/json"}
        if self._config.llm_api_key:
            headers["Authorization"] = f"Bearer {self._config.llm_api_key}"
        payload = {
            "model": self._config.llm_model,
            "temperature": bundle.temperature,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
        }
        response = httpx.post(
            self._config.llm_endpoint,
            json=payload,
            headers=headers,
            timeout=self._config.llm_timeout_s,
        )
        response.raise_for_status()
        return response.json()["choices"][0]["message"]["content"]
