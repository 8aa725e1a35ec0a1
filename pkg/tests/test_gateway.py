"""Config loading and the model gateway: templates, mock, parsing, retry."""

import json

import pytest

from nudge_engine.config import (
    ConfigError,
    default_config,
    load_blacklist,
    load_fragments,
    load_palette,
    load_taxonomy,
)
from nudge_engine.domain import BehavioralStage, InvariantViolation
from nudge_engine.gateway import (
    GatewayUnavailable,
    LlmGateway,
    ParseFailure,
    PromptBundle,
    TemplateError,
    mock_complete,
    mock_key,
    parse_enum,
)


@pytest.fixture(scope="module")
def config():
    return default_config()


def bundle_for(config, template_id, variables, **kwargs):
    return PromptBundle(
        template_id=template_id,
        variables=variables,
        system_fragments=config.fragments,
        temperature=kwargs.pop("temperature", 0.3),
        **kwargs,
    )


CLASSIFY_VARS = {
    "click_count": 18,
    "mean_hesitation_ms": 4100.0,
    "max_wattage_w": 1500.0,
    "device": "desktop",
}


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------


def test_default_config_loads_everything(config):
    assert [s.id for s in config.taxonomy.strategies] == [
        "enable_comparisons",
        "just_in_time",
        "raise_visibility",
        "reduce_distance",
        "remind_consequences",
    ]
    assert [f.id for f in config.fragments] == ["bias_mitigation", "ethics_compliance"]
    assert config.blacklist and config.loss_phrases
    assert set(config.palette) == set(BehavioralStage)
    assert config.fairness_threshold == 2.0


def test_taxonomy_missing_required_strategy_rejected_wholesale(tmp_path, config):
    payload = config.taxonomy.to_payload()
    payload["strategies"] = [
        s for s in payload["strategies"] if s["id"] != "just_in_time"
    ]
    bad = tmp_path / "taxonomy.json"
    bad.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(ConfigError, match="just_in_time"):
        load_taxonomy(bad)


def test_taxonomy_malformed_entry_rejected(tmp_path, config):
    payload = config.taxonomy.to_payload()
    payload["strategies"][0]["complexity"] = "extreme"
    bad = tmp_path / "taxonomy.json"
    bad.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_taxonomy(bad)


def test_fragments_require_both_ids(tmp_path):
    bad = tmp_path / "fragments.json"
    bad.write_text(
        json.dumps({"fragments": [{"id": "bias_mitigation", "text": "stay neutral"}]}),
        encoding="utf-8",
    )
    with pytest.raises(ConfigError, match="ethics_compliance"):
        load_fragments(bad)


def test_phrase_list_skips_blanks_and_lowercases(tmp_path):
    lexicon = tmp_path / "words.txt"
    lexicon.write_text("You MUST\n\n  last chance  \n", encoding="utf-8")
    assert load_blacklist(lexicon) == ("you must", "last chance")


def test_empty_phrase_list_rejected(tmp_path):
    lexicon = tmp_path / "words.txt"
    lexicon.write_text("\n\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_blacklist(lexicon)


def test_palette_requires_every_stage(tmp_path, config):
    payload = {
        stage.value: colors
        for stage, colors in config.palette.items()
        if stage is not BehavioralStage.ACTION
    }
    bad = tmp_path / "palette.json"
    bad.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(ConfigError, match="action"):
        load_palette(bad)


def test_palette_rejects_bad_hex(tmp_path, config):
    payload = {stage.value: dict(colors) for stage, colors in config.palette.items()}
    payload["action"]["primary"] = "green"
    bad = tmp_path / "palette.json"
    bad.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_palette(bad)


# ---------------------------------------------------------------------------
# prompt bundles
# ---------------------------------------------------------------------------


def test_bundle_without_fragments_is_unrepresentable():
    with pytest.raises(InvariantViolation, match="system_fragments"):
        PromptBundle(
            template_id="cognitive_mode",
            variables=dict(CLASSIFY_VARS),
            system_fragments=(),
            temperature=0.3,
        )


def test_bundle_temperature_bounds(config):
    with pytest.raises(InvariantViolation):
        bundle_for(config, "cognitive_mode", dict(CLASSIFY_VARS), temperature=2.5)


def test_bundle_rejects_nested_variables(config):
    with pytest.raises(InvariantViolation):
        bundle_for(config, "cognitive_mode", {"click_count": [1, 2]})


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------


def test_unknown_template_id(config):
    gw = LlmGateway(config)
    bad = bundle_for(config, "weather_report", {"city": "oslo"})
    with pytest.raises(TemplateError, match="weather_report"):
        gw.complete(bad)


def test_missing_variable_fails_before_any_call(config):
    calls = []

    def transport(prompt, bundle):
        calls.append(prompt)
        return "analytical"

    gw = LlmGateway(config, transport=transport)
    partial = {k: v for k, v in CLASSIFY_VARS.items() if k != "device"}
    with pytest.raises(TemplateError, match="device"):
        gw.complete(bundle_for(config, "cognitive_mode", partial))
    assert calls == []


def test_undeclared_variable_rejected(config):
    gw = LlmGateway(config)
    extra = dict(CLASSIFY_VARS, mood="sunny")
    with pytest.raises(TemplateError, match="mood"):
        gw.complete(bundle_for(config, "cognitive_mode", extra))


def test_render_carries_fragments_and_substitutions(config):
    gw = LlmGateway(config)
    bundle = bundle_for(config, "cognitive_mode", dict(CLASSIFY_VARS))
    prompt = gw.render(bundle)
    for fragment in config.fragments:
        assert fragment.text in prompt
    assert "18" in prompt and "desktop" in prompt
    assert "{click_count}" not in prompt


def test_render_appends_suffix(config):
    gw = LlmGateway(config)
    bundle = bundle_for(
        config,
        "cognitive_mode",
        dict(CLASSIFY_VARS),
        suffix="Answer with exactly one word.",
    )
    assert gw.render(bundle).endswith("Answer with exactly one word.")


# ---------------------------------------------------------------------------
# mock behaviour
# ---------------------------------------------------------------------------


def test_mock_is_deterministic_and_offline(config):
    hook = []
    gw = LlmGateway(config, capture_hook=hook)
    bundle = bundle_for(config, "cognitive_mode", dict(CLASSIFY_VARS))
    first = gw.complete(bundle)
    second = gw.complete(bundle)
    assert first == second
    assert first in ("analytical", "intuitive")
    assert all(entry["network"] is False for entry in hook)


def test_mock_domain_hash_stays_in_domain(config):
    domain = ("low", "medium", "high")
    for clicks in range(40):
        out = mock_complete(
            "attention",
            {"device": "mobile", "mean_hesitation_ms": 100.0 * clicks, "click_count": clicks},
            domain,
        )
        assert out in domain


def test_mock_pinned_lookup_wins(config):
    variables = dict(CLASSIFY_VARS)
    lookup = {mock_key("cognitive_mode", variables): "intuitive perhaps?"}
    gw = LlmGateway(config, lookup=lookup)
    out = gw.complete(bundle_for(config, "cognitive_mode", variables))
    assert out == "intuitive perhaps?"


def test_mock_freetext_embeds_grounding_numbers():
    out = mock_complete(
        "nudge_message",
        {
            "strategy_id": "just_in_time",
            "appliance_id": "heater",
            "kwh": "6.0",
            "usage_hours": "3.0",
            "wattage_w": "2000",
            "hint": "",
        },
    )
    assert "heater" in out and "6.0" in out and "3.0" in out


def test_every_mock_prompt_carries_both_fragments(config):
    """Mini version of the audit: mixed templates, every capture compliant."""
    hook = []
    gw = LlmGateway(config, capture_hook=hook)
    for i in range(10):
        gw.complete(
            bundle_for(
                config,
                "cognitive_mode",
                dict(CLASSIFY_VARS, click_count=i),
            )
        )
        gw.complete(
            bundle_for(
                config,
                "attention",
                {"device": "mobile", "mean_hesitation_ms": 50.0 * i, "click_count": i},
            )
        )
    assert len(hook) == 20
    for entry in hook:
        for fragment in config.fragments:
            assert fragment.text in entry["prompt"]
        assert entry["network"] is False


# ---------------------------------------------------------------------------
# enum parsing
# ---------------------------------------------------------------------------

MODES = ["analytical", "intuitive"]
STAGES = ["pre_contemplation", "contemplation", "preparation", "action", "maintenance"]


@pytest.mark.parametrize(
    "text,domain,expected",
    [
        ("analytical", MODES, "analytical"),
        ("  Analytical.  ", MODES, "analytical"),
        ("INTUITIVE", MODES, "intuitive"),
        ("pre-contemplation", STAGES, "pre_contemplation"),
        ("Pre Contemplation", STAGES, "pre_contemplation"),
        ("the user is clearly analytical here", MODES, "analytical"),
        ("I'd say pre_contemplation fits best", STAGES, "pre_contemplation"),
        ("leaning maintenance", STAGES, "maintenance"),
    ],
)
def test_parse_enum_accepts(text, domain, expected):
    assert parse_enum(text, domain) == expected


@pytest.mark.parametrize(
    "text,domain",
    [
        ("analytical or maybe intuitive", MODES),
        ("no idea", MODES),
        ("anal", MODES),
        ("analyticalish", MODES),
        ("", MODES),
    ],
)
def test_parse_enum_rejects(text, domain):
    with pytest.raises(ParseFailure):
        parse_enum(text, domain)


def test_parse_enum_longest_match_not_double_counted():
    # 'pre_contemplation' contains 'contemplation'; only the outer one counts
    assert (
        parse_enum("stage: pre_contemplation", STAGES) == "pre_contemplation"
    )


# ---------------------------------------------------------------------------
# transport retry
# ---------------------------------------------------------------------------


def test_flaky_transport_recovers_once(config):
    attempts = []
    naps = []

    def transport(prompt, bundle):
        attempts.append(prompt)
        if len(attempts) == 1:
            raise ConnectionError("blip")
        return "analytical"

    gw = LlmGateway(config, transport=transport, sleeper=naps.append)
    out = gw.complete(bundle_for(config, "cognitive_mode", dict(CLASSIFY_VARS)))
    assert out == "analytical"
    assert len(attempts) == 2
    assert naps == [0.5]


def test_dead_transport_exhausts_budget(config):
    attempts = []

    def transport(prompt, bundle):
        attempts.append(prompt)
        raise ConnectionError("down")

    gw = LlmGateway(config, transport=transport, sleeper=lambda _s: None)
    with pytest.raises(GatewayUnavailable):
        gw.complete(bundle_for(config, "cognitive_mode", dict(CLASSIFY_VARS)))
    assert len(attempts) == 2


def test_transport_calls_are_flagged_as_network(config):
    hook = []
    gw = LlmGateway(
        config,
        transport=lambda prompt, bundle: "intuitive",
        capture_hook=hook,
    )
    gw.complete(bundle_for(config, "cognitive_mode", dict(CLASSIFY_VARS)))
    assert hook[0]["network"] is True
