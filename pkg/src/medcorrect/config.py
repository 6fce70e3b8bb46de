"""Run configuration: a single YAML tree plus dotted command-line overrides.

Every run is fully described by one nested mapping; commands that execute
anything write the resolved tree next to their outputs so a run can be
reproduced from its artifacts alone.
"""

import copy
from typing import Any, Dict, Optional, Sequence

import yaml

from .errors import ConfigError
from .gateway import BackendConfig, LlmGateway, MockScript
from .pipelines import StrategyConfig
from .prompts import PromptSpec

DEFAULT_CONFIG: Dict[str, Any] = {
    "data": {
        "train": None,
        "valid": None,
        "test": None,
    },
    "run": {
        "split": "valid",
        "output_dir": "runs/latest",
        "failure_ceiling": 0.5,
        "icl_include_valid": False,
    },
    "strategy": {
        "strategy": "e2e",
        "persona": "clinician_assistant",
        "shots": 0,
        "cot_style": "none",
        "type_hint": False,
        "span_hint": None,
        "predictor": "none",
        "mcq_total_options": 2,
        "mcq_injected_index": 0,
    },
    "backend": {
        "endpoint": "https://api.openai.com/v1/chat/completions",
        "model_name": "gpt-3.5-turbo-0613",
        "temperature": 0.0,
        "top_p": 0.0,
        "frequency_penalty": 0.0,
        "presence_penalty": 0.0,
        "max_new_tokens": 256,
        "request_timeout": 60.0,
        "max_retries": 5,
        "max_parallel": 4,
        "requests_per_second": None,
        "api_key_env": "OPENAI_API_KEY",
        "mock_script": None,
        "cache_path": None,
        "audit_path": None,
    },
    "predictor": {
        "offline_path": None,
        "endpoint": None,
        "timeout": 30.0,
    },
    "reason_bank": {
        "path": None,
        "style": "brief",
    },
    "evaluation": {
        "sidecar": None,
    },
}


def _merge(base: Dict[str, Any], overlay: Dict[str, Any], trail: str) -> None:
    for key, value in overlay.items():
        here = f"{trail}.{key}" if trail else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here!r} must be a mapping")
            _merge(base[key], value, here)
        else:
            base[key] = value


def _apply_override(tree: Dict[str, Any], setting: str) -> None:
    if "=" not in setting:
        raise ConfigError(f"override {setting!r} must look like key.path=value")
    dotted, raw_value = setting.split("=", 1)
    keys = dotted.strip().split(".")
    if not all(keys):
        raise ConfigError(f"override {setting!r} has an empty key segment")
    value = yaml.safe_load(raw_value) if raw_value != "" else None
    node = tree
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[key]
    leaf = keys[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    if isinstance(node[leaf], dict):
        raise ConfigError(f"config key {dotted!r} is a section, not a value")
    node[leaf] = value


def load_config(path: Optional[str] = None,
                overrides: Sequence[str] = ()) -> Dict[str, Any]:
    """Defaults, overlaid with the file at path, then dotted overrides."""
    tree = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path, encoding="utf-8") as handle:
            loaded = yaml.safe_load(handle)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config root must be a mapping")
        _merge(tree, loaded, "")
    for setting in overrides:
        _apply_override(tree, setting)
    return tree


def save_resolved(tree: Dict[str, Any], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(tree, handle, sort_keys=True, default_flow_style=False)


def prompt_spec_from_config(tree: Dict[str, Any]) -> PromptSpec:
    section = tree["strategy"]
    return PromptSpec(
        persona=section["persona"],
        shots=int(section["shots"]),
        cot_style=section["cot_style"],
        type_hint=bool(section["type_hint"]),
        span_hint=section["span_hint"],
    )


def strategy_from_config(tree: Dict[str, Any]) -> StrategyConfig:
    section = tree["strategy"]
    return StrategyConfig(
        strategy=section["strategy"],
        prompt_spec=prompt_spec_from_config(tree),
        predictor=section["predictor"],
        mcq_total_options=int(section["mcq_total_options"]),
        mcq_injected_index=int(section["mcq_injected_index"]),
    )


def backend_from_config(tree: Dict[str, Any]) -> BackendConfig:
    section = tree["backend"]
    rps = section["requests_per_second"]
    return BackendConfig(
        endpoint=section["endpoint"],
        model_name=section["model_name"],
        temperature=float(section["temperature"]),
        top_p=float(section["top_p"]),
        frequency_penalty=float(section["frequency_penalty"]),
        presence_penalty=float(section["presence_penalty"]),
        max_new_tokens=int(section["max_new_tokens"]),
        request_timeout=float(section["request_timeout"]),
        max_retries=int(section["max_retries"]),
        max_parallel=int(section["max_parallel"]),
        requests_per_second=None if rps is None else float(rps),
        api_key_env=section["api_key_env"],
    )


def make_gateway(tree: Dict[str, Any]) -> LlmGateway:
    """Build the gateway the tree describes, mock-backed when scripted."""
    section = tree["backend"]
    transport = None
    if section["mock_script"] is not None:
        transport = MockScript.load(section["mock_script"]).as_transport()
    return LlmGateway(
        backend_from_config(tree),
        transport=transport,
        cache_path=section["cache_path"],
        audit_path=section["audit_path"],
    )
