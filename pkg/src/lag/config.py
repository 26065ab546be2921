"""Layered run configuration: built-in defaults < config file < explicit overrides.

The config file is YAML (JSON also parses) with optional sections::

    engine:    {delta, gamma, t_max, k, saturation_fraction}
    load:      {tau0, decay_rate, max_recursion, scope_scale, depth_scale,
                ambiguity_scale, ambiguity_words}
    index:     {chunk_size, overlap}
    llm:       {type: chat|scripted|synthetic, endpoint_url, model_name,
                api_key_env, timeout, max_retries, fixtures, mode}
    embedder:  {type: hash|http, model_name, endpoint_url, api_key_env,
                timeout, max_retries, dimension, seed}
    templates: {<role>: <path>}
    eval:      {concurrency}

Relative paths inside the file resolve against the file's directory.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .core import TerminatorConfig
from .decompose import LoadConfig
from .errors import ConfigError
from .prompts import Templates
from .providers import ChatCompletionProvider, HashEmbedder, HTTPEmbeddingProvider, ProviderConfig, ScriptedLLM

DEFAULTS: dict[str, Any] = {
    "engine": {"delta": 0.3, "gamma": 0.9, "t_max": 5, "k": 5, "saturation_fraction": 0.8},
    "load": {
        "tau0": 1.5,
        "decay_rate": 0.9,
        "max_recursion": 3,
        "scope_scale": 1.0,
        "depth_scale": 2.0,
        "ambiguity_scale": 1.0,
        "ambiguity_words": None,
    },
    "index": {"chunk_size": 200, "overlap": 40},
    "llm": {
        "type": "chat",
        "endpoint_url": "https://api.openai.com/v1/chat/completions",
        "model_name": "gpt-4o-mini",
        "api_key_env": "OPENAI_API_KEY",
        "timeout": 30.0,
        "max_retries": 2,
        "fixtures": None,
        "mode": "strict",
    },
    "embedder": {
        "type": "hash",
        "model_name": "all-MiniLM-L6-v2",
        "endpoint_url": "https://api.openai.com/v1/embeddings",
        "api_key_env": "OPENAI_API_KEY",
        "timeout": 30.0,
        "max_retries": 2,
        "dimension": 256,
        "seed": 0,
    },
    "templates": {},
    "eval": {"concurrency": 4},
}

_PATH_KEYS = {("llm", "fixtures"), ("load", "ambiguity_words")}


def deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class Settings:
    raw: dict[str, Any]
    source: str | None = None

    @property
    def terminator(self) -> TerminatorConfig:
        return TerminatorConfig(**self.raw["engine"])

    @property
    def load(self) -> LoadConfig:
        return LoadConfig(**self.raw["load"])

    @property
    def chunk_size(self) -> int:
        return int(self.raw["index"]["chunk_size"])

    @property
    def overlap(self) -> int:
        return int(self.raw["index"]["overlap"])

    @property
    def concurrency(self) -> int:
        return int(self.raw["eval"]["concurrency"])

    def templates(self) -> Templates:
        return Templates(self.raw["templates"])

    def build_llm(self):
        c = self.raw["llm"]
        kind = c["type"]
        if kind == "chat":
            return ChatCompletionProvider(_provider_config(c))
        if kind == "scripted":
            if not c.get("fixtures"):
                raise ConfigError("llm.type 'scripted' needs llm.fixtures")
            return ScriptedLLM.from_file(c["fixtures"], mode=c.get("mode"))
        if kind == "synthetic":
            from .synthetic import SyntheticReader

            return SyntheticReader()
        raise ConfigError(f"unknown llm.type {kind!r}")

    def build_embedder(self):
        c = self.raw["embedder"]
        if c["type"] == "hash":
            return HashEmbedder(dimension=int(c["dimension"]), seed=int(c["seed"]))
        if c["type"] == "http":
            return HTTPEmbeddingProvider(_provider_config(c))
        raise ConfigError(f"unknown embedder.type {c['type']!r}")

    def echo(self) -> dict[str, Any]:
        """Everything needed to reproduce a run, minus secrets."""
        llm = {k: v for k, v in self.raw["llm"].items() if k in ("type", "model_name", "endpoint_url", "fixtures", "mode")}
        emb = {k: v for k, v in self.raw["embedder"].items() if k in ("type", "model_name", "dimension", "seed")}
        if llm.get("fixtures"):
            llm["fixtures"] = Path(llm["fixtures"]).name
        return {"llm": llm, "embedder": emb, "index": dict(self.raw["index"])}


def _provider_config(c: dict) -> ProviderConfig:
    return ProviderConfig(
        endpoint_url=c["endpoint_url"],
        model_name=c["model_name"],
        api_key_env=c["api_key_env"],
        timeout=float(c["timeout"]),
        max_retries=int(c["max_retries"]),
    )


def load_settings(path: str | Path | None = None, overrides: dict | None = None) -> Settings:
    raw = copy.deepcopy(DEFAULTS)
    source = None
    if path is not None:
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a mapping")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        base = path.resolve().parent
        for section, key in _PATH_KEYS:
            value = doc.get(section, {}).get(key)
            if value:
                doc[section][key] = str(base / value)
        for role, p in doc.get("templates", {}).items():
            doc["templates"][role] = str(base / p)
        raw = deep_merge(raw, doc)
        source = str(path)
    if overrides:
        raw = deep_merge(raw, overrides)
    settings = Settings(raw, source)
    try:
        settings.terminator, settings.load
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid engine/load settings: {exc}") from exc
    return settings
