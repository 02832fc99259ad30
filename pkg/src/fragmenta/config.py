"""Run configuration: JSON file + flag overrides, schema-validated
before any work starts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from .errors import ConfigError
from .matching import InferenceConfig
from .metrics import RR_TAU_DEFAULT
from .neural.model import ModelConfig
from .tearing import GeneratorConfig


@dataclass
class RunConfig:
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    tau_rr: float = RR_TAU_DEFAULT
    top_k: int = 20
    render_samples: int = 4

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "generator": self.generator.to_dict(),
            "model": self.model.to_dict(),
            "inference": self.inference.to_dict(),
            "tau_rr": self.tau_rr,
            "top_k": self.top_k,
            "render_samples": self.render_samples,
        }


def _schema() -> dict:
    with resources.files("fragmenta").joinpath("config_schema.json").open("rb") as fh:
        return json.load(fh)


def load_run_config(path=None, seed=None, top_k=None, tau_rr=None,
                    render_samples=None) -> RunConfig:
    """Build the run configuration from an optional JSON file plus CLI
    overrides; raises ConfigError (exit code 2) on any violation."""
    doc = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        try:
            jsonschema.validate(doc, _schema())
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config schema violation: {exc.message}") from exc

    try:
        cfg = RunConfig(
            seed=int(doc.get("seed", 0)),
            generator=GeneratorConfig(**doc.get("generator", {})),
            model=ModelConfig(**doc.get("model", {})),
            inference=InferenceConfig(**doc.get("inference", {})),
            tau_rr=float(doc.get("tau_rr", RR_TAU_DEFAULT)),
            top_k=int(doc.get("top_k", 20)),
            render_samples=int(doc.get("render_samples", 4)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration value: {exc}") from exc

    if seed is not None:
        cfg.seed = int(seed)
    if top_k is not None:
        cfg.top_k = int(top_k)
    if tau_rr is not None:
        cfg.tau_rr = float(tau_rr)
    if render_samples is not None:
        cfg.render_samples = int(render_samples)
    cfg.generator.seed = cfg.seed
    if cfg.top_k < 1 or cfg.tau_rr <= 0 or cfg.render_samples < 0:
        raise ConfigError("top_k >= 1, tau_rr > 0 and render_samples >= 0 required")
    return cfg
