"""Run configuration: INI config file ([sampling], [backend], [responder]
sections) plus CLI overrides. The PROMPTSEG_CONFIG environment variable
overrides the config file path."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .sampling import SamplingConfig

CONFIG_ENV_VAR = "PROMPTSEG_CONFIG"

BACKENDS = ("identity", "synthetic", "remote")
RESPONDERS = ("gt-oracle", "scripted", "remote")


class ConfigError(ValueError):
    """Invalid configuration (bad value, unknown name, missing argument)."""


@dataclass
class RunConfig:
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    backend: str = "identity"
    backend_url: str = ""
    responder: str = "gt-oracle"
    responder_path: str = ""  # fixture path or chat URL
    workers: int = 1

    def validate(self) -> "RunConfig":
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "remote" and not self.backend_url:
            raise ConfigError("remote backend requires a URL (remote:URL)")
        if self.responder not in RESPONDERS:
            raise ConfigError(f"unknown responder {self.responder!r}")
        if self.responder in ("scripted", "remote") and not self.responder_path:
            raise ConfigError(
                f"{self.responder} responder requires a path or URL (NAME:PATH)"
            )
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def resolved(self) -> dict:
        """Provenance mapping echoed into output artifact headers.

        Worker count stays out: it never affects output content, and the
        header must be byte-stable across execution plans.
        """
        return {
            "sampling": self.sampling.to_mapping(),
            "backend": self.backend,
            "backend_url": self.backend_url,
            "responder": self.responder,
            "responder_path": self.responder_path,
        }


def _split_spec(spec: str) -> tuple[str, str]:
    """NAME[:URL-or-PATH] -> (name, rest); URLs keep their own colons."""
    name, _, rest = spec.partition(":")
    return name, rest


def load_config_file(path: str) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep K and k distinct
    read = parser.read(path)
    if not read:
        raise OSError(f"config file {path!r} not found")
    cfg = RunConfig()
    if parser.has_section("sampling"):
        try:
            cfg.sampling = SamplingConfig.from_mapping(dict(parser.items("sampling")))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [sampling] section: {exc}") from exc
    if parser.has_section("backend"):
        cfg.backend = parser.get("backend", "name", fallback=cfg.backend)
        cfg.backend_url = parser.get("backend", "url", fallback=cfg.backend_url)
    if parser.has_section("responder"):
        cfg.responder = parser.get("responder", "name", fallback=cfg.responder)
        cfg.responder_path = parser.get("responder", "path", fallback=cfg.responder_path)
    return cfg


def resolve_config(args) -> RunConfig:
    """Config file (env var wins over flag) overlaid with CLI flags."""
    path = os.environ.get(CONFIG_ENV_VAR) or getattr(args, "config", None)
    cfg = load_config_file(path) if path else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.sampling.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "backend", None):
        cfg.backend, cfg.backend_url = _split_spec(args.backend)
    if getattr(args, "responder", None):
        cfg.responder, cfg.responder_path = _split_spec(args.responder)
    return cfg.validate()
