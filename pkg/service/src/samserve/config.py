"""Service configuration. The checkpoint must load at startup; otherwise the
service refuses to start."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class ServiceConfig:
    checkpoint: Path
    device: str = "cpu"
    max_batch_size: int = 1  # v1 serves single requests; kept for deployment parity
    port: int = 8080

    def __post_init__(self):
        object.__setattr__(self, "checkpoint", Path(self.checkpoint))
        if self.max_batch_size < 1:
            raise ValueError("max_batch_size must be >= 1")
        if not 0 <= self.port <= 65535:
            raise ValueError(f"invalid port {self.port}")
