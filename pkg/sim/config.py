"""
config.py — Simulation configuration

SimConfig is a pydantic model; every field can come from a key=value config
file and be overridden on the command line. Environment variables
(LIGHTCHAIN_SEED, LIGHTCHAIN_WIDTH_S, LIGHTCHAIN_SIGNATURE_SCHEME) supply
defaults.

Config file format:

    # comment
    n = 512
    f = 0.16
    adversary_strategies = forge_block_commit,serve_forged_view
"""

import io
import logging
import math
import os
from collections.abc import Mapping
from enum import Enum
from pathlib import Path
from typing import Any

from dotenv import dotenv_values, load_dotenv
from dotenv.parser import parse_stream
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from chain.params import PovParams
from core.errors import ConfigError, InvalidParameterError
from core.ident import DEFAULT_SCHEME, DEFAULT_WIDTH, SCHEMES
from overlay.skipgraph import ROUTING_CONSTANT

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_SEED = int(os.getenv("LIGHTCHAIN_SEED", "42"))

# Holders are online at commit; their online probability decays to 1 - q
# as exp(-age / relaxation time).
REPLICA_WARMUP_RELAXATIONS = 3


class Strategy(str, Enum):
    FORGE_BLOCK_COMMIT = "forge_block_commit"
    WITHHOLD_SIGNATURES = "withhold_signatures"
    SIGN_INVALID = "sign_invalid"
    SERVE_FORGED_VIEW = "serve_forged_view"
    KEEP_STALE_POINTERS = "keep_stale_pointers"


ALL_STRATEGIES = frozenset(Strategy)


def derive_q(mean_online: float, mean_offline: float) -> float:
    """Steady-state offline fraction of an on/off renewal process."""
    if mean_online <= 0 or mean_offline < 0:
        raise InvalidParameterError(
            f"Mean online time must be > 0 and offline time ≥ 0, got {mean_online}, {mean_offline}"
        )
    return mean_offline / (mean_online + mean_offline)


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(default=512, ge=2)
    f: float = Field(default=0.0, ge=0.0, lt=1.0)

    # PoV
    alpha: int = Field(default=8, ge=1)
    t: int = Field(default=4, ge=1)
    min_tx: int = Field(default=10, ge=1)
    max_tx: int = Field(default=64, ge=1)
    validation_fee: int = Field(default=2, ge=0)
    routing_fee: int = Field(default=1, ge=0)
    block_reward: int = Field(default=10_000, ge=0)
    misbehavior_penalty: int = Field(default=500, ge=0)
    audition_reward: int = Field(default=0, ge=0)
    block_interval: int = Field(default=2, ge=1)
    audit_lag: int = Field(default=2, ge=1)

    # Churn & workload
    mean_online_hours: float = Field(default=10.6, gt=0.0)
    mean_offline_hours: float = Field(default=2.8, ge=0.0)
    tx_rate_per_peer_per_hour: float = Field(default=1.0, ge=0.0)
    sim_hours: float = Field(default=48.0, ge=0.0)
    slot_minutes: int = Field(default=10, ge=1)
    proposers_per_slot: int = Field(default=2, ge=1)
    attacks_per_slot: int = Field(default=1, ge=0)
    endowment: int = Field(default=1_000_000, ge=0)

    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=2**64)
    width_s: int = Field(default=DEFAULT_WIDTH, ge=8, le=256)
    signature_scheme: str = DEFAULT_SCHEME
    adversary_strategies: frozenset[Strategy] = ALL_STRATEGIES

    @field_validator("adversary_strategies", mode="before")
    @classmethod
    def _parse_strategies(cls, value: Any) -> Any:
        if isinstance(value, str):
            return frozenset(Strategy(s.strip()) for s in value.split(",") if s.strip())
        return value

    @model_validator(mode="after")
    def _check(self) -> "SimConfig":
        if self.signature_scheme not in SCHEMES:
            raise ConfigError(f"signature_scheme must be one of {SCHEMES}, got {self.signature_scheme!r}")
        if self.alpha > self.n:
            raise ConfigError(f"alpha={self.alpha} exceeds the peer count n={self.n}")
        self.pov_params()
        return self

    @property
    def q(self) -> float:
        return derive_q(self.mean_online_hours, self.mean_offline_hours)

    @property
    def slots(self) -> int:
        return int(self.sim_hours * 60 // self.slot_minutes)

    @property
    def replica_warmup_slots(self) -> int:
        """
        Block age, in slots, before its replicas count towards mean_replicas:
        REPLICA_WARMUP_RELAXATIONS relaxation times of the on/off churn process.
        """
        if self.mean_offline_hours == 0:
            return 0
        relaxation_hours = 1 / (1 / self.mean_online_hours + 1 / self.mean_offline_hours)
        return math.ceil(REPLICA_WARMUP_RELAXATIONS * relaxation_hours * 60 / self.slot_minutes)

    def pov_params(self) -> PovParams:
        return PovParams(
            alpha=self.alpha,
            t=self.t,
            min_tx=self.min_tx,
            max_tx=self.max_tx,
            validation_fee=self.validation_fee,
            routing_fee=self.routing_fee,
            block_reward=self.block_reward,
            misbehavior_penalty=self.misbehavior_penalty,
            audition_reward=self.audition_reward,
            block_interval=self.block_interval,
            expected_path_hops=math.ceil(ROUTING_CONSTANT * math.log2(self.n)),
        )

    def snapshot(self) -> dict[str, Any]:
        """Plain-typed dump for manifests and config files."""
        data = self.model_dump()
        data["adversary_strategies"] = ",".join(sorted(s.value for s in self.adversary_strategies))
        return data


SWEEPABLE = tuple(
    name
    for name, info in SimConfig.model_fields.items()
    if info.annotation in (int, float) and name != "seed"
)


def build_config(values: Mapping[str, Any]) -> SimConfig:
    """Validate raw values into a SimConfig; any failure is a ConfigError."""
    unknown = set(values) - set(SimConfig.model_fields)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(sorted(unknown))}")
    try:
        return SimConfig(**values)
    except ValidationError as e:
        # model validators raising ConfigError surface wrapped in ValidationError
        raise ConfigError(f"Invalid simulation config:\n{e}") from e
    except ValueError as e:
        raise ConfigError(f"Invalid simulation config: {e}") from e


def parse_config_text(text: str) -> dict[str, str]:
    """key=value lines with `#` comments, read by python-dotenv without interpolation."""
    for binding in parse_stream(io.StringIO(text)):
        if binding.error:
            raise ConfigError(
                f"Config line {binding.original.line}: expected key=value, "
                f"got {binding.original.string.strip()!r}"
            )
    values = dotenv_values(stream=io.StringIO(text), interpolate=False)
    bare = sorted(key for key, value in values.items() if value is None)
    if bare:
        raise ConfigError(f"Config keys without a value: {', '.join(bare)}")
    return {key: value for key, value in values.items() if value is not None}


def load_config_file(path: Path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def with_overrides(base: SimConfig, **overrides: Any) -> SimConfig:
    """A new validated config with some fields replaced."""
    return build_config({**base.model_dump(), **overrides})
