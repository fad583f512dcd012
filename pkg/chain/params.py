"""
params.py — Protocol parameters for PoV, fees and rewards

Validated with pydantic the same way request bodies are: field bounds via
Field(...), cross-field rules via a model validator.

The reward-dominance rule checks that a block reward exceeds what one
transaction pays out in validation and routing fees, with the routing part
estimated from `expected_path_hops` per validator search.
"""

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import ConfigError


class PovParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: int = Field(default=8, ge=1, description="Validators Threshold")
    t: int = Field(default=4, ge=1, description="Signatures Threshold")
    min_tx: int = Field(default=10, ge=1, description="Minimum transactions per block")
    max_tx: int = Field(default=64, ge=1, description="Cap on transactions cast into one block")
    validation_fee: int = Field(default=2, ge=0)
    routing_fee: int = Field(default=1, ge=0)
    block_reward: int = Field(default=10_000, ge=0)
    misbehavior_penalty: int = Field(default=500, ge=0)
    audition_reward: int = Field(default=0, ge=0)
    block_interval: int = Field(default=2, ge=1, description="Pointer retirement grace, in blocks")
    expected_path_hops: int = Field(default=12, ge=0)

    @model_validator(mode="after")
    def _check_thresholds(self) -> "PovParams":
        if self.t > self.alpha:
            raise ConfigError(f"Signatures Threshold t={self.t} exceeds alpha={self.alpha}")
        if self.min_tx > self.max_tx:
            raise ConfigError(f"min_tx={self.min_tx} exceeds max_tx={self.max_tx}")
        fees = self.validation_fee * self.t + self.routing_fee * self.expected_path_cost
        if self.block_reward <= fees:
            raise ConfigError(
                f"block_reward={self.block_reward} must exceed the per-transaction fees "
                f"({fees} = {self.validation_fee}·t + {self.routing_fee}·{self.expected_path_cost})"
            )
        return self

    @property
    def expected_path_cost(self) -> int:
        return self.alpha * self.expected_path_hops

    def fees_for(self, routing_hops: int) -> int:
        """Validation plus routing fees owed by a transaction owner."""
        return self.validation_fee * self.t + self.routing_fee * routing_hops
