"""Analytic throughput model: how many devices a chain can re-verify per day.

Pure arithmetic over chain parameters.  The daily gas figure has two
first-class sources: the computed product write_gas x checks_per_day, and
an explicit override.  The headline numbers (2 devices per block, 11,520
writes per day) follow from an override of 4,000,000, which disagrees
with the computed 4,800,000; both paths are kept so neither number is
silently "fixed".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from .errors import InvalidInputError

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400


@dataclass(frozen=True)
class EconParams:
    write_gas: int = 200_000
    block_gas_limit: int = 8_000_000
    block_interval_s: float = 15.0
    checks_per_device_per_day: int = 24
    daily_gas_per_device_override: Optional[int] = None

    def __post_init__(self) -> None:
        if self.write_gas <= 0 or self.block_gas_limit <= 0:
            raise InvalidInputError("gas parameters must be positive")
        if self.block_interval_s <= 0:
            raise InvalidInputError("block_interval_s must be positive")
        if self.checks_per_device_per_day <= 0:
            raise InvalidInputError("checks_per_device_per_day must be positive")
        if self.daily_gas_per_device_override is not None and self.daily_gas_per_device_override <= 0:
            raise InvalidInputError("daily_gas_per_device_override must be positive")


def daily_gas_per_device(p: EconParams) -> int:
    """Gas one device consumes per day of periodic verification writes."""
    if p.daily_gas_per_device_override is not None:
        return p.daily_gas_per_device_override
    return p.write_gas * p.checks_per_device_per_day


def devices_per_block(p: EconParams) -> int:
    """How many devices' full daily gas budgets fit in one block."""
    daily = daily_gas_per_device(p)
    if daily > p.block_gas_limit:
        log.warning(
            "daily gas per device (%d) exceeds the block gas limit (%d); zero capacity",
            daily,
            p.block_gas_limit,
        )
        return 0
    return p.block_gas_limit // daily


def writes_per_day(p: EconParams) -> int:
    """Daily device-verification capacity: blocks per day times devices per block."""
    blocks_per_day = int(SECONDS_PER_DAY // p.block_interval_s)
    return blocks_per_day * devices_per_block(p)


def per_block_write_capacity(p: EconParams) -> int:
    """Single-write transactions that fit in one block; matches observed packing."""
    return p.block_gas_limit // p.write_gas


def summary(p: EconParams) -> dict:
    """All four derived quantities, for tables and JSON output."""
    return {
        "daily_gas_per_device": daily_gas_per_device(p),
        "devices_per_block": devices_per_block(p),
        "writes_per_day": writes_per_day(p),
        "per_block_write_capacity": per_block_write_capacity(p),
    }
