"""Safety switching between a least-restrictive and a safety controller.

The decision is a pure function of the (corrected) value estimate and,
optionally, its predictive standard deviation. The performance controller
is allowed only while the state sits at least ``delta`` inside the tube;
the std-aware law additionally demands the configured relation between the
predictive std and ``sigma0`` before relaxing to performance mode.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "LAW_VALUE_ONLY",
    "LAW_VALUE_AND_STD",
    "STD_GREATER",
    "STD_LESS",
    "USE_LEAST_RESTRICTIVE",
    "USE_SAFETY",
    "SwitchConfig",
    "select",
]

LAW_VALUE_ONLY = "value_only"
LAW_VALUE_AND_STD = "value_and_std"
STD_GREATER = "greater"
STD_LESS = "less"
USE_LEAST_RESTRICTIVE = "use_least_restrictive"
USE_SAFETY = "use_safety"


@dataclass(frozen=True)
class SwitchConfig:
    """Margin ``delta``, std threshold ``sigma0``, and the law selection."""

    delta: float
    sigma0: float
    law: str = LAW_VALUE_AND_STD
    std_comparison: str = STD_GREATER

    def __post_init__(self) -> None:
        if self.delta <= 0 or self.sigma0 <= 0:
            raise ValueError(f"delta and sigma0 must be positive, got {self.delta}, {self.sigma0}")
        if self.law not in (LAW_VALUE_ONLY, LAW_VALUE_AND_STD):
            raise ValueError(f"unknown law {self.law!r}")
        if self.std_comparison not in (STD_GREATER, STD_LESS):
            raise ValueError(f"std_comparison must be 'greater' or 'less', got {self.std_comparison!r}")


def select(value: float, std: float, config: SwitchConfig) -> str:
    """Choose the controller for one state.

    The value condition is non-strict: exactly ``-delta`` still counts as
    inside the margin, so the least-restrictive controller is allowed.
    """
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    inside = value <= -config.delta
    if config.law == LAW_VALUE_ONLY:
        return USE_LEAST_RESTRICTIVE if inside else USE_SAFETY
    if config.std_comparison == STD_GREATER:
        relaxed = inside and std > config.sigma0
    else:
        relaxed = inside and std < config.sigma0
    return USE_LEAST_RESTRICTIVE if relaxed else USE_SAFETY
