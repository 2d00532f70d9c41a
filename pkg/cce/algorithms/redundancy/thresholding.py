import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

ENERGY_BUDGET = 'energy-budget'
FIXED = 'fixed'
THRESHOLD_MODES = (ENERGY_BUDGET, FIXED)


@dataclass(frozen=True)
class ThresholdPolicy:
    """
    How the singular-value threshold tau of a layer is chosen.

    :param mode: 'energy-budget' keeps the fewest leading singular values carrying ``energy_budget`` of the
        spectral energy; 'fixed' uses ``fixed_tau``.
    :param energy_budget: Fraction of sum(sigma^2) to retain, in (0, 1].
    :param fixed_tau: The threshold of the fixed mode.
    """
    mode: str = ENERGY_BUDGET
    energy_budget: float = 0.95
    fixed_tau: Optional[float] = None

    def __post_init__(self):
        if self.mode not in THRESHOLD_MODES:
            raise ValueError(f'Unknown threshold mode {self.mode!r}, expected one of {THRESHOLD_MODES}')
        if not 0 < self.energy_budget <= 1:
            raise ValueError('energy_budget must be in (0, 1].')
        if self.mode == FIXED and (self.fixed_tau is None or self.fixed_tau < 0):
            raise ValueError('The fixed mode needs a non-negative fixed_tau.')

    def with_energy_budget(self, energy_budget: float) -> 'ThresholdPolicy':
        return ThresholdPolicy(self.mode, energy_budget, self.fixed_tau)


def retained_count(singular_values: Sequence[float], energy_budget: float) -> int:
    """
    Returns the smallest number c of leading singular values whose squared sum reaches ``energy_budget`` of the total.
    """
    energy = np.cumsum(np.square(singular_values))
    total = energy[-1]
    if total == 0:
        return len(energy)
    return int(min(np.searchsorted(energy, energy_budget * total, side='left') + 1, len(energy)))


def dynamic_threshold(singular_values: Sequence[float], policy: ThresholdPolicy) -> float:
    """
    Returns the singular-value threshold tau of a layer; singular values sigma >= tau are retained.

    In energy-budget mode tau is the largest value whose retained set carries at least the budgeted fraction of
    the spectral energy, i.e. the smallest retained singular value. A budget of 1 (and a spectrum without energy)
    gives tau = 0. In fixed mode the fixed threshold is clipped to [0, sigma_1].

    :param singular_values: Non-increasing, non-negative singular values.
    :param policy: The threshold policy.
    :return: tau in [0, sigma_1].
    """
    values = np.asarray(singular_values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError('At least one singular value is needed.')
    if values[-1] < 0 or np.any(np.diff(values) > 0):
        raise ValueError('Singular values must be non-negative and non-increasing.')

    if policy.mode == FIXED:
        return float(min(max(policy.fixed_tau, 0.0), values[0]))
    if policy.energy_budget >= 1 or math.fsum(values) == 0:
        return 0.0
    return float(values[retained_count(values, policy.energy_budget) - 1])


def rank_at_threshold(singular_values: Sequence[float], tau: float) -> int:
    """Returns the number of singular values sigma >= tau."""
    return int(np.count_nonzero(np.asarray(singular_values) >= tau))
