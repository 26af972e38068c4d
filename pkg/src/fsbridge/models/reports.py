from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from fsbridge.errors import InvalidParameterError


@dataclass
class TwoSampleResult:
    """Power of a permutation MMD two-sample test over repeated resamples."""
    power: float
    n_repeats: int
    n_per_sample: int
    alpha: float
    bandwidth: float
    p_values: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.power <= 1.0:
            raise InvalidParameterError("power must lie in [0, 1]", f"power={self.power}")

    @property
    def stderr(self) -> float:
        return float(np.sqrt(self.power * (1.0 - self.power) / max(self.n_repeats, 1)))

    def to_report(self, config: Optional[dict] = None) -> dict:
        return {
            'metric': 'mmd_test_power',
            'value': self.power,
            'stderr': self.stderr,
            'config': dict(config or {}, n_repeats=self.n_repeats, n=self.n_per_sample,
                           alpha=self.alpha, bandwidth=self.bandwidth),
        }


@dataclass
class MarginalReport:
    """Per-mode agreement of sample moments with reference Gaussians."""
    mean_z: np.ndarray
    var_ratio: np.ndarray
    var_z: np.ndarray
    ks_stat: np.ndarray
    ks_pvalue: np.ndarray
    n_samples: int

    def passed(self, z_tol: float = 4.0) -> bool:
        return bool(np.all(np.abs(self.mean_z) < z_tol) and np.all(np.abs(self.var_z) < z_tol))

    def to_report(self) -> dict:
        return {
            'metric': 'marginal_check',
            'value': float(np.max(np.abs(self.mean_z))) if self.mean_z.size else 0.0,
            'stderr': None,
            'config': {
                'n_samples': self.n_samples,
                'max_abs_var_z': float(np.max(np.abs(self.var_z))) if self.var_z.size else 0.0,
                'min_ks_pvalue': float(np.min(self.ks_pvalue)) if self.ks_pvalue.size else 1.0,
            },
        }
