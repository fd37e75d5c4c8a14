"""Built-in experiment presets.

``paper-sec5`` is the three-state, one-input, two-output benchmark with
``Q = 100 I`` and ``R = I``. The nominal state matrix has spectral
radius about 1.103, which violates the stability assumption every
algorithm here relies on (the zero gain would have infinite cost), so the
preset uses that matrix uniformly rescaled to spectral radius 0.95. ``B``
and ``C`` are unchanged. The unmodified matrices are kept as
``paper-sec5-verbatim``; building that preset raises ``NotSchur``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .plant import PlantModel

SEC5_A_VERBATIM = np.array([
    [1.11, -0.06, 0.03],
    [-0.03, 1.05, -0.05],
    [-0.06, 0.19, 0.93],
])
SEC5_B = np.array([[-0.03], [0.0], [0.01]])
SEC5_C = np.array([
    [0.0, 0.12, 0.63],
    [2.6, 0.46, 0.0],
])
SEC5_TARGET_RADIUS = 0.95


def sec5_state_matrix() -> np.ndarray:
    rho = np.max(np.abs(np.linalg.eigvals(SEC5_A_VERBATIM)))
    return SEC5_A_VERBATIM * (SEC5_TARGET_RADIUS / rho)


@dataclass(frozen=True)
class Preset:
    name: str
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    L: int = 2
    params: dict = field(default_factory=dict)

    @property
    def plant(self) -> PlantModel:
        return PlantModel(self.A, self.B, self.C, name=self.name)


_SEC5_PARAMS = {
    # model-based gradient descent
    "alpha": 2.5e-6,
    "iters": 5_000_000,
    # multi-episodic
    "mf_alpha": 5e-10,
    "delta": 0.05,
    "s": 10,
    "N": 500,
    # single-episodic
    "se_N": 50,
    "se_alpha": 3e-7,
    "se_alpha_excite": 5e-5,
    "excite_after": 8000,
    "stationary_threshold": 0.01,
    "excite_sigma": 0.1,
    "excite_steps": 5,  # L m + n
}


def _sec5(name, A):
    return Preset(name=name, A=A, B=SEC5_B.copy(), C=SEC5_C.copy(),
                  Q=100.0 * np.eye(2), R=np.eye(1), L=2, params=dict(_SEC5_PARAMS))


PRESETS = {
    "paper-sec5": lambda: _sec5("paper-sec5", sec5_state_matrix()),
    "paper-sec5-verbatim": lambda: _sec5("paper-sec5-verbatim", SEC5_A_VERBATIM.copy()),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
