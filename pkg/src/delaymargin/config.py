"""Numerical settings.

Every tolerance used by the pipeline lives here so that a run can be
reproduced from a single JSON file (``--config`` on the command line).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


@dataclass(frozen=True)
class Settings:
    # stability certificate
    sigma0: float = 1e-6
    contour_slack: float = 0.1
    contour_min_points: int = 256
    contour_max_points: int = 400_000
    contour_separation: float = 1e-9

    # frequency sweep
    sweep_points: int = 2000
    sweep_omega_min: float = 1e-4
    sweep_rtol: float = 1e-5
    sweep_max_evals: int = 400_000
    lipschitz_safety: float = 2.0

    # Hardy-Littlewood quadrature
    hl_rtol: float = 1e-7
    hl_max_panels: int = 200_000

    # impulse responses
    impulse_dt_per_delay: int = 20
    impulse_dt_delay_free: float = 1e-3
    impulse_dt_dynamics: float = 0.05
    tail_window: float = 0.2
    tail_residual: float = 1e-2
    tail_fraction: float = 0.05
    tail_max_doublings: int = 3

    # margins
    bisection_rtol: float = 1e-4
    scaling_ceiling: float = 1e12

    # simulation
    blowup: float = 1e6
    # free-response peak growth between the last two quarters that counts as divergence
    growth_limit: float = 1.5

    @classmethod
    def from_json(cls, path: str | Path) -> "Settings":
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown settings: {sorted(unknown)}")
        return replace(cls(), **data)

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT = Settings()
