"""Shared observable report and its CSV row format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# column order of a report row inside sweep tables; kept stable because
# downstream plotting relies on it
CSV_COLUMNS = (
    "param_value", "energy", "sigma_z", "sigma_x",
    "o_z", "o_x", "zeta", "imag_residual", "low_confidence",
    "status", "displacements",
)


@dataclass
class ObservableReport:
    """Ground-state observables of one model point."""

    energy: float
    sigma_z: float
    sigma_x: float
    displacements: np.ndarray = field(default_factory=lambda: np.zeros(0))
    o_z: float | None = None
    o_x: float | None = None
    zeta: float | None = None
    imag_residual: float = 0.0
    low_confidence: bool = False

    def csv_row(self, param_value: float | None = None, status: str = "ok") -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return str(int(v))
            return f"{v:.17g}"

        disp = json.dumps([float(x) for x in np.asarray(self.displacements)])
        cells = [fmt(param_value), fmt(self.energy), fmt(self.sigma_z), fmt(self.sigma_x),
                 fmt(self.o_z), fmt(self.o_x), fmt(self.zeta),
                 fmt(self.imag_residual), fmt(self.low_confidence), status,
                 '"' + disp.replace('"', "'") + '"']
        return ",".join(cells)

    @staticmethod
    def csv_header() -> str:
        return ",".join(CSV_COLUMNS)
