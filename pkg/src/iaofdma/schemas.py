"""Request and response models for the HTTP service."""

from __future__ import annotations

import math
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator

from .harness import ExperimentConfig, ResultRow, ResultTable


class ExperimentRequest(BaseModel):
    model: Literal["symmetric", "heterogeneous"] = "symmetric"
    cross_gain: float = Field(1.0, ge=0)
    cell_radius: float = Field(1.0, gt=0)
    inter_site_distance: Optional[float] = Field(None, gt=0)
    pathloss_exponent: float = Field(2.0, ge=0)
    cir_radius_fraction: float = Field(0.5, ge=0, le=1)
    n_subcarriers: int = Field(64, gt=0)
    users_per_cell: int = Field(4, ge=1)
    noise_variance: float = Field(1.0, gt=0)
    snr_grid_db: list[float] = Field(default_factory=lambda: [0.0, 10.0, 20.0, 30.0, 40.0])
    schemes: list[str] = Field(default_factory=lambda: ["traditional", "ia_perfect", "ia_ri"])
    trials: int = Field(10, ge=1)
    master_seed: int = 0
    ia_max_iters: int = Field(50, ge=1)
    ia_tol: float = Field(1e-8, gt=0)
    ia_starts: int = Field(1, ge=1)
    ia_preselect: bool = False
    dual_tol: float = Field(1e-3, gt=0)
    dual_gap_tol: float = Field(1e-3, ge=0)
    dual_max_iter: int = Field(300, ge=1)

    @field_validator("snr_grid_db", mode="before")
    @classmethod
    def _grid(cls, v):
        if isinstance(v, str):
            from .harness import parse_snr_grid

            return list(parse_snr_grid(v))
        return v

    def to_config(self) -> ExperimentConfig:
        return ExperimentConfig(**self.model_dump())


class Row(BaseModel):
    scheme: str
    snr_db: float
    trials: int
    mean_sum_rate: Optional[float]
    std_error: Optional[float]
    mean_dual_gap: Optional[float]
    mean_ia_leakage: Optional[float]

    @classmethod
    def from_row(cls, r: ResultRow) -> "Row":
        def clean(x):
            return None if x is None or not math.isfinite(x) else x

        return cls(scheme=r.scheme, snr_db=r.snr_db, trials=r.trials, mean_sum_rate=clean(r.mean_sum_rate),
                   std_error=clean(r.std_error), mean_dual_gap=clean(r.mean_dual_gap), mean_ia_leakage=clean(r.mean_ia_leakage))

    def to_row(self) -> ResultRow:
        def nan(x):
            return float("nan") if x is None else x

        return ResultRow(self.scheme, self.snr_db, self.trials, nan(self.mean_sum_rate), nan(self.std_error),
                         nan(self.mean_dual_gap), nan(self.mean_ia_leakage))


class ExperimentResponse(BaseModel):
    rows: list[Row]
    errors: list[str] = []
    wall_time: float

    @classmethod
    def from_table(cls, table: ResultTable, wall_time: float) -> "ExperimentResponse":
        return cls(rows=[Row.from_row(r) for r in table.rows], errors=[repr(e) for e in table.errors], wall_time=wall_time)

    def to_table(self) -> ResultTable:
        rows = [r.to_row() for r in self.rows]
        return ResultTable(rows, snr_grid_db=tuple(sorted({r.snr_db for r in rows})))
