"""Regression metrics: RMSE, MAE and the coefficient of determination."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import LengthMismatch


@dataclass
class EvalReport:
    rmse: float
    mae: float
    r2: Optional[float]  # None when the actuals have zero variance
    n: int
    target: str = ""
    model_kind: str = ""

    def to_json(self) -> dict:
        return asdict(self)


def evaluate(actual: Sequence[float], predicted: Sequence[float], target: str = "",
             model_kind: str = "") -> EvalReport:
    """Score ``predicted`` against ``actual``.

    ``r2`` is ``1 - SS_res / SS_tot`` and is reported as ``None`` when
    ``SS_tot`` is zero.  Sums use numpy's pairwise summation.
    """
    y = np.asarray(actual, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if y.size != p.size:
        raise LengthMismatch(f"{y.size} actual vs {p.size} predicted values")
    if y.size == 0:
        raise LengthMismatch("no values to evaluate")
    err = y - p
    n = y.size
    mae = float(np.sum(np.abs(err)) / n)
    ss_res = float(np.sum(err * err))
    rmse = math.sqrt(ss_res / n)
    # the power-mean inequality holds exactly; rounding can break it by an ulp
    rmse = max(rmse, mae)
    centered = y - np.sum(y) / n
    ss_tot = float(np.sum(centered * centered))
    r2 = None if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return EvalReport(rmse=rmse, mae=mae, r2=r2, n=int(n), target=target, model_kind=model_kind)
