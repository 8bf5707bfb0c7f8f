"""Hierarchical bus passenger-flow forecasting.

Independent least-squares lines per stop and for the route total, then an
OLS projection through the two-level summing matrix so station forecasts
sum to the total exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


def summing_matrix(n: int) -> np.ndarray:
    """(1+n) x n matrix: first row all ones, remaining rows identity."""
    if n < 1:
        raise ValueError("need at least one bottom-level series")
    return np.vstack([np.ones((1, n)), np.eye(n)])


@dataclass
class LinearBaseModel:
    slope: float
    intercept: float

    def predict(self, t: float) -> float:
        return self.slope * t + self.intercept


def fit_line(series: np.ndarray, t_index: np.ndarray | None = None) -> LinearBaseModel:
    series = np.asarray(series, dtype=float)
    if series.size < 2:
        raise ValueError("linear fit needs at least 2 observations")
    if t_index is None:
        t_index = np.arange(series.size, dtype=float)
    slope, intercept = np.polyfit(t_index, series, 1)
    return LinearBaseModel(slope=float(slope), intercept=float(intercept))


def fit_base(histories: dict[str, np.ndarray], window: int) -> dict[str, LinearBaseModel]:
    """Fit a trailing-window line per series, plus the aggregate series."""
    if window < 2:
        raise ValueError("window must be >= 2")
    models: dict[str, LinearBaseModel] = {}
    total = None
    for name, series in histories.items():
        series = np.asarray(series, dtype=float)
        if series.size == 0:
            raise ValueError(f"series {name!r} is empty")
        tail = series[-window:]
        t0 = series.size - tail.size
        models[name] = fit_line(tail, np.arange(t0, series.size, dtype=float))
        total = tail.copy() if total is None else total + tail
    if total is not None:
        t0 = max(s.size for s in map(np.asarray, histories.values())) - total.size
        models["__total__"] = fit_line(total, np.arange(t0, t0 + total.size, dtype=float))
    return models


def reconcile(base: np.ndarray) -> np.ndarray:
    """Project a stacked [total; stations] base forecast onto coherence.

    Bottom-level estimate solves the OLS normal equations for the two-level
    summing matrix; negative station values clamp to 0 afterwards, with the
    total re-derived as the sum.
    """
    base = np.asarray(base, dtype=float)
    if base.ndim != 1 or base.size < 2:
        raise ValueError("base forecast must be a vector [total; stations]")
    if not np.all(np.isfinite(base)):
        raise ValueError("base forecast contains non-finite values")
    n = base.size - 1
    # S^T S = I + J, whose inverse is I - J/(n+1); y = S^T b
    y = base[0] + base[1:]
    beta = y - y.sum() / (n + 1)
    beta = np.maximum(beta, 0.0)
    return np.concatenate([[beta.sum()], beta])


def forecast_bus(histories: dict[str, dict[str, np.ndarray]], horizon: int,
                 window: int = 24) -> dict[str, np.ndarray]:
    """Reconciled per-stop demand forecasts for each direction.

    histories maps direction ("fwd" -> first-type demand c1, "bwd" ->
    second-type c2) to {stop_id: series}. Returns direction -> (horizon, n)
    arrays in the stop order of the input dict.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    out: dict[str, np.ndarray] = {}
    for direction, series_map in histories.items():
        stops = list(series_map)
        models = fit_base(series_map, window)
        length = np.asarray(series_map[stops[0]]).size
        rows = []
        for step in range(1, horizon + 1):
            t = length - 1 + step
            base = np.array([models["__total__"].predict(t)]
                            + [models[s].predict(t) for s in stops])
            rows.append(reconcile(base)[1:])
        out[direction] = np.maximum(np.array(rows), 0.0)
    return out


def save_forecast_csv(path: str, forecasts: dict[str, np.ndarray],
                      stop_ids: list[str]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment", "stop", "direction", "value"])
        for direction, rows in forecasts.items():
            for seg, row in enumerate(rows, start=1):
                for stop, value in zip(stop_ids, row):
                    writer.writerow([seg, stop, direction, f"{value:.6f}"])
