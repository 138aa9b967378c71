"""Tabular export of planner sweeps and simulation results."""

from __future__ import annotations

import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence, Union

import pandas as pd

from dsdsim.dsd_planner import CurvePoint, SweepRow
from dsdsim.dsd_simkit import KPlanRow, KSweepRow
from dsdsim.version import SCHEMA_VERSION

logger = logging.getLogger(__name__)

# Floats in CSV output keep 12 significant digits
FLOAT_FORMAT = "%.12g"

PLAN_COLUMNS = ["alpha", "L", "gamma_zero", "gamma_star", "s_star", "mode"]
CURVE_COLUMNS = ["alpha", "L", "gamma", "s_inf"]
K_PLAN_COLUMNS = ["K", "b", "L", "alpha", "gamma_star", "mode", "S"]
K_SWEEP_COLUMNS = [
    "K",
    "gamma",
    "alpha_K",
    "b",
    "L",
    "gamma_star",
    "mode",
    "predicted_S",
    "measured_S",
    "alpha_hat",
    "mean_tokens_per_round",
    "simulated_wall_time",
    "throughput",
    "tv_next_token",
    "rounds",
    "total_tokens",
]


def _with_schema(df: pd.DataFrame) -> pd.DataFrame:
    df.insert(0, "schema_version", SCHEMA_VERSION)
    return df


def plan_table(rows: Sequence[SweepRow]) -> pd.DataFrame:
    """One row per (alpha, L) cell."""
    table = {name: [] for name in PLAN_COLUMNS}
    for row in rows:
        table["alpha"].append(row.alpha)
        table["L"].append(row.L)
        table["gamma_zero"].append(row.gamma_zero)
        table["gamma_star"].append(row.gamma_star)
        table["s_star"].append(row.s_star)
        table["mode"].append(row.mode.value)
    return _with_schema(pd.DataFrame.from_dict(table))


def curve_table(points: Sequence[CurvePoint]) -> pd.DataFrame:
    """Speedup against draft length, one row per (alpha, L, gamma)."""
    table = {name: [] for name in CURVE_COLUMNS}
    for point in points:
        table["alpha"].append(point.alpha)
        table["L"].append(point.L)
        table["gamma"].append(point.gamma)
        table["s_inf"].append(point.s_inf)
    return _with_schema(pd.DataFrame.from_dict(table))


def k_plan_table(rows: Sequence[KPlanRow]) -> pd.DataFrame:
    """Planned gamma_star and speedup per K at a fixed acceptance rate."""
    table = {name: [] for name in K_PLAN_COLUMNS}
    for row in rows:
        table["K"].append(row.k)
        table["b"].append(row.b)
        table["L"].append(row.L)
        table["alpha"].append(row.alpha)
        table["gamma_star"].append(row.gamma_star)
        table["mode"].append(row.mode.value)
        table["S"].append(row.s_star)
    return _with_schema(pd.DataFrame.from_dict(table))


def k_sweep_table(rows: Sequence[KSweepRow]) -> pd.DataFrame:
    """One row per (K, gamma) cell with the simulated metrics flattened in."""
    table = {name: [] for name in K_SWEEP_COLUMNS}
    for row in rows:
        m = row.metrics
        table["K"].append(row.k)
        table["gamma"].append(row.gamma)
        table["alpha_K"].append(row.alpha_k)
        table["b"].append(row.b)
        table["L"].append(row.L)
        table["gamma_star"].append(row.gamma_star)
        table["mode"].append(row.mode.value)
        table["predicted_S"].append(row.predicted_s)
        table["measured_S"].append(row.measured_s)
        table["alpha_hat"].append(m.alpha_hat)
        table["mean_tokens_per_round"].append(m.mean_tokens_per_round)
        table["simulated_wall_time"].append(m.simulated_wall_time)
        table["throughput"].append(m.throughput)
        table["tv_next_token"].append(m.tv_next_token)
        table["rounds"].append(m.rounds)
        table["total_tokens"].append(m.total_tokens)
    return _with_schema(pd.DataFrame.from_dict(table))


def write_csv(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(df)} rows to {path}")
    return path


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def dump_json(payload: dict, path: Optional[Union[str, Path]] = None) -> str:
    """Serialize `payload` with the schema version; write to `path` or stdout.

    Non-finite floats become null.
    """
    doc = {"schema_version": SCHEMA_VERSION, **_json_safe(payload)}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path is None:
        sys.stdout.write(text + "\n")
    else:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
        logger.info(f"Wrote {path}")
    return text
