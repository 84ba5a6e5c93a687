"""Readers and echo-writers for the documented CSV contracts."""

import csv
import math

TRAJECTORY_FIELDS = ("pair", "time", "subpop", "mean", "lo95", "hi95", "n_defined")
SCORE_FIELDS = ("subpop", "time", "mae", "log_mae", "n_cells")


def _opt_float(cell: str) -> float:
    return float(cell) if cell else float("nan")


def read_trajectory_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(TRAJECTORY_FIELDS):
            raise ValueError(f"{path}: unexpected trajectory header {reader.fieldnames}")
        for raw in reader:
            rows.append({
                "pair": raw["pair"],
                "time": float(raw["time"]),
                "subpop": raw["subpop"],
                "mean": _opt_float(raw["mean"]),
                "lo95": _opt_float(raw["lo95"]),
                "hi95": _opt_float(raw["hi95"]),
                "n_defined": int(raw["n_defined"]),
            })
    if not rows:
        raise ValueError(f"{path}: empty trajectory file")
    return rows


def write_trajectory_csv(rows, path) -> None:
    """Echo rows back in the exact input format (round-trip check)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_FIELDS)
        for r in rows:
            writer.writerow([
                r["pair"], repr(float(r["time"])), r["subpop"],
                "" if math.isnan(r["mean"]) else repr(float(r["mean"])),
                "" if math.isnan(r["lo95"]) else repr(float(r["lo95"])),
                "" if math.isnan(r["hi95"]) else repr(float(r["hi95"])),
                r["n_defined"],
            ])


def read_score_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(SCORE_FIELDS):
            raise ValueError(f"{path}: unexpected score header {reader.fieldnames}")
        for raw in reader:
            t = raw["time"]
            rows.append({
                "subpop": raw["subpop"],
                "time": t if t == "average" else float(t),
                "mae": float(raw["mae"]),
                "log_mae": float(raw["log_mae"]),
                "n_cells": int(raw["n_cells"]),
            })
    if not rows:
        raise ValueError(f"{path}: empty score file")
    return rows


def write_score_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_FIELDS)
        for r in rows:
            t = r["time"] if isinstance(r["time"], str) else repr(float(r["time"]))
            writer.writerow([r["subpop"], t, repr(float(r["mae"])),
                             repr(float(r["log_mae"])), r["n_cells"]])
