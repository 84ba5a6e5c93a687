"""Chain diagnostics computed from the scalar trace file."""

import csv
import json

import numpy as np


def read_trace(path):
    """Trace CSV (iter,param,value) -> dict param -> values in sweep order."""
    series = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["iter", "param", "value"]:
            raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
        for row in reader:
            series.setdefault(row["param"], []).append(float(row["value"]))
    if not series:
        raise ValueError(f"{path}: empty trace")
    return {k: np.asarray(v) for k, v in series.items()}


def autocorrelations(x, max_lag: int = 50) -> np.ndarray:
    """Sample autocorrelations at lags 1..max_lag (NaN where undefined)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    out = np.full(max_lag, np.nan)
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom <= 0:
        return out
    for k in range(1, max_lag + 1):
        if k >= n:
            break
        out[k - 1] = float(np.dot(xc[:-k], xc[k:]) / denom)
    return out


def running_means(x, checkpoints: int = 20) -> list:
    """Cumulative means sampled at evenly spaced positions."""
    x = np.asarray(x, dtype=float)
    cum = np.cumsum(x) / np.arange(1, x.size + 1)
    idx = np.unique(np.linspace(1, x.size, min(checkpoints, x.size)).astype(int)) - 1
    return [float(cum[i]) for i in idx]


def batch_means_se(x, n_batches: int = 30) -> float:
    """Monte Carlo standard error of the mean for a correlated scalar chain."""
    x = np.asarray(x, dtype=float)
    b = max(2, min(n_batches, x.size // 4))
    size = x.size // b
    if size < 1:
        return float(np.std(x, ddof=1) / np.sqrt(x.size))
    means = x[: b * size].reshape(b, size).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(b))


def diagnose(series: dict, max_lag: int = 50) -> dict:
    """JSON-ready summary: draw counts, means, running means, lag-k ACF."""
    report = {"params": {}}
    for name in sorted(series):
        x = series[name]
        acf = autocorrelations(x, max_lag)
        report["params"][name] = {
            "n_draws": int(x.size),
            "mean": float(x.mean()),
            "running_means": running_means(x),
            "autocorrelations": [None if np.isnan(v) else float(v) for v in acf],
        }
    return report


def write_diagnostics(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
