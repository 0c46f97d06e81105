"""Episode metrics: success, SPL, coverage and image quality."""
from __future__ import annotations

import numpy as np

from .maps import FREE, GridSpec, distance_field


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    return float("inf") if mse == 0 else -10.0 * np.log10(mse)


def coverage(states: np.ndarray, free_truth: np.ndarray) -> float:
    """Fraction of truly free cells that the map marks free."""
    total = int(np.count_nonzero(free_truth))
    return 0.0 if total == 0 else float(np.count_nonzero((states == FREE) & free_truth) / total)


def shortest_to_region(passable: np.ndarray, grid: GridSpec, start, target_xy, radius: float) -> float:
    """Shortest 8-connected path length (m) from ``start`` to any passable cell within ``radius`` of ``target_xy``."""
    dist = distance_field(passable, start)
    cells = np.argwhere(passable)
    d = np.linalg.norm(grid.centers(cells) - np.asarray(target_xy)[None, :2], axis=1)
    goal = cells[d <= radius]
    if len(goal) == 0:
        return float("inf")
    return float(dist[goal[:, 0], goal[:, 1]].min() * grid.cell)


def spl(success: bool, shortest: float, actual: float) -> float:
    """Success weighted by shortest / max(shortest, actual)."""
    if not success or not np.isfinite(shortest):
        return 0.0
    denom = max(shortest, actual)
    return 1.0 if denom == 0 else float(shortest / denom)


def aggregate(rows: list[dict]) -> dict:
    n = len(rows)
    if n == 0:
        return {"episodes": 0, "sr": 0.0, "spl": 0.0}
    return {
        "episodes": n,
        "sr": float(np.mean([bool(r["success"]) for r in rows])),
        "spl": float(np.mean([float(r["spl"]) for r in rows])),
        "mean_steps": float(np.mean([r["steps"] for r in rows])),
    }
