"""Heatmap regression loss, occupancy BCE loss, their weighted sum and gradient.

Both losses are means over the 1440 cells and are evaluated in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

BCE_EPS = 1e-7
DEFAULT_LAMBDA_OCC = 0.5


@dataclass(frozen=True)
class LossBreakdown:
    l_vis: float
    l_occ: float
    l_total: float
    lambda_occ: float


def _pair(a, b, names):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"{names[0]} shape {a.shape} != {names[1]} shape {b.shape}")
    return a, b


def l_vis(p, p_star) -> float:
    p, p_star = _pair(p, p_star, ("P", "P*"))
    return float(np.mean((p - p_star) ** 2))


def l_occ(p, m) -> float:
    p, m = _pair(p, m, ("P", "M"))
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(m * np.log(pc) + (1.0 - m) * np.log1p(-pc))))


def l_total(p, p_star, m, lambda_occ: float = DEFAULT_LAMBDA_OCC) -> LossBreakdown:
    if lambda_occ < 0:
        raise ValidationError("lambda_occ must be non-negative")
    lv = l_vis(p, p_star)
    lo = l_occ(p, m)
    return LossBreakdown(lv, lo, lv + lambda_occ * lo, lambda_occ)


def grad_l_total(p, p_star, m, lambda_occ: float = DEFAULT_LAMBDA_OCC) -> np.ndarray:
    """d l_total / d P, cellwise. Clamped cells get no BCE gradient."""
    p, p_star = _pair(p, p_star, ("P", "P*"))
    _, m = _pair(p, m, ("P", "M"))
    n = p.size
    g = 2.0 * (p - p_star) / n
    if lambda_occ:
        inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
        safe = np.where(inside, p, 0.5)
        g = g + np.where(inside, lambda_occ * (safe - m) / (n * safe * (1.0 - safe)), 0.0)
    return g


def grad_l_total_logits(p, p_star, m, lambda_occ: float = DEFAULT_LAMBDA_OCC) -> np.ndarray:
    """Gradient with respect to logits when ``P = sigmoid(logits)``."""
    p = np.asarray(p, dtype=np.float64)
    return grad_l_total(p, p_star, m, lambda_occ) * p * (1.0 - p)

