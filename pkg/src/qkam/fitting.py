"""Least-squares scaling fits."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import stats


def loglog_fit(x: Sequence[float], y: Sequence[float]) -> tuple:
    """Slope and its standard error of ``log y`` against ``log x``.

    Points with non-positive ``x`` or ``y`` are dropped; fewer than two usable points
    give ``(nan, nan)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 2:
        return float("nan"), float("nan")
    if keep.sum() == 2:
        lx, ly = np.log(x[keep]), np.log(y[keep])
        return float((ly[1] - ly[0]) / (lx[1] - lx[0])), 0.0
    res = stats.linregress(np.log(x[keep]), np.log(y[keep]))
    return float(res.slope), float(res.stderr)
