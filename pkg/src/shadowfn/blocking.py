"""Reblocking error analysis for serially correlated Monte Carlo series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pyblock


@dataclass(frozen=True)
class BlockingLevel:
    block_size: int
    n_blocks: int
    stderr: float
    stderr_err: float


@dataclass(frozen=True)
class BlockingResult:
    mean: float
    stderr: float
    levels: tuple
    optimal_level: int | None

    @property
    def converged(self) -> bool:
        """False when the series is too short for the plateau criterion to fire."""
        return self.optimal_level is not None

    def table(self) -> list[dict]:
        return [vars(lv) | {"optimal": k == self.optimal_level} for k, lv in enumerate(self.levels)]


def blocking_analysis(series) -> BlockingResult:
    """Mean and standard error of a correlated series.

    Uses repeated pairwise block averaging and takes the error at the
    smallest block size ``B`` with ``B^3 > 2 N (SE(B) / SE(0))^4``. If no
    level qualifies, the largest error over levels with at least 16 blocks is
    reported and ``optimal_level`` is None.
    """
    x = np.asarray(series, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 2:
        raise ValueError("need at least two finite samples")
    if np.ptp(x) == 0:
        level = BlockingLevel(1, int(x.size), 0.0, 0.0)
        return BlockingResult(float(x[0]), 0.0, (level,), 0)
    stats = pyblock.blocking.reblock(x)
    levels = tuple(
        BlockingLevel(2 ** int(s.block), int(s.ndata), float(s.std_err), float(s.std_err_err)) for s in stats
    )
    opt = pyblock.blocking.find_optimal_block(x.size, stats)[0]
    if isinstance(opt, (int, np.integer)):
        return BlockingResult(float(x.mean()), levels[opt].stderr, levels, int(opt))
    usable = [lv.stderr for lv in levels if lv.n_blocks >= 16] or [levels[0].stderr]
    return BlockingResult(float(x.mean()), max(usable), levels, None)
