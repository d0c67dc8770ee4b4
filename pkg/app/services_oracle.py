"""
Brute-force grid oracles: EP residuals, Minty residuals and two-stage BEP search.

Bifunctions are callables f(x, y) that broadcast over leading axes. Grids are
uniform with `grid` points per axis and are enumerated lexicographically, so
reported solution lists are deterministic.
"""
import logging
from typing import Callable, List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .errors import EmptySolutionSetError, UsageError
from .geometry import BoxSet, Point, as_point
from .services_fbf import BepInstance

logger = logging.getLogger(__name__)

ORACLE_DIM_LIMIT = 4
DEFAULT_GRID = 101
AFFINE_TOL = 1e-9
DEFAULT_TOL = 1e-6
CHUNK = 256  # candidates evaluated per broadcast block

BifunctionEval = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _grid(k: BoxSet, grid: int) -> np.ndarray:
    if k.dim > ORACLE_DIM_LIMIT:
        raise UsageError(f"grid oracle limited to dimension {ORACLE_DIM_LIMIT}, got {k.dim}")
    return k.grid(grid)


def ep_residual(f_eval: BifunctionEval, x: ArrayLike, k: BoxSet, grid: int = DEFAULT_GRID) -> float:
    """max over grid y of (-f(x, y))_+; 0 certifies x at grid resolution."""
    x = as_point(x, dim=k.dim)
    ys = k.grid(grid)
    return float(max(0.0, np.max(-f_eval(x, ys))))


def dual_ep_residual(f_eval: BifunctionEval, x: ArrayLike, k: BoxSet, grid: int = DEFAULT_GRID) -> float:
    """max over grid y of (f(y, x))_+; 0 certifies the Minty problem at grid resolution."""
    x = as_point(x, dim=k.dim)
    ys = k.grid(grid)
    return float(max(0.0, np.max(f_eval(ys, x))))


def _ep_solutions(f_eval: BifunctionEval, candidates: np.ndarray, tests: np.ndarray,
                  tol: float) -> List[Point]:
    keep = []
    for start in range(0, len(candidates), CHUNK):
        block = candidates[start:start + CHUNK]
        worst = np.max(-f_eval(block[:, None, :], tests[None, :, :]), axis=1)
        keep.extend(block[i].copy() for i in np.flatnonzero(worst <= tol))
    return keep


def solve_ep_grid(f_eval: BifunctionEval, k: BoxSet, grid: int = DEFAULT_GRID,
                  tol: float = AFFINE_TOL) -> List[Point]:
    """Grid points x with ep_residual(x) <= tol, lexicographically ordered."""
    pts = _grid(k, grid)
    sols = _ep_solutions(f_eval, pts, pts, tol)
    logger.debug("solve_ep_grid: %d of %d grid points solve the EP", len(sols), len(pts))
    return sols


def stage_tolerances(inst: BepInstance, tol: Optional[float] = None) -> Tuple[float, float]:
    """(lower, upper) acceptance tolerances; an explicit tol applies to both stages.

    AFFINE_TOL for a bifunction affine in its second argument (the lower one
    always is), DEFAULT_TOL otherwise.
    """
    if tol is not None:
        return tol, tol
    return AFFINE_TOL, AFFINE_TOL if inst.upper.affine_in_second else DEFAULT_TOL


def bep_grid_stages(inst: BepInstance, grid: int = DEFAULT_GRID,
                    tol: Optional[float] = None) -> Tuple[List[Point], List[Point]]:
    """(grid S_f, points of S_f solving the upper problem over S_f)."""
    lower_tol, upper_tol = stage_tolerances(inst, tol)
    lower = solve_ep_grid(inst.f, inst.k, grid, lower_tol)
    if not lower:
        raise EmptySolutionSetError(
            f"no grid point of {inst.name} solves the lower-level problem at grid={grid}, tol={lower_tol:g}; "
            "refine the grid or raise the tolerance")
    sf = np.array(lower)
    sols = _ep_solutions(inst.upper.evaluate, sf, sf, upper_tol)
    logger.info("solve_bep_grid %s: |S_f|=%d, %d BEP solutions", inst.name, len(sf), len(sols))
    return lower, sols


def solve_bep_grid(inst: BepInstance, grid: int = DEFAULT_GRID, tol: Optional[float] = None) -> List[Point]:
    """Two-stage search: S_f on the grid, then the points of S_f solving g over S_f."""
    return bep_grid_stages(inst, grid, tol)[1]
