"""Sparse LP contract: equality-constrained, nonnegative variables, primal and dual returned."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

OPTIMAL, INFEASIBLE, UNBOUNDED, FAILED = "optimal", "infeasible", "unbounded", "failed"


@dataclass
class LPSolution:
    status: str
    weights: np.ndarray | None
    value: float
    duals: np.ndarray | None
    dual_value: float
    primal_defect: float
    dual_defect: float
    solver: str = "highs"

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def duality_gap(self) -> float:
        return abs(self.value - self.dual_value) if self.optimal else float("nan")


def feasibility_defects(A: sp.spmatrix, b: np.ndarray, c: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Max |Ax - b| together with max(-x) and the max violation of A^T y <= c."""
    primal = max(float(np.max(np.abs(A @ x - b), initial=0.0)), float(np.max(-x, initial=0.0)))
    dual = float(np.max(A.T @ y - c, initial=0.0))
    return primal, max(dual, 0.0)


def solve_equality_lp(c: np.ndarray, A: sp.spmatrix, b: np.ndarray, method: str = "highs") -> LPSolution:
    """min c.x subject to A x = b, x >= 0 via HiGHS; duals are the equality marginals."""
    res = linprog(c, A_eq=A.tocsr(), b_eq=b, bounds=(0, None), method=method)
    if res.status == 2:
        return LPSolution(INFEASIBLE, None, float("inf"), None, float("nan"), float("nan"), float("nan"))
    if res.status == 3:
        return LPSolution(UNBOUNDED, None, float("-inf"), None, float("nan"), float("nan"), float("nan"))
    if res.status != 0:
        return LPSolution(FAILED, None, float("nan"), None, float("nan"), float("nan"), float("nan"))
    x = np.asarray(res.x)
    y = np.asarray(res.eqlin.marginals)
    pdef, ddef = feasibility_defects(A, b, c, x, y)
    return LPSolution(OPTIMAL, x, float(c @ x), y, float(b @ y), pdef, ddef)
