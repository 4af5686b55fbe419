"""Dense two-phase tableau simplex with Bland's rule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import SolverError

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-9
MAX_PIVOTS = 100_000

LE, EQ, GE = "<=", "=", ">="


@dataclass
class LPProblem:
    """min/max c.x  s.t.  rows[i] . x (rel) rhs[i],  x >= lower.

    ``sense=None`` asks only for feasibility.
    """

    A: np.ndarray
    relations: Sequence[str]
    rhs: np.ndarray
    c: Optional[np.ndarray] = None
    sense: Optional[str] = "min"
    lower: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.rhs = np.asarray(self.rhs, dtype=np.float64).reshape(-1)
        nrow, ncol = self.A.shape
        if len(self.relations) != nrow or self.rhs.shape[0] != nrow:
            raise ValueError("rows, relations and rhs must have equal length")
        if any(r not in (LE, EQ, GE) for r in self.relations):
            raise ValueError(f"unknown relation in {self.relations}")
        if self.c is None or self.sense is None:
            self.c, self.sense = np.zeros(ncol), None
        else:
            self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
            if self.c.shape[0] != ncol:
                raise ValueError("objective width differs from constraint width")
            if self.sense not in ("min", "max"):
                raise ValueError("sense must be 'min', 'max' or None")
        self.lower = np.zeros(ncol) if self.lower is None else np.asarray(self.lower, dtype=np.float64)
        if not (np.isfinite(self.A).all() and np.isfinite(self.rhs).all() and np.isfinite(self.c).all()):
            raise ValueError("coefficients must be finite")


@dataclass
class LPOutcome:
    status: str
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = float("nan")
    nonzeros: int = 0
    pivots: int = 0
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))


class _Tableau:
    def __init__(self, T: np.ndarray, basis: list[int]):
        self.T = T
        self.basis = basis
        self.pivots = 0

    def pivot(self, r: int, j: int) -> None:
        T = self.T
        piv = T[r, j]
        if abs(piv) < PIVOT_TOL:
            raise SolverError(f"singular basis at pivot step {self.pivots} (row {r}, column {j})")
        T[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        if not np.isfinite(T).all():
            raise SolverError(f"non-finite tableau after pivot step {self.pivots}")
        self.basis[r] = j
        self.pivots += 1

    def run(self, allowed: np.ndarray) -> str:
        """Minimize the objective stored in the last row over columns in ``allowed``."""
        T = self.T
        while True:
            if self.pivots > MAX_PIVOTS:
                raise SolverError(f"pivot cap {MAX_PIVOTS} reached")
            red = T[-1, :-1]
            cand = np.flatnonzero((red < -PIVOT_TOL) & allowed)
            if cand.size == 0:
                return "optimal"
            j = int(cand[0])  # Bland: lowest entering index
            col = T[:-1, j]
            rows = np.flatnonzero(col > PIVOT_TOL)
            if rows.size == 0:
                return "unbounded"
            ratios = T[rows, -1] / col[rows]
            best = ratios.min()
            tied = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            r = int(min(tied, key=lambda i: self.basis[i]))  # Bland: lowest leaving index
            self.pivot(r, j)


def solve_lp(p: LPProblem) -> LPOutcome:
    A = p.A.copy()
    b = p.rhs - A @ p.lower
    rel = list(p.relations)
    nrow, nvar = A.shape
    flipped = b < 0
    for i in range(nrow):
        if b[i] < 0:
            A[i], b[i] = -A[i], -b[i]
            rel[i] = {LE: GE, GE: LE, EQ: EQ}[rel[i]]

    n_slack = sum(r != EQ for r in rel)
    n_art = sum(r != LE for r in rel)
    width = nvar + n_slack + n_art
    T = np.zeros((nrow + 1, width + 1))
    T[:nrow, :nvar] = A
    T[:nrow, -1] = b
    basis = [0] * nrow
    s = nvar
    a = nvar + n_slack
    art_cols = []
    for i, r in enumerate(rel):
        if r == LE:
            T[i, s] = 1.0
            basis[i] = s
            s += 1
        else:
            if r == GE:
                T[i, s] = -1.0
                s += 1
            T[i, a] = 1.0
            basis[i] = a
            art_cols.append(a)
            a += 1

    A_aug = T[:nrow, :width].copy()
    rows = list(range(nrow))
    tab = _Tableau(T, basis)
    allowed = np.ones(width, dtype=bool)
    if art_cols:
        # phase 1: minimize the sum of artificials
        T[-1, :] = 0.0
        for i, r in enumerate(rel):
            if r != LE:
                T[-1, :] -= T[i, :]
        for j in art_cols:
            T[-1, j] = 0.0
        tab.run(allowed)
        if -T[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
            return LPOutcome("infeasible", pivots=tab.pivots)
        art = set(art_cols)
        keep = []
        for i in range(nrow):
            if tab.basis[i] in art:
                row = T[i, : nvar + n_slack]
                nz = np.flatnonzero(np.abs(row) > 1e-9)
                if nz.size:
                    tab.pivot(i, int(nz[0]))
                    keep.append(i)
                # otherwise the row is redundant and is dropped
            else:
                keep.append(i)
        T = np.vstack([T[keep], T[-1:]])
        tab.T = T
        tab.basis = [tab.basis[i] for i in keep]
        rows = keep
        allowed[nvar + n_slack :] = False

    cost = np.zeros(width)
    if p.sense is not None:
        cost[:nvar] = p.c if p.sense == "min" else -p.c
    T[-1, :] = 0.0
    T[-1, :width] = cost
    for i, j in enumerate(tab.basis):
        if cost[j] != 0.0:
            T[-1, :] -= cost[j] * T[i, :]
    status = tab.run(allowed)
    if status == "unbounded":
        return LPOutcome("unbounded", pivots=tab.pivots)

    x = np.zeros(width)
    for i, j in enumerate(tab.basis):
        x[j] = T[i, -1]
    xs = np.clip(x[:nvar], 0.0, None) + p.lower
    obj = float(p.c @ xs) if p.sense is not None else 0.0
    nnz = int(np.count_nonzero(np.abs(x[:nvar]) > 1e-12))
    return LPOutcome("optimal", xs, obj, nnz, tab.pivots, _duals(A_aug, rows, tab.basis, cost, flipped, p.sense))


def _duals(A_aug, rows, basis, cost, flipped, sense) -> np.ndarray:
    """Row prices y with c_B = y B, reported for the problem as posed (rows unflipped, max kept as max)."""
    y = np.zeros(A_aug.shape[0])
    if not rows:
        return y
    B = A_aug[rows][:, basis]
    try:
        yk = np.linalg.solve(B.T, cost[basis])
    except np.linalg.LinAlgError:
        return np.full(A_aug.shape[0], np.nan)
    y[rows] = yk
    y[flipped] *= -1.0
    return -y if sense == "max" else y


def constraint_residual(p: LPProblem, x: np.ndarray) -> float:
    """Largest violation of any row at ``x`` (0 when feasible)."""
    lhs = p.A @ x
    worst = float(np.max(p.lower - x, initial=0.0))
    for r, l, rhs in zip(p.relations, lhs, p.rhs):
        if r == LE:
            worst = max(worst, l - rhs)
        elif r == GE:
            worst = max(worst, rhs - l)
        else:
            worst = max(worst, abs(l - rhs))
    return worst
