"""Dense revised simplex for equality-constrained LPs in standard form:

    min c.x   s.t.  A x = b,  x >= 0.

Built for the closed-measure programs: few rows (one mass row plus two per
test-function mode, possibly linearly dependent), up to a few hundred
thousand columns, and heavy degeneracy.  Two phases with artificial
variables; explicit basis inverse with periodic refactorization; cyclic
block (partial) pricing, most negative reduced cost within the block, ties
to the smallest column index.  The leaving row comes from the lexicographic
ratio test (the classical anti-cycling rule: compare (x_B, rows of B^-1)
scaled by the direction), whose selection is unique in exact arithmetic, so
the whole method is deterministic and terminating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Infeasible

_RC_TOL = 1e-9          # reduced-cost optimality tolerance
_PIV_TOL = 1e-7         # minimum pivot magnitude in the ratio test (relative)
_CROSS_TOL = 1e-5       # minimum pivot for evicting a zero-level artificial
_EVICT_TOL = 1e-5       # minimum coefficient for post-phase-1 eviction pivots
_LEX_TOL = 1e-9         # relative tie tolerance per lexicographic level
_REFACTOR_EVERY = 1     # basis inverse is small: refresh it exactly each pivot


@dataclass
class SimplexResult:
    status: str                 # "optimal"
    x: np.ndarray               # primal solution (n,)
    value: float                # c.x
    duals: np.ndarray           # row multipliers y (m,)
    reduced_cost_min: float     # min reduced cost over real columns
    duality_gap: float          # |c.x - y.b|
    iterations: int
    basis: np.ndarray


class _Tableau:
    """Basis bookkeeping over [A | I] with the identity columns artificial."""

    def __init__(self, a, b):
        self.a = a
        self.b = b
        self.m, self.n = a.shape
        self.basis = np.arange(self.n, self.n + self.m)
        self.binv = np.eye(self.m)
        self.pivots_since_refactor = 0

    def column(self, j):
        if j < self.n:
            return self.a[:, j]
        col = np.zeros(self.m)
        col[j - self.n] = 1.0
        return col

    def refactor(self):
        bmat = np.empty((self.m, self.m))
        for i, j in enumerate(self.basis):
            bmat[:, i] = self.column(j)
        self.binv = np.linalg.inv(bmat)
        self.pivots_since_refactor = 0

    def pivot(self, row, j_in):
        d = self.binv @ self.column(j_in)
        piv = d[row]
        e = -d / piv
        e[row] = 1.0 / piv
        delta = e.copy()
        delta[row] -= 1.0
        self.binv += np.outer(delta, self.binv[row])
        self.basis[row] = j_in
        self.pivots_since_refactor += 1
        if self.pivots_since_refactor >= _REFACTOR_EVERY:
            self.refactor()

    def x_basic(self):
        return self.binv @ self.b

    def duals(self, cost):
        cb = cost[self.basis]
        return cb @ self.binv


def _price_block(tab, cost, y, lo, hi):
    """Most negative reduced cost among nonbasic real columns in [lo, hi);
    ties break to the smallest column index.  Artificials are never priced:
    they start basic and are not re-admitted."""
    is_basic = np.zeros(tab.n, dtype=bool)
    is_basic[tab.basis[tab.basis < tab.n]] = True
    r = cost[lo:hi] - y @ tab.a[:, lo:hi]
    elig = (r < -_RC_TOL) & ~is_basic[lo:hi]
    idx = np.nonzero(elig)[0]
    if not idx.size:
        return None
    j = idx[np.argmin(r[idx])]
    return lo + int(j)


def _choose_leaving(tab, d, x_b, pin_artificials):
    """Lexicographic ratio test; ties that survive every level (impossible in
    exact arithmetic) break to the largest pivot element for stability.

    In phase 2 (`pin_artificials`) a basic artificial crossed by the
    direction leaves first at step zero: artificials sit at level zero and
    may not rise."""
    if pin_artificials:
        crossing = (tab.basis >= tab.n) & (np.abs(d) > _CROSS_TOL)
        if np.any(crossing):
            rows = np.nonzero(crossing)[0]
            return int(rows[np.argmax(np.abs(d[rows]))])
    pos = d > _PIV_TOL * (1.0 + float(np.abs(d).max()))
    if not np.any(pos):
        return None
    rows = np.nonzero(pos)[0]
    level = np.maximum(x_b[rows], 0.0) / d[rows]    # clamp fp drift below zero
    for col in range(tab.m):
        lo = level.min()
        keep = level <= lo + _LEX_TOL * (1.0 + abs(lo))
        rows = rows[keep]
        if rows.size == 1:
            return int(rows[0])
        level = tab.binv[rows, col] / d[rows]
    return int(rows[np.argmax(d[rows])])


def _run(tab, cost, phase, block, max_iters):
    iterations = 0
    block_start = 0
    n_total = tab.n
    while True:
        y = tab.duals(cost)
        x_b = tab.x_basic()
        entering = None
        scanned = 0
        lo = block_start
        while scanned < n_total:
            hi = min(lo + block, n_total)
            entering = _price_block(tab, cost, y, lo, hi)
            if entering is not None:
                block_start = lo
                break
            scanned += hi - lo
            lo = 0 if hi >= n_total else hi
        if entering is None:
            return iterations
        d = tab.binv @ tab.column(entering)
        row = _choose_leaving(tab, d, x_b, pin_artificials=(phase == 2))
        if row is None:
            raise AssertionError(
                "unbounded direction met: impossible on the mass-one polytope")
        tab.pivot(row, entering)
        iterations += 1
        if iterations > max_iters:
            raise RuntimeError(f"simplex exceeded {max_iters} iterations")


def solve_standard_form(c, a, b, block=8192, max_iters=200000):
    """Solve min c.x s.t. A x = b, x >= 0 by two-phase revised simplex.

    Raises Infeasible when phase 1 cannot zero the artificials.  Returns a
    SimplexResult carrying the optimal basic solution, the dual multipliers
    of the final basis and the primal-dual gap certificate."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = a.shape
    # row equilibration keeps the bases well conditioned across the mixed
    # scales of mass and closedness rows
    row_scale = np.abs(a).max(axis=1)
    row_scale[row_scale < 1e-300] = 1.0
    a = a / row_scale[:, None]
    b = b / row_scale
    flip = b < 0
    if np.any(flip):
        a = a.copy()
        a[flip] *= -1.0
        b[flip] *= -1.0

    tab = _Tableau(a, b)
    phase1_cost = np.concatenate([np.zeros(n), np.ones(m)])
    it1 = _run(tab, phase1_cost, phase=1, block=block, max_iters=max_iters)
    tab.refactor()
    x_b = tab.x_basic()
    art_level = float(np.sum(x_b[tab.basis >= n]))
    if art_level > 1e-8 * (1.0 + float(np.abs(b).sum())):
        raise Infeasible(f"phase-1 optimum {art_level:.3e} > 0: empty discrete "
                         "closed set (basis/grid inconsistency)")

    # pivot remaining artificials out wherever a real column can replace them
    # solidly; rows where no coefficient clears the threshold are (numerically)
    # redundant and keep their artificial pinned at level zero
    for row in range(m):
        if tab.basis[row] < n:
            continue
        r = tab.binv[row] @ tab.a
        r[np.isin(np.arange(n), tab.basis)] = 0.0
        j_best = int(np.argmax(np.abs(r)))
        if abs(r[j_best]) > _EVICT_TOL:
            tab.pivot(row, j_best)
    tab.refactor()

    phase2_cost = np.concatenate([c, np.zeros(m)])
    it2 = _run(tab, phase2_cost, phase=2, block=block, max_iters=max_iters)
    tab.refactor()

    x = np.zeros(n)
    x_b = tab.x_basic()
    for i, j in enumerate(tab.basis):
        if j < n:
            x[j] = x_b[i]
    x[np.abs(x) < 1e-14] = 0.0
    y = tab.duals(phase2_cost)
    reduced = c - y @ tab.a
    value = float(c @ x)
    dual_value = float(y @ b)
    y_orig = y.copy()
    y_orig[flip] *= -1.0
    y_orig = y_orig / row_scale       # duals for the caller's unscaled rows
    return SimplexResult(
        status="optimal",
        x=x,
        value=value,
        duals=y_orig,
        reduced_cost_min=float(reduced.min()),
        duality_gap=abs(value - dual_value),
        iterations=it1 + it2,
        basis=tab.basis.copy(),
    )
