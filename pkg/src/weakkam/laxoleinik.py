"""Dynamic-programming engine for finite-horizon minimal actions, the
Peierls barrier, Aubry sets, weak KAM solutions, and the value-iteration
route to the critical value.

Discretization: one step moves a grid node by an integer number of cells per
axis, m in [-M, M] with M = floor(v_max * dt / dx), which simultaneously
enumerates the winding lifts of the displacement.  The one-step action is

    A(x, y, t) = dt * L((x + y)/2, (y - x)/dt, t)

with L evaluated at the spatial midpoint of the lift (second-order in space;
time at the slice the step leaves from).  The backward operator takes the
slice at time t to t + dt by minimizing u(x) + A; the forward operator is the
adjoint max-of-differences, producing the slice at t - dt.  Argmin ties break
toward the lexicographically smallest source node, which makes every output
byte-deterministic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import LagrangianSystem, SpaceTimeGrid, ValueField
from .errors import BoxSaturation, EmptyAubry, NotConverged

_SAT_SLACK = 1e-12


class LaxOleinikEngine:
    """Precomputed one-step candidate tables for a (system, grid) pair."""

    def __init__(self, system: LagrangianSystem, grid: SpaceTimeGrid):
        if system.dim != grid.dim:
            raise ValueError("system/grid dimension mismatch")
        if abs(system.v_max - grid.v_max) > 1e-12:
            raise ValueError("system and grid disagree on v_max")
        self.system = system
        self.grid = grid
        d, nx, nt = grid.dim, grid.nx, grid.nt
        m_max = int(np.floor(grid.v_max * grid.dt / grid.dx + 1e-9))
        self.m_max = m_max
        cells = np.array(list(itertools.product(range(-m_max, m_max + 1), repeat=d)),
                         dtype=np.int64)
        self.disp_cells = cells                        # (ncand, d)
        self.vel = cells * (grid.dx / grid.dt)         # (ncand, d)
        self.saturated = np.any(np.abs(cells) == m_max, axis=1)
        self.n_cand = cells.shape[0]

        node_cells = grid.space_cells(np.arange(grid.n_space))   # (NX, d)
        self.src_shift = np.empty((self.n_cand, grid.n_space), dtype=np.int64)
        self.dst_shift = np.empty((self.n_cand, grid.n_space), dtype=np.int64)
        for j in range(self.n_cand):
            self.src_shift[j] = grid.space_index(node_cells - cells[j])
            self.dst_shift[j] = grid.space_index(node_cells + cells[j])
        self._space_shape = (nx,) * d

        xs = grid.x_coords()
        ts = grid.t_coords()
        delta = cells * grid.dx
        self.cost_b = np.empty((nt, self.n_cand, grid.n_space))
        self.cost_f = np.empty((nt, self.n_cand, grid.n_space))
        for j in range(self.n_cand):
            mid_b = np.mod(xs - 0.5 * delta[j], 1.0)
            mid_f = np.mod(xs + 0.5 * delta[j], 1.0)
            for it, t in enumerate(ts):
                self.cost_b[it, j] = grid.dt * system.lagrangian(mid_b, self.vel[j], t)
                self.cost_f[it, j] = grid.dt * system.lagrangian(mid_f, self.vel[j], t)

    # --- shifted candidate evaluation ------------------------------------------

    @staticmethod
    def _shift_axis(src, dst, m, axis):
        """dst[..., i, ...] = src[..., i - m, ...] along one periodic axis."""
        n = src.shape[axis]
        m = int(m) % n
        lead = (slice(None),) * (axis % src.ndim)
        if m == 0:
            dst[...] = src
        else:
            dst[lead + (slice(m, None),)] = src[lead + (slice(None, n - m),)]
            dst[lead + (slice(None, m),)] = src[lead + (slice(n - m, None),)]

    def _rolled(self, u, cells, out):
        """out[..., y] = u[..., y - cells] on the periodic grid (block copies)."""
        shaped_in = u.reshape(u.shape[:-1] + self._space_shape)
        shaped_out = out.reshape(out.shape[:-1] + self._space_shape)
        if self.grid.dim == 1:
            self._shift_axis(shaped_in, shaped_out, cells[0], -1)
        else:
            tmp = np.empty_like(shaped_in)
            self._shift_axis(shaped_in, tmp, cells[0], -2)
            self._shift_axis(tmp, shaped_out, cells[1], -1)
        return out

    # --- single-slice steps ---------------------------------------------------

    def step_backward(self, u, it, check_saturation=False):
        """u'(y) = min_x u(x) + A(x, y, t_it); input slice at it, output at it+1."""
        out = None
        out_free = None
        buf = np.empty_like(u)
        for j in range(self.n_cand):
            self._rolled(u, self.disp_cells[j], buf)
            cand = buf + self.cost_b[it, j]
            out = cand if out is None else np.minimum(out, cand, out=out)
            if check_saturation and not self.saturated[j]:
                out_free = cand.copy() if out_free is None else np.minimum(out_free, cand, out=out_free)
        if check_saturation:
            self._raise_if_saturated(out, out_free)
        return out

    def step_forward(self, u, it, check_saturation=False):
        """u'(x) = max_y u(y) - A(x, y, t_it); input slice at it+1, output at it."""
        out = None
        out_free = None
        buf = np.empty_like(u)
        for j in range(self.n_cand):
            self._rolled(u, -self.disp_cells[j], buf)
            cand = buf - self.cost_f[it, j]
            out = cand if out is None else np.maximum(out, cand, out=out)
            if check_saturation and not self.saturated[j]:
                out_free = cand.copy() if out_free is None else np.maximum(out_free, cand, out=out_free)
        if check_saturation:
            self._raise_if_saturated(-out, -out_free if out_free is not None else None)
        return out

    def _raise_if_saturated(self, out, out_free):
        finite = np.isfinite(out)
        if not np.any(finite):
            return
        if out_free is None or np.all(out_free[finite] > out[finite] + _SAT_SLACK):
            raise BoxSaturation(
                "every argmin touches |v| = v_max; enlarge the velocity box")

    def step_backward_argmin(self, u, it):
        """Backward step returning (values, argmin candidate) with ties broken
        toward the lexicographically smallest source node index."""
        vals = np.empty((self.n_cand, u.shape[-1]))
        for j in range(self.n_cand):
            vals[j] = u[self.src_shift[j]] + self.cost_b[it, j]
        order = np.lexsort((self.src_shift, vals), axis=0)
        best = order[0]
        cols = np.arange(u.shape[-1])
        return vals[best, cols], best

    def step_backward_multi(self, u_groups, its):
        """Batched backward step: u_groups (G, B, NX), its (G,) per-group slices."""
        out = np.empty_like(u_groups)
        buf = np.empty_like(u_groups)
        cand = np.empty_like(u_groups)
        cost = self.cost_b[its]                        # (G, ncand, NX)
        for j in range(self.n_cand):
            self._rolled(u_groups, self.disp_cells[j], buf)
            np.add(buf, cost[:, j][:, None, :], out=cand)
            if j == 0:
                out[...] = cand
            else:
                np.minimum(out, cand, out=out)
        return out

    # --- full-period passes -----------------------------------------------------

    def period_pass_backward(self, state, shift_per_step=0.0):
        """One sweep of the backward operator around the time circle.

        state (nt, NX); slice it feeds slice it+1 so the sweep equals the
        composed full-period map applied along the way."""
        s = state.copy()
        nt = self.grid.nt
        for k in range(nt):
            s[(k + 1) % nt] = self.step_backward(s[k], k) + shift_per_step
        return s

    def period_pass_forward(self, state, shift_per_step=0.0):
        s = state.copy()
        nt = self.grid.nt
        for k in range(nt - 1, -1, -1):
            s[k] = self.step_forward(s[(k + 1) % nt], k) - shift_per_step
        return s

    def saturation_fraction(self, state):
        """Fraction of nodes whose one-step minimizers all sit on the box
        boundary (diagnostic; exact zero for the built-in families)."""
        sat_nodes = 0
        total = 0
        for k in range(self.grid.nt):
            out = self.step_backward(state[k], k)
            out_free = None
            for j in range(self.n_cand):
                if self.saturated[j]:
                    continue
                cand = state[k][self.src_shift[j]] + self.cost_b[k, j]
                out_free = cand if out_free is None else np.minimum(out_free, cand)
            sat_nodes += int(np.sum(out_free > out + _SAT_SLACK))
            total += out.size
        return sat_nodes / total


def lax_oleinik_step(engine: LaxOleinikEngine, u_slice, t_index, direction="backward"):
    """One discrete Lax-Oleinik step on a single time slice.

    backward: consumes the slice at t_index, returns the slice at t_index+1.
    forward:  consumes the slice at t_index+1, returns the slice at t_index.
    Raises BoxSaturation when every node's minimizer saturates the box."""
    u_slice = np.asarray(u_slice, dtype=float)
    if direction == "backward":
        return engine.step_backward(u_slice, t_index % engine.grid.nt,
                                    check_saturation=True)
    if direction == "forward":
        return engine.step_forward(u_slice, t_index % engine.grid.nt,
                                   check_saturation=True)
    raise ValueError("direction must be 'backward' or 'forward'")


# ---------------------------------------------------------------------------
# finite-horizon minimal action
# ---------------------------------------------------------------------------

def finite_action(engine: LaxOleinikEngine, src, dst, n, alpha0=0.0,
                  keep_argmins=False):
    """DP value of the discrete minimal action from src=(ix, it) to
    dst=(iy, is) over ((is - it) mod 1) + n time units, plus n * alpha0.

    Seeds the indicator-like field (0 at the source, +inf elsewhere) and
    composes backward steps.  With keep_argmins=True also returns the
    backtracked minimizing curve as (times, lifted positions)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    grid = engine.grid
    ix, it0 = src
    iy, is0 = dst
    n_steps = ((is0 - it0) % grid.nt) + n * grid.nt
    u = np.full(grid.n_space, np.inf)
    u[ix] = 0.0
    argmins = []
    for k in range(n_steps):
        it = (it0 + k) % grid.nt
        if keep_argmins:
            u, best = engine.step_backward_argmin(u, it)
            argmins.append(best)
        else:
            u = engine.step_backward(u, it, check_saturation=(k + 1) % grid.nt == 0)
    value = u[iy] + n * alpha0
    if not keep_argmins:
        return value
    # backtrack the lexicographically-least minimizing grid curve
    node = iy
    cells = [grid.space_cells(np.array(node))]
    for k in range(n_steps - 1, -1, -1):
        j = argmins[k][node]
        prev = engine.src_shift[j][node]
        cells.append(cells[-1] - engine.disp_cells[j])
        node = prev
    cells.reverse()
    lift = np.array(cells, dtype=float) * grid.dx
    lift = lift - lift[0] + grid.space_cells(np.array(src[0])) * grid.dx
    times = it0 * grid.dt + np.arange(n_steps + 1) * grid.dt
    return value, (times, lift)


# ---------------------------------------------------------------------------
# barrier tables
# ---------------------------------------------------------------------------

@dataclass
class BarrierQuery:
    value: float
    n_star: int
    oscillation: float


class BarrierTable:
    """Raw h_n values (no alpha shift) for all diagonal node pairs and an
    optional probe list, for n = 1..n_hi.

    One batched sweep evolves the indicator seeds of every (source node,
    source slice) simultaneously; n_hi * nt + nt - 1 steps cover every
    horizon and target slice."""

    def __init__(self, engine: LaxOleinikEngine, n_hi, probes=()):
        self.engine = engine
        self.n_hi = int(n_hi)
        self.probes = list(probes)
        grid = engine.grid
        nt, nx_sp = grid.nt, grid.n_space

        recorders = {}
        for p_idx, (src, dst) in enumerate(self.probes):
            (ix, it0), (iy, is0) = src, dst
            dsl = (is0 - it0) % nt
            for n in range(1, self.n_hi + 1):
                k = dsl + n * nt
                recorders.setdefault(k, []).append((p_idx, n, it0, ix, iy))

        u = np.full((nt, nx_sp, nx_sp), np.inf)
        idx = np.arange(nx_sp)
        u[:, idx, idx] = 0.0
        self.diag_raw = np.full((self.n_hi + 1, nt, nx_sp), np.nan)
        self.probe_raw = np.full((len(self.probes), self.n_hi + 1), np.nan)
        groups = np.arange(nt)
        last_k = self.n_hi * nt + (nt - 1 if recorders else 0)
        for k in range(1, last_k + 1):
            its = (groups + (k - 1)) % nt
            u = engine.step_backward_multi(u, its)
            n, rem = divmod(k, nt)
            if rem == 0 and n <= self.n_hi:
                self.diag_raw[n] = u[:, idx, idx]
            for (p_idx, n_p, it0, ix, iy) in recorders.get(k, ()):
                self.probe_raw[p_idx, n_p] = u[it0, ix, iy]

    def h_n_probe(self, p_idx, alpha0=0.0):
        """h_n values for a tabulated probe, n = 1..n_hi."""
        n = np.arange(self.n_hi + 1)
        return (self.probe_raw[p_idx] + n * alpha0)[1:]

    def h_n_diag(self, node, it, alpha0=0.0):
        n = np.arange(self.n_hi + 1)
        return (self.diag_raw[1:, it, node] + n[1:] * alpha0)

    def diagonal_window_min(self, n_lo, n_hi, alpha0=0.0):
        """(nt, NX) field: min over the window of the alpha-shifted diagonal."""
        n = np.arange(n_lo, n_hi + 1)
        vals = self.diag_raw[n_lo:n_hi + 1] + n[:, None, None] * alpha0
        return vals.min(axis=0)


def peierls_barrier(h_n_values, n_lo, n_hi, tol_h=5e-3):
    """Window-min liminf surrogate over n in [n_lo, n_hi] from a 1-based
    array of h_n values; returns the value, achieving n and the oscillation
    of the window, and raises NotConverged when the running minimum is still
    decreasing by more than tol_h across the final quarter of the window."""
    if n_hi < 2 * n_lo:
        raise ValueError("need n_hi >= 2 * n_lo")
    h = np.asarray(h_n_values, dtype=float)
    window = h[n_lo - 1:n_hi]
    k = int(np.argmin(window))
    value = float(window[k])
    running = np.minimum.accumulate(window)
    tail = max(1, n_hi // 4)
    drop = float(running[-tail] - running[-1])
    if drop > tol_h:
        raise NotConverged(
            f"running barrier minimum still dropped by {drop:.3e} over the last "
            f"{tail} horizons (tol_h = {tol_h:g})")
    return BarrierQuery(value=value, n_star=n_lo + k,
                        oscillation=float(window.max() - window.min()))


def aubry_set(diag_field, eps_a):
    """Nodes whose diagonal barrier does not exceed eps_a; (nt, NX) mask."""
    if eps_a < 0:
        raise EmptyAubry("eps_a < 0 can never match: the diagonal barrier "
                         "is nonnegative up to grid error")
    mask = diag_field <= eps_a
    if not np.any(mask):
        raise EmptyAubry(f"no node has diagonal barrier <= {eps_a:g}")
    return mask


def aubry_estimate(diag_field, eps_a, max_doublings=3, floor=1e-8):
    """aubry_set with the documented auto-escalation: double eps_a (seeding
    zero thresholds at `floor`) at most max_doublings times before giving up."""
    eps = eps_a
    for attempt in range(max_doublings + 1):
        try:
            return aubry_set(diag_field, eps), eps
        except EmptyAubry:
            if attempt == max_doublings:
                raise
            eps = max(2 * eps, floor)
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# value iteration and weak KAM pairs
# ---------------------------------------------------------------------------

@dataclass
class CriticalValueResult:
    alpha0: float
    gap: float
    periods: int
    state: np.ndarray

    def __float__(self):
        return self.alpha0


def critical_value_vi(engine: LaxOleinikEngine, tol_alpha=1e-4, max_periods=1000,
                      refine_periods=8):
    """Critical value by value iteration of the full-period backward operator.

    Iterates from u = 0 and watches the per-period node-wise drift.  The
    stopping rule and the returned value both use Cesaro window averages of
    the min/max drift (window = trailing half of the history), which also
    covers the eventually-periodic regimes of min-plus iteration.  Extra
    refinement periods sharpen the average after the gap closes."""
    grid = engine.grid
    state = np.zeros((grid.nt, grid.n_space))
    lows, highs = [], []
    gap = np.inf
    for period in range(1, max_periods + 1):
        new = engine.period_pass_backward(state)
        drift = new - state
        lows.append(float(drift.min()))
        highs.append(float(drift.max()))
        state = new
        w = max(1, (period + 1) // 2)
        c_low = float(np.mean(lows[-w:]))
        c_high = float(np.mean(highs[-w:]))
        gap = c_high - c_low
        if period >= 3 and gap <= tol_alpha:
            break
    else:
        raise NotConverged(
            f"drift gap {gap:.3e} > tol_alpha {tol_alpha:g} after {max_periods} periods")
    mids = []
    for _ in range(refine_periods):
        new = engine.period_pass_backward(state)
        drift = new - state
        mids.append(0.5 * (float(drift.min()) + float(drift.max())))
        state = new
    alpha0 = -float(np.mean(mids))
    return CriticalValueResult(alpha0=alpha0, gap=gap, periods=period, state=state)


@dataclass
class WeakKAMPair:
    u_plus: ValueField
    u_minus: ValueField
    alpha0: float
    backward_residual: float
    forward_residual: float

    @property
    def difference(self):
        return self.u_minus.data - self.u_plus.data


def weak_kam_pair(engine: LaxOleinikEngine, alpha0, tol=1e-10, max_periods=4000,
                  aubry_mask=None, warm_start=None, plateau_patience=40):
    """Backward / forward fixed points of the alpha0-shifted period maps.

    u_minus is iterated from zero (or a warm start); u_plus is the forward
    evolution of u_minus, which decreases monotonically to the conjugate
    solution, so u_plus <= u_minus holds by construction.  Iterations stop at
    sup-change <= tol or when the change plateaus (residual reported).  The
    pair is normalized so min over the Aubry estimate (all nodes when no mask
    is given: the minimum of u_minus - u_plus is attained there) is zero."""
    grid = engine.grid
    shift = alpha0 * grid.dt

    def iterate(state, sweep):
        deltas = []
        for period in range(1, max_periods + 1):
            new = sweep(state, shift)
            delta = float(np.max(np.abs(new - state)))
            state = new
            deltas.append(delta)
            if delta <= tol:
                return state, delta
            if len(deltas) > plateau_patience:
                tail = deltas[-plateau_patience:]
                if max(tail) - min(tail) <= 0.01 * max(tail[-1], 1e-300):
                    return state, delta
        raise NotConverged(f"fixed-point sweep stalled at residual {deltas[-1]:.3e}")

    start = np.zeros((grid.nt, grid.n_space)) if warm_start is None else warm_start.copy()
    u_minus, res_b = iterate(start, engine.period_pass_backward)
    u_minus = u_minus - u_minus.min()
    u_plus, res_f = iterate(u_minus.copy(), engine.period_pass_forward)
    diff = u_minus - u_plus
    if aubry_mask is not None:
        offset = float(diff[aubry_mask].min())
    else:
        offset = float(diff.min())
    u_plus = u_plus + offset
    return WeakKAMPair(
        u_plus=ValueField(u_plus, grid),
        u_minus=ValueField(u_minus, grid),
        alpha0=alpha0,
        backward_residual=res_b,
        forward_residual=res_f,
    )


def domination_residual(engine: LaxOleinikEngine, state, alpha0):
    """Max violation of the one-step domination inequality
    u(y, t+dt) - u(x, t) <= A(x, y, t) + alpha0 * dt over all feasible steps."""
    worst = -np.inf
    nt = engine.grid.nt
    shift = alpha0 * engine.grid.dt
    for k in range(nt):
        bound = engine.step_backward(state[k], k) + shift
        worst = max(worst, float(np.max(state[(k + 1) % nt] - bound)))
    return worst
