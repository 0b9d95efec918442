"""The closed-measure route to the critical value.

A discrete measure puts nonnegative weights on (x, v, t) grid nodes.  It is
closed (relative to a finite test-function basis) when it pairs to zero with
df(x,t).(v,1) for every basis element f; the critical value is read off a
linear program minimizing int (L - omega) d mu over the discrete closed
probability cone.  Truncating the basis relaxes the constraint set, so the
LP value is a lower bound for the discrete closed minimum; refinement in the
basis cutoff never decreases it.

Node ordering everywhere: flat index = (it * NX + ix) * NV + iv, i.e.
time-major, then space, then velocity (C order of an (nt, NX, NV) array).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LagrangianSystem, OneForm, SpaceTimeGrid, TrigPolynomial, TWO_PI
from .core import euler_lagrange_step
from .errors import VelocityEscape
from .simplex import SimplexResult, solve_standard_form


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunctionBasis:
    """Trigonometric modes (k, m), |k|_inf <= k_max, |m| <= m_max, excluding
    the zero mode; each mode contributes a cosine and a sine test function.
    Gradients are analytic."""

    dim: int
    k_max: int
    m_max: int

    @property
    def modes(self):
        out = []
        rng = range(-self.k_max, self.k_max + 1)
        rng_m = range(-self.m_max, self.m_max + 1)
        for k in np.ndindex(*((2 * self.k_max + 1,) * self.dim)):
            kv = tuple(np.array(k) - self.k_max)
            for m in rng_m:
                if all(c == 0 for c in kv) and m == 0:
                    continue
                out.append(kv + (m,))
        return sorted(out)

    def functions(self):
        """All test functions as TrigPolynomials, cosine then sine per mode."""
        out = []
        for mode in self.modes:
            row = np.array([mode])
            out.append(TrigPolynomial(row, [1.0], [0.0]))
            out.append(TrigPolynomial(row, [0.0], [1.0]))
        return out

    @property
    def n_rows(self):
        return 1 + 2 * len(self.modes)


# ---------------------------------------------------------------------------
# discrete measures
# ---------------------------------------------------------------------------

@dataclass
class DiscreteMeasure:
    """Nonnegative weights on (t-slice, space node, velocity node) summing
    to one."""

    weights: np.ndarray          # (nt, NX, NV)
    grid: SpaceTimeGrid

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        expected = (self.grid.nt, self.grid.n_space, self.grid.n_vel)
        if self.weights.shape != expected:
            raise ValueError(f"weights shape {self.weights.shape} != {expected}")

    @property
    def total_mass(self):
        return float(self.weights.sum())

    def support(self, tol=1e-15):
        """Indices (it, ix, iv) carrying weight above tol."""
        return np.argwhere(self.weights > tol)

    def expectation(self, node_values):
        return float(np.sum(self.weights * node_values))


def uniform_rest_measure(grid: SpaceTimeGrid):
    """Uniform over space and time, Dirac at v = 0: closed for every
    trigonometric basis (full lattice character sums vanish)."""
    w = np.zeros((grid.nt, grid.n_space, grid.n_vel))
    v_nodes = grid.v_coords()
    iv0 = int(np.argmin(np.sum(v_nodes * v_nodes, axis=1)))
    w[:, :, iv0] = 1.0 / (grid.nt * grid.n_space)
    return DiscreteMeasure(w, grid)


def closedness_defect(mu: DiscreteMeasure, f: TrigPolynomial):
    """Quadrature of int df(x,t).(v,1) dmu over the grid nodes."""
    grid = mu.grid
    xs = grid.x_coords()
    vs = grid.v_coords()
    total = 0.0
    for it, t in enumerate(grid.t_coords()):
        gx = f.grad_x(xs, t)                    # (NX, d)
        gt = f.grad_t(xs, t)                    # (NX,)
        pair = gx @ vs.T + gt[:, None]          # (NX, NV)
        total += float(np.sum(mu.weights[it] * pair))
    return total


# ---------------------------------------------------------------------------
# the linear program
# ---------------------------------------------------------------------------

@dataclass
class LinearProgram:
    objective: np.ndarray        # (n,)
    equality_rows: np.ndarray    # (m, n)
    rhs: np.ndarray              # (m,)
    grid: SpaceTimeGrid
    row_labels: tuple

    @property
    def variable_count(self):
        return self.objective.shape[0]


def objective_node_values(system: LagrangianSystem, grid: SpaceTimeGrid,
                          omega: OneForm | None):
    """(nt, NX, NV) array of (L - omega)(x, v, t) at the nodes, omega paired
    with (v, 1)."""
    xs = grid.x_coords()
    vs = grid.v_coords()
    kin = 0.5 * np.sum(vs * vs, axis=1)
    tiltv = vs @ system.tilt_vector
    out = np.empty((grid.nt, grid.n_space, grid.n_vel))
    for it, t in enumerate(grid.t_coords()):
        pot = system.potential_value(xs, t)
        lag = kin[None, :] - pot[:, None] - tiltv[None, :] - system.shift
        if omega is not None:
            wx = omega.omega_x(xs, t)            # (NX, d)
            wt = omega.omega_t(xs, t)            # (NX,)
            lag = lag - (wx @ vs.T) - wt[:, None]
        out[it] = lag
    return out


def build_lp(system: LagrangianSystem, grid: SpaceTimeGrid,
             omega: OneForm | None, basis: TestFunctionBasis):
    """Assemble the closed-measure program: mass row first, then a cosine and
    a sine closedness row per basis mode (mode order as listed by the basis).
    The rows may be linearly dependent; the solver tolerates that."""
    n = grid.nt * grid.n_space * grid.n_vel
    obj = objective_node_values(system, grid, omega).ravel()
    modes = basis.modes
    rows = np.empty((1 + 2 * len(modes), n))
    rows[0] = 1.0
    labels = ["mass"]
    xs = grid.x_coords()
    vs = grid.v_coords()
    ts = grid.t_coords()
    for i, mode in enumerate(modes):
        k = np.array(mode[:-1], dtype=float)
        m = float(mode[-1])
        factor = TWO_PI * (vs @ k + m)                         # (NV,)
        theta = TWO_PI * (xs @ k[:, None] + m * ts[None, :])   # (NX, nt) transposed use
        # theta[ix, it]; build (nt, NX, NV) rows
        sin_t = np.sin(theta).T                                # (nt, NX)
        cos_t = np.cos(theta).T
        rows[1 + 2 * i] = (-sin_t[:, :, None] * factor[None, None, :]).ravel()
        rows[2 + 2 * i] = (cos_t[:, :, None] * factor[None, None, :]).ravel()
        labels.append(f"cos({mode})")
        labels.append(f"sin({mode})")
    rhs = np.zeros(rows.shape[0])
    rhs[0] = 1.0
    return LinearProgram(objective=obj, equality_rows=rows, rhs=rhs, grid=grid,
                         row_labels=tuple(labels))


@dataclass
class LPSolution:
    value: float
    measure: DiscreteMeasure
    status: str
    duality_gap: float
    reduced_cost_min: float
    iterations: int
    duals: np.ndarray


def solve_lp(lp: LinearProgram, block=8192):
    """Optimal basic solution by the bounded revised simplex.  The basic
    optimum exposes the minimizer's support (at most one atom per row)."""
    res: SimplexResult = solve_standard_form(lp.objective, lp.equality_rows,
                                             lp.rhs, block=block)
    w = res.x.reshape((lp.grid.nt, lp.grid.n_space, lp.grid.n_vel))
    mu = DiscreteMeasure(w, lp.grid)
    return LPSolution(value=res.value, measure=mu, status=res.status,
                      duality_gap=res.duality_gap,
                      reduced_cost_min=res.reduced_cost_min,
                      iterations=res.iterations, duals=res.duals)


def alpha_from_lp(system: LagrangianSystem, grid: SpaceTimeGrid,
                  omega: OneForm | None, basis: TestFunctionBasis, block=8192):
    """alpha(c) estimate: -(LP value) - tau, tau the time component of the
    representative's cohomology."""
    lp = build_lp(system, grid, omega, basis)
    sol = solve_lp(lp, block=block)
    tau = omega.time_class if omega is not None else 0.0
    return -sol.value - tau, sol


# ---------------------------------------------------------------------------
# rebinning and flow invariance
# ---------------------------------------------------------------------------

def bin_phase_points(grid: SpaceTimeGrid, xs, vs, slice_indices, weights):
    """Multilinear splitting of weighted (x, v) atoms onto the grid at exact
    time slices.  Atoms outside the velocity box raise VelocityEscape."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    if np.any(np.abs(vs) > grid.v_max + 1e-9):
        raise VelocityEscape("an atom left the velocity box during rebinning")
    w = np.zeros((grid.nt, grid.n_space, grid.n_vel))
    d = grid.dim
    x_scaled = np.mod(xs, 1.0) * grid.nx
    x_base = np.floor(x_scaled).astype(np.int64)
    x_frac = x_scaled - x_base
    v_scaled = (np.clip(vs, -grid.v_max, grid.v_max) + grid.v_max) / grid.dv
    v_base = np.floor(v_scaled).astype(np.int64)
    v_base = np.minimum(v_base, grid.nv - 2)
    v_frac = v_scaled - v_base
    for corner in np.ndindex(*((2,) * (2 * d))):
        cx = np.array(corner[:d])
        cv = np.array(corner[d:])
        wt = np.ones(xs.shape[0])
        for ax in range(d):
            wt = wt * (x_frac[:, ax] if cx[ax] else 1.0 - x_frac[:, ax])
            wt = wt * (v_frac[:, ax] if cv[ax] else 1.0 - v_frac[:, ax])
        ix = grid.space_index(x_base + cx)
        iv = np.zeros(xs.shape[0], dtype=np.int64)
        for ax in range(d):
            iv = iv * grid.nv + (v_base[:, ax] + cv[ax])
        np.add.at(w, (slice_indices, ix, iv), wt * weights)
    return w


def invariance_defect(system: LagrangianSystem, grid: SpaceTimeGrid,
                      mu: DiscreteMeasure, dt):
    """Total-variation distance between mu and its one-step Euler-Lagrange
    pushforward, re-binned onto the grid.  dt must be a whole number of grid
    steps; integration substep is dt/8 per step as elsewhere."""
    steps = int(round(dt / grid.dt))
    if abs(steps * grid.dt - dt) > 1e-12 or steps < 1:
        raise ValueError("dt must be a positive multiple of the grid time step")
    support = mu.support()
    xs = grid.x_coords()
    vs_nodes = grid.v_coords()
    new_w = np.zeros_like(mu.weights)
    for it, ix, iv in support:
        x = xs[ix].copy()
        v = vs_nodes[iv].copy()
        t = it * grid.dt
        for _ in range(8 * steps):
            x, v, t = euler_lagrange_step(system, (x, v, t), grid.dt / 8.0)
        new_slice = (it + steps) % grid.nt
        new_w += bin_phase_points(grid, x[None, :], v[None, :],
                                  np.array([new_slice]),
                                  np.array([mu.weights[it, ix, iv]]))
    return 0.5 * float(np.abs(new_w - mu.weights).sum())


def occupation_measure(system: LagrangianSystem, grid: SpaceTimeGrid,
                       x0, v0, t_index, n_periods):
    """Occupation measure of an EL orbit sampled at every grid time step over
    n_periods, re-binned onto the grid (discrete Birkhoff average)."""
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    v = np.atleast_1d(np.asarray(v0, dtype=float)).copy()
    t = t_index * grid.dt
    n_samples = n_periods * grid.nt
    pts_x = np.empty((n_samples, grid.dim))
    pts_v = np.empty((n_samples, grid.dim))
    slices = np.empty(n_samples, dtype=np.int64)
    for s in range(n_samples):
        pts_x[s] = x
        pts_v[s] = v
        slices[s] = (t_index + s) % grid.nt
        for _ in range(8):
            x, v, t = euler_lagrange_step(system, (x, v, t), grid.dt / 8.0)
    w = bin_phase_points(grid, pts_x, pts_v, slices,
                         np.full(n_samples, 1.0 / n_samples))
    return DiscreteMeasure(w, grid)


# ---------------------------------------------------------------------------
# LP text export
# ---------------------------------------------------------------------------

def export_lp_text(lp: LinearProgram, path):
    """Write the program in a plain LP interchange subset (objective,
    equality rows, bounds) for external cross-checking.  Intended for desk
    scale; rows are dense."""
    n = lp.variable_count
    with open(path, "w") as fh:
        fh.write("\\ weakkam closed-measure program\n")
        fh.write("Minimize\n obj:")
        _write_terms(fh, lp.objective)
        fh.write("\nSubject To\n")
        for label, row, rhs in zip(lp.row_labels, lp.equality_rows, lp.rhs):
            fh.write(f" {label.replace(' ', '')}:")
            _write_terms(fh, row)
            fh.write(f" = {rhs:.17g}\n")
        fh.write("Bounds\n")
        for j in range(n):
            fh.write(f" 0 <= w{j}\n")
        fh.write("End\n")


def _write_terms(fh, coeffs):
    parts = []
    for j, cj in enumerate(coeffs):
        if cj == 0.0:
            continue
        sign = "+" if cj >= 0 else "-"
        parts.append(f" {sign} {abs(cj):.17g} w{j}")
    if not parts:
        parts = [" 0 w0"]
    for i, p in enumerate(parts):
        fh.write(p)
        if (i + 1) % 8 == 0:
            fh.write("\n   ")
