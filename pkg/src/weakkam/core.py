"""Time-periodic Lagrangian systems on flat tori, and the periodic grids they
are sampled on.

All built-in systems have quadratic kinetic energy,

    L(x, v, t) = |v|^2 / 2 - V(x, t) - c.v - a,

with V a trigonometric polynomial (or a gridded perturbation of one), c a
constant spatial tilt and a a constant shift.  For this family the Legendre
transform is exact:  p = v - c  and  H(x, p, t) = |p + c|^2 / 2 + V + a.
Positions live on the d-torus (d = 1 or 2), time on the unit circle, and all
coordinates are 1-periodic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import VelocityEscape

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# trigonometric polynomials on T^d x T
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrigPolynomial:
    """const + sum_j a_j cos(2 pi theta_j) + b_j sin(2 pi theta_j) with
    theta_j = k_j . x + m_j t.  `modes` has one row (k_1..k_d, m) per term."""

    modes: np.ndarray        # (n_terms, d+1) integers
    cos_coeffs: np.ndarray   # (n_terms,)
    sin_coeffs: np.ndarray   # (n_terms,)
    constant: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "modes", np.atleast_2d(np.asarray(self.modes, dtype=np.int64)))
        object.__setattr__(self, "cos_coeffs", np.asarray(self.cos_coeffs, dtype=float))
        object.__setattr__(self, "sin_coeffs", np.asarray(self.sin_coeffs, dtype=float))

    @property
    def dim(self):
        return self.modes.shape[1] - 1

    def _phases(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        k = self.modes[:, :-1]
        m = self.modes[:, -1]
        # phase shape: x-batch shape + (n_terms,)
        return TWO_PI * (x @ k.T + np.expand_dims(t, -1) * m)

    def value(self, x, t):
        th = self._phases(x, t)
        return (np.cos(th) @ self.cos_coeffs + np.sin(th) @ self.sin_coeffs
                + self.constant)

    def grad_x(self, x, t):
        th = self._phases(x, t)
        k = self.modes[:, :-1].astype(float)
        w = -np.sin(th) * self.cos_coeffs + np.cos(th) * self.sin_coeffs
        return TWO_PI * (w @ k)

    def grad_t(self, x, t):
        th = self._phases(x, t)
        m = self.modes[:, -1].astype(float)
        w = -np.sin(th) * self.cos_coeffs + np.cos(th) * self.sin_coeffs
        return TWO_PI * (w @ m)


def zero_polynomial(dim):
    return TrigPolynomial(np.zeros((1, dim + 1), dtype=np.int64), [0.0], [0.0], 0.0)


def pendulum_potential():
    """V(x,t) = (cos 2 pi x - 1)(1 + sin(2 pi t)/2), expanded in harmonics.

    Nonpositive, vanishing exactly on {x = 0}; the invariant curve
    (x, v) = (0, 0) carries zero action."""
    modes = [(1, 0), (1, 1), (1, -1), (0, 1)]
    cos_c = [1.0, 0.0, 0.0, 0.0]
    sin_c = [0.0, 0.25, -0.25, -0.5]
    return TrigPolynomial(np.array(modes), cos_c, sin_c, constant=-1.0)


@dataclass(frozen=True)
class GriddedPotential:
    """A potential sampled on a space-time grid, evaluated off-node by
    periodic multilinear interpolation (space and time)."""

    values: np.ndarray       # (nt, NX)
    grid: "SpaceTimeGrid"

    def value(self, x, t):
        return self.grid.interpolate_spacetime(self.values, x, t)

    def grad_x(self, x, t):
        # centered differences of the node field, then interpolated
        g = np.empty((self.grid.dim,) + self.values.shape)
        for ax in range(self.grid.dim):
            up = self.grid.shift_index(1, ax)
            dn = self.grid.shift_index(-1, ax)
            g[ax] = (self.values[:, up] - self.values[:, dn]) / (2 * self.grid.dx)
        out = [self.grid.interpolate_spacetime(g[ax], x, t) for ax in range(self.grid.dim)]
        return np.stack(out, axis=-1)


@dataclass(frozen=True)
class SumPotential:
    parts: tuple

    def value(self, x, t):
        return sum(p.value(x, t) for p in self.parts)

    def grad_x(self, x, t):
        return sum(p.grad_x(x, t) for p in self.parts)


# ---------------------------------------------------------------------------
# the space-time grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform periodic grid on T^d x T plus a truncated velocity box.

    nx nodes per spatial axis (spacing dx = 1/nx), nt time slices per period
    (dt = 1/nt), nv velocity nodes per axis spanning [-v_max, v_max].  One
    time step must be able to cross at least one spatial cell:
    dt * v_max >= dx."""

    dim: int
    nx: int
    nt: int
    nv: int
    v_max: float = 4.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.nt < 2 or self.nx < 4 or self.nv < 3:
            raise ValueError("grid too small: need nt >= 2, nx >= 4, nv >= 3")
        if self.dt * self.v_max < self.dx - 1e-12:
            raise ValueError("dt * v_max < dx: one step cannot cross a cell")

    @property
    def dx(self):
        return 1.0 / self.nx

    @property
    def dt(self):
        return 1.0 / self.nt

    @property
    def dv(self):
        return 2.0 * self.v_max / (self.nv - 1)

    @property
    def n_space(self):
        return self.nx ** self.dim

    @property
    def n_vel(self):
        return self.nv ** self.dim

    # --- node coordinates ---------------------------------------------------

    def x_coords(self):
        """(n_space, dim) array of node positions, row-major over axes."""
        axes = [np.arange(self.nx) * self.dx] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def v_coords(self):
        """(n_vel, dim) array of velocity nodes."""
        ax = np.linspace(-self.v_max, self.v_max, self.nv)
        mesh = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def t_coords(self):
        return np.arange(self.nt) * self.dt

    def space_index(self, cells):
        """Flat node index from per-axis integer cells (wrapped)."""
        cells = np.asarray(cells)
        idx = np.zeros(cells.shape[:-1], dtype=np.int64)
        for ax in range(self.dim):
            idx = idx * self.nx + np.mod(cells[..., ax], self.nx)
        return idx

    def space_cells(self, index):
        """Inverse of space_index: (..., dim) integer cells."""
        index = np.asarray(index)
        out = np.empty(index.shape + (self.dim,), dtype=np.int64)
        for ax in range(self.dim - 1, -1, -1):
            out[..., ax] = index % self.nx
            index = index // self.nx
        return out

    def shift_index(self, cells_offset, axis=None):
        """Permutation of flat node indices shifting by integer cells.

        With axis=None, cells_offset is a dim-vector; otherwise a scalar
        offset along one axis."""
        if axis is not None:
            off = np.zeros(self.dim, dtype=np.int64)
            off[axis] = cells_offset
        else:
            off = np.asarray(cells_offset, dtype=np.int64)
        cells = self.space_cells(np.arange(self.n_space))
        return self.space_index(cells + off)

    # --- interpolation --------------------------------------------------------

    def interpolate_slice(self, values, x):
        """Periodic multilinear interpolation of a node field (n_space,) at
        positions x with shape (..., dim)."""
        values = np.asarray(values)
        x = np.asarray(x, dtype=float)
        scaled = x * self.nx
        base = np.floor(scaled).astype(np.int64)
        frac = scaled - base
        out = 0.0
        for corner in itertools.product((0, 1), repeat=self.dim):
            w = 1.0
            for ax, c in enumerate(corner):
                w = w * (frac[..., ax] if c else 1.0 - frac[..., ax])
            idx = self.space_index(base + np.array(corner))
            out = out + w * values[idx]
        return out

    def interpolate_spacetime(self, values, x, t):
        """Multilinear in space and linear-periodic in time; values (nt, n_space)."""
        t = np.asarray(t, dtype=float)
        s = np.mod(t, 1.0) * self.nt
        i0 = np.floor(s).astype(np.int64) % self.nt
        lam = s - np.floor(s)
        i1 = (i0 + 1) % self.nt
        v0 = self._interp_time_slice(values, i0, x)
        v1 = self._interp_time_slice(values, i1, x)
        return (1.0 - lam) * v0 + lam * v1

    def _interp_time_slice(self, values, i, x):
        i = np.asarray(i)
        if i.ndim == 0:
            return self.interpolate_slice(values[int(i)], x)
        out = np.empty(i.shape, dtype=float)
        for slice_idx in np.unique(i):
            sel = i == slice_idx
            out[sel] = self.interpolate_slice(values[slice_idx], np.asarray(x)[sel])
        return out

    def periodic_distance(self, a, b):
        """Torus distance between space-time points a=(x..,t), b likewise,
        time axis weighted equally."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        d = np.abs(a - b)
        d = np.minimum(d, 1.0 - d)
        return np.sqrt(np.sum(d * d, axis=-1))


# ---------------------------------------------------------------------------
# value fields
# ---------------------------------------------------------------------------

@dataclass
class ValueField:
    """A scalar function sampled on the space-time grid: data[(it, node)]."""

    data: np.ndarray           # (nt, n_space)
    grid: SpaceTimeGrid

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (self.grid.nt, self.grid.n_space):
            raise ValueError("field shape does not match grid")

    def interpolate(self, x, t_index):
        return self.grid.interpolate_slice(self.data[t_index % self.grid.nt], x)

    def sample(self, x, t):
        return self.grid.interpolate_spacetime(self.data, x, t)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.data)))


def interpolate(field: ValueField, x, t_index):
    """Multilinear periodic interpolation of a value field at a fixed slice."""
    return field.interpolate(x, t_index)


# ---------------------------------------------------------------------------
# Lagrangian systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LagrangianSystem:
    """Quadratic-kinetic time-periodic Lagrangian on T^d.

    L(x,v,t) = |v|^2/2 - V(x,t) - tilt.v - shift.  The fiberwise Hessian in v
    is the identity, so convexity_modulus = 1 for every member of the family.
    """

    dim: int
    potential: object = None          # TrigPolynomial / GriddedPotential / SumPotential / None
    tilt: tuple = None
    shift: float = 0.0
    v_max: float = 4.0
    label: str = "custom"

    def __post_init__(self):
        tilt = np.zeros(self.dim) if self.tilt is None else np.asarray(self.tilt, dtype=float)
        object.__setattr__(self, "tilt", tuple(tilt.tolist()))

    @property
    def tilt_vector(self):
        return np.asarray(self.tilt, dtype=float)

    @property
    def convexity_modulus(self):
        return 1.0

    def potential_value(self, x, t):
        if self.potential is None:
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape[:-1])
        return self.potential.value(x, t)

    def potential_grad(self, x, t):
        if self.potential is None:
            return np.zeros(np.asarray(x, dtype=float).shape)
        return self.potential.grad_x(x, t)

    def lagrangian(self, x, v, t):
        v = np.asarray(v, dtype=float)
        kin = 0.5 * np.sum(v * v, axis=-1)
        return kin - self.potential_value(x, t) - v @ self.tilt_vector - self.shift

    def dLdv(self, x, v, t):
        return np.asarray(v, dtype=float) - self.tilt_vector

    def dLdx(self, x, v, t):
        return -self.potential_grad(x, t)

    def hamiltonian(self, x, p, t):
        p = np.asarray(p, dtype=float)
        q = p + self.tilt_vector
        return 0.5 * np.sum(q * q, axis=-1) + self.potential_value(x, t) + self.shift

    def dHdp(self, x, p, t):
        return np.asarray(p, dtype=float) + self.tilt_vector

    def energy(self, x, v, t):
        """p.v - L, the instantaneous energy (conserved when autonomous)."""
        p = self.dLdv(x, v, t)
        return np.sum(p * np.asarray(v, dtype=float), axis=-1) - self.lagrangian(x, v, t)

    # --- derived systems -----------------------------------------------------

    def tilted(self, c):
        """L - c.v: the cohomology tilt used for the alpha function."""
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return replace(self, tilt=tuple(self.tilt_vector + c),
                       label=f"{self.label}+tilt")

    def shifted(self, a):
        """L - a (constant shift; moves the critical value by +a)."""
        return replace(self, shift=self.shift + a, label=self.label)

    def perturbed(self, w_potential):
        """L - W: subtract a nonnegative space-time potential W (adds it to V)."""
        if self.potential is None:
            pot = w_potential
        else:
            pot = SumPotential((self.potential, w_potential))
        return replace(self, potential=pot, label=f"{self.label}-W")

    # --- witnesses ------------------------------------------------------------

    def superlinearity_witness(self, grid, threshold=0.5):
        """min over boundary-speed samples of L/|v| at |v| = v_max."""
        xs = grid.x_coords()
        ts = grid.t_coords()
        worst = np.inf
        for ax in range(self.dim):
            for sgn in (-1.0, 1.0):
                v = np.zeros((1, self.dim))
                v[0, ax] = sgn * self.v_max
                speed = np.abs(sgn * self.v_max)
                for t in ts:
                    vals = self.lagrangian(xs, np.broadcast_to(v, xs.shape), t)
                    worst = min(worst, float(np.min(vals)) / speed)
        return worst


def free_system(dim=1, v_max=4.0):
    """L = |v|^2/2 on T^d: the flat system, exactly solvable."""
    return LagrangianSystem(dim=dim, potential=None, v_max=v_max, label="free")


def pendulum_system(v_max=4.0):
    """Mechanical time-periodic system with V = (cos 2 pi x - 1)(1 + sin(2 pi t)/2)."""
    return LagrangianSystem(dim=1, potential=pendulum_potential(), v_max=v_max,
                            label="pendulum")


def mechanical_system(potential: TrigPolynomial, v_max=4.0, label="mechanical"):
    return LagrangianSystem(dim=potential.dim, potential=potential, v_max=v_max,
                            label=label)


# ---------------------------------------------------------------------------
# Legendre transform and the Euler-Lagrange flow
# ---------------------------------------------------------------------------

def legendre(system: LagrangianSystem, x, v, t):
    """Fiberwise Legendre transform: returns (p, h) with p = dL/dv and
    h = p.v - L(x,v,t) = H(x,p,t).  Total on |v| <= v_max."""
    v = np.asarray(v, dtype=float)
    if np.any(np.abs(v) > system.v_max + 1e-12):
        raise ValueError("velocity outside the working box")
    p = system.dLdv(x, v, t)
    h = np.sum(p * v, axis=-1) - system.lagrangian(x, v, t)
    return p, h


def euler_lagrange_step(system: LagrangianSystem, state, dt):
    """One classical 4th-order step of the Euler-Lagrange flow.

    state = (x, v, t) with x on the torus.  Raises VelocityEscape when the
    step leaves the velocity box."""
    x, v, t = state
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))

    def acc(xx, tt):
        return system.dLdx(xx, v, tt)   # dLdv = v - c, so dv/dt = dLdx

    k1x, k1v = v, acc(x, t)
    k2x, k2v = v + 0.5 * dt * k1v, acc(x + 0.5 * dt * k1x, t + 0.5 * dt)
    k3x, k3v = v + 0.5 * dt * k2v, acc(x + 0.5 * dt * k2x, t + 0.5 * dt)
    k4x, k4v = v + dt * k3v, acc(x + dt * k3x, t + dt)
    x_new = np.mod(x + (dt / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x), 1.0)
    v_new = v + (dt / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
    t_new = (t + dt) % 1.0
    if np.any(np.abs(v_new) > system.v_max + 1e-12):
        raise VelocityEscape(
            f"|v| = {float(np.max(np.abs(v_new))):.3f} exceeds v_max = {system.v_max}")
    return x_new, v_new, t_new


def flow(system: LagrangianSystem, state, total_time, substep):
    """Chain euler_lagrange_step over total_time with fixed substep."""
    n = int(round(total_time / substep))
    if abs(n * substep - total_time) > 1e-9:
        raise ValueError("total_time must be a multiple of substep")
    for _ in range(n):
        state = euler_lagrange_step(system, state, substep)
    return state


def orbit_samples(system, grid, x0, v0, t0, n_periods, samples_per_step=1):
    """Sample an EL orbit at every grid time step (or finer) over n_periods.

    Returns (positions (N, d) unwrapped lifts, velocities (N, d), times (N,)).
    Integration substep is dt/8 per the engine convention."""
    sub = grid.dt / 8.0
    per_sample = 8 // samples_per_step
    if per_sample * samples_per_step != 8:
        raise ValueError("samples_per_step must divide 8")
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    v = np.atleast_1d(np.asarray(v0, dtype=float))
    t = float(t0)
    lift = x.copy()
    xs, vs, ts = [lift.copy()], [v.copy()], [t]
    n_steps = n_periods * grid.nt * samples_per_step
    for _ in range(n_steps):
        for _ in range(per_sample):
            x_prev = x
            x, v, t = euler_lagrange_step(system, (x, v, t), sub)
            jump = x - x_prev
            jump -= np.round(jump)
            lift = lift + jump
        xs.append(lift.copy())
        vs.append(v.copy())
        ts.append(ts[-1] + grid.dt / samples_per_step)
    return np.array(xs), np.array(vs), np.array(ts)


# ---------------------------------------------------------------------------
# closed one-forms on T^d x T
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OneForm:
    """A closed one-form omega_x dx + omega_t dt with declared cohomology
    class (c, tau).  Components are callables of (x, t)."""

    dim: int
    omega_x: object            # (x, t) -> (..., dim)
    omega_t: object            # (x, t) -> (...,)
    cohomology: tuple          # (c: tuple, tau: float)

    @property
    def spatial_class(self):
        return np.asarray(self.cohomology[0], dtype=float)

    @property
    def time_class(self):
        return float(self.cohomology[1])

    def pair(self, x, v, t):
        """omega paired with (v, 1)."""
        wx = self.omega_x(x, t)
        wt = self.omega_t(x, t)
        return np.sum(wx * np.asarray(v, dtype=float), axis=-1) + wt

    def __add__(self, other):
        if self.dim != other.dim:
            raise ValueError("dimension mismatch")
        c = tuple(self.spatial_class + other.spatial_class)
        tau = self.time_class + other.time_class

        def wx(x, t, a=self.omega_x, b=other.omega_x):
            return a(x, t) + b(x, t)

        def wt(x, t, a=self.omega_t, b=other.omega_t):
            return a(x, t) + b(x, t)

        return OneForm(self.dim, wx, wt, (c, tau))

    def scaled(self, s):
        c = tuple(s * self.spatial_class)

        def wx(x, t, a=self.omega_x, s=s):
            return s * a(x, t)

        def wt(x, t, a=self.omega_t, s=s):
            return s * a(x, t)

        return OneForm(self.dim, wx, wt, (c, s * self.time_class))


def constant_form(c, tau=0.0):
    """The translation-invariant representative c.dx + tau dt."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    dim = c.shape[0]

    def wx(x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(c, x.shape).copy()

    def wt(x, t):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], tau)

    return OneForm(dim, wx, wt, (tuple(c.tolist()), float(tau)))


def exact_form(f: TrigPolynomial):
    """df for a trigonometric polynomial f; cohomology class (0, 0)."""
    dim = f.dim

    def wx(x, t):
        return f.grad_x(x, t)

    def wt(x, t):
        return f.grad_t(x, t)

    return OneForm(dim, wx, wt, (tuple([0.0] * dim), 0.0))


def bump_form(center, width, height, dim=1, axis=0):
    """b(x_axis) dx_axis with b a smooth compactly supported bump on
    |x - center| <= width/2 (periodic distance).  The declared spatial class
    is the bump's integral, computed once by dense quadrature; the bump is
    C-infinity, so periodic trapezoid sums reproduce it to machine accuracy."""

    def profile(s):
        d = np.abs(np.mod(s - center + 0.5, 1.0) - 0.5)
        u = np.clip(2.0 * d / width, 0.0, 1.0)
        return height * (1.0 - u * u) ** 8

    def wx(x, t):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        out[..., axis] = profile(x[..., axis])
        return out

    def wt(x, t):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    s = np.arange(1 << 18) / float(1 << 18)
    c = [0.0] * dim
    c[axis] = float(np.mean(profile(s)))
    return OneForm(dim, wx, wt, (tuple(c), 0.0))


def closedness_defect_grid(form: OneForm, grid: SpaceTimeGrid):
    """Max exterior-derivative defect estimated by centered differences."""
    xs = grid.x_coords()
    ts = grid.t_coords()
    wx = np.array([form.omega_x(xs, t) for t in ts])       # (nt, NX, dim)
    wt = np.array([form.omega_t(xs, t) for t in ts])       # (nt, NX)
    defect = 0.0
    # d/dt omega_x - d/dx omega_t
    dwx_dt = (np.roll(wx, -1, axis=0) - np.roll(wx, 1, axis=0)) / (2 * grid.dt)
    for ax in range(grid.dim):
        up = grid.shift_index(1, ax)
        dn = grid.shift_index(-1, ax)
        dwt_dx = (wt[:, up] - wt[:, dn]) / (2 * grid.dx)
        defect = max(defect, float(np.max(np.abs(dwx_dt[:, :, ax] - dwt_dx))))
    if grid.dim == 2:
        up0, dn0 = grid.shift_index(1, 0), grid.shift_index(-1, 0)
        up1, dn1 = grid.shift_index(1, 1), grid.shift_index(-1, 1)
        curl = ((wx[:, up0, 1] - wx[:, dn0, 1]) - (wx[:, up1, 0] - wx[:, dn1, 0])) / (2 * grid.dx)
        defect = max(defect, float(np.max(np.abs(curl))))
    return defect


def loop_integrals(form: OneForm, grid: SpaceTimeGrid):
    """Cohomology readout: trapezoid quadrature of the form along each
    coordinate loop and the time loop (averaged over transverse phases)."""
    c_est = np.zeros(grid.dim)
    ts = grid.t_coords()
    for ax in range(grid.dim):
        s = np.arange(grid.nx) * grid.dx
        x = np.zeros((grid.nx, grid.dim))
        x[:, ax] = s
        # average the loop integral over time phases for robustness
        vals = np.array([form.omega_x(x, t)[:, ax] for t in ts])
        c_est[ax] = float(np.mean(vals))
    x0 = np.zeros((1, grid.dim))
    tau_est = float(np.mean([form.omega_t(x0, t)[0] for t in ts]))
    return c_est, tau_est
