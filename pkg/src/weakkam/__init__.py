"""weakkam: numerical weak KAM / Aubry-Mather toolkit for time-periodic
Lagrangian systems on flat tori."""

__version__ = "0.1.0"

from .core import (
    LagrangianSystem,
    OneForm,
    SpaceTimeGrid,
    TrigPolynomial,
    ValueField,
    constant_form,
    euler_lagrange_step,
    free_system,
    interpolate,
    legendre,
    mechanical_system,
    pendulum_system,
)
