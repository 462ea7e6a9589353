# Radially symmetric harmonic map heat flow solver
# radial_hmhf/__init__.py
from . import grid
from . import operators
from . import linsolve
from . import stepper
from . import diagnostics

# Export main components
from .grid import Grid, StateVector, TimeGrid, make_grid, make_time_grid, time_grid_from_step
from .operators import TridiagonalOperator, assemble_C, assemble_G, c_alpha, g
from .linsolve import thomas_solve
from .stepper import Scheme, SchemeConfig, Trajectory, evolve
from .diagnostics import blowup_indicator, discrete_energy, energy_trace

__all__ = [
    'Grid',
    'StateVector',
    'TimeGrid',
    'make_grid',
    'make_time_grid',
    'time_grid_from_step',
    'TridiagonalOperator',
    'assemble_C',
    'assemble_G',
    'c_alpha',
    'g',
    'thomas_solve',
    'Scheme',
    'SchemeConfig',
    'Trajectory',
    'evolve',
    'blowup_indicator',
    'discrete_energy',
    'energy_trace',
]
