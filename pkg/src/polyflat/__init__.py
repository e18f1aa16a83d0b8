"""polyflat: numerical laboratory for high-order elliptic Dirichlet problems
on rough domains — generators, difference-calculus assembly, CG solves, and
decay/Hölder measurements."""

from .multiindex import MultiIndex, enumerate_indices, factorial_weight, leibniz_coeff
from .operators import (Decomposition, EllipticOperator, NonEllipticError, apply_symbol,
                        decompose, ellipticity_constant, polyharmonic)
from .geometry import (DomainError, FlatnessReport, GridDomain, ball_domain, boundary_points,
                       box_domain, cone_domain, half_space_ball, koch_domain, load_domain,
                       measure_flatness, save_domain)
from .discretize import (AssemblyError, DiscreteSystem, GridFunction, assemble, energy_local,
                         forward_difference, grad_m, iterated_difference, load_grid_function,
                         save_grid_function)
from .solve import (ReplacementResult, SolveReport, SolverError, polyharmonic_replacement,
                    solve_dirichlet)
from .analyze import (DecayReport, HolderReport, campanato_seminorm, check_difference_bound,
                      check_poincare_halfball, check_vertical_poincare, decay_profile,
                      holder_exponent)

__version__ = "0.1.0"
