"""Atomistic thin-plate dynamics and verification of its plate-theory limits.

Simulates Newtonian dynamics of clamped cubic-lattice plates under a scaled
cell/surface interaction energy, extracts the rescaled in-plane and
out-of-plane displacement fields, and checks numerically that they satisfy
the limiting (classical and few-layer) von Karman plate equations in weak
form, both dynamically and for stationary states.
"""

__version__ = "0.1.0"

from .lattice import (CORNERS, Domain, DomainError, LatticeGrid,
                      LatticeParams, NodeField, build_lattice, clamp,
                      reference_deformation)
from .discrete_calculus import (CellGradientField, discrete_adjoint,
                                discrete_gradient, product_rule_check)
from .potentials import (BondForceEngine, CellModel, PairPotential,
                         acceleration, bond_engine, cell_energies,
                         elastic_energy, layer_energy, mass_spring_model,
                         total_energy)
from .quadratic_forms import (CoercivityError, QuadForm, RelaxedForm, dq_rel,
                              hessian_at_identity, induced_plane_form, relax,
                              relaxed_via_submatrix_check)
from .fields import (CellStrain, PlaneField, affine_interpolate_at,
                     cell_rotation, extract_displacements,
                     moment_diagnostics, strain_and_stress)
from .dynamics import (BlowUpError, ConvergenceError, PlaneForcing, SimState,
                       Trajectory, make_initial_data, relax_static, simulate,
                       stable_dt, step)
from .vk_limit import (CHECKER_E3, CORNERS_LOWER_NEG, TestFunction,
                       VkConstants, bvk1, bvk2, dynamic_residuals,
                       static_residuals, strain_terms, test_basis)
