from .adjoint import integrate_adjoint_backward, odeint
from .solver import SolverConfig, integrate, integrate_dense
