"""Pseudospectral simulator and statistical laboratory for the stochastic
weakly damped KdV equation on a periodic domain."""

from .spectral import Grid, Field, apply_linear_semigroup, derivative, nonlinear_term
from .noise import (NoiseOperator, ForcingSpec, hs_norm, hs_norm_dx,
                    sample_increment, sample_stochastic_convolution_step,
                    build_forcing)
from .functionals import (FunctionalSample, invariant_I, alpha, agmon_gap,
                          sandwich_check, fit_sandwich_constant, x1_norm)
from .integrator import (NoiseSpec, SimParams, TrajectoryState, InstabilityError,
                         step, integrate, make_rng, write_checkpoint,
                         read_checkpoint)
from .ensemble import (MomentSeries, run_ensemble, energy_balance_residual,
                       moment_bound_check, h1_bound_check, finite_time_sup_check)
from .measures import (EmpiricalMeasure, FellerProbeResult, kb_average, tail_mass,
                       energy_identity_residual, increment_moment,
                       measure_distance, feller_probe)
from .profiles import soliton, gaussian_bump, random_band_limited

__version__ = "0.1.0"
