"""Gradient descent on multiscale objectives: chaos, invariant laws and escape."""
from .chaos import (bifurcation_scan, chaos_threshold, coupling_rate, escape_scan,
                    find_period3, lyapunov, modified_eq_terms)
from .dynamics import (Ensemble, MapSpec, Orbit, evolve_ensemble, gd_step, heavy_ball_step,
                       iterate, nag_sc_step, stochastic_step)
from .errors import (CatalogError, ChaoticGDError, ConfigError, DivergenceError, DomainError,
                     UnsupportedError)
from .objective import (MacroFunction, MicroScale, MultiscaleObjective, NoiseModel,
                        catalog_macro, catalog_micro, grad_check, m_constant, make_objective)
from .stats import (gaussian_approx, gibbs_density, gibbs_sample, grad_second_moment,
                    invariance_residual, ks_distance, make_histogram, sliced_w1,
                    w1_distance_1d, w2_distance_1d)

__version__ = "0.1.0"
