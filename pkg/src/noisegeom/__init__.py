"""Noise geometry of SGD on interpolating regression models.

The package measures how minibatch gradient noise aligns with the loss
landscape (alignment ratios mu and g, eigen-direction spectra), simulates
escape from sharp minima under SGD and GD, and provides a CLI harness for
reproducible experiments.
"""

__version__ = "0.1.0"

from . import datagen, dynamics, escape, geometry, linalg, models, presets, verify
from .datagen import (CovarianceSpec, Dataset, Teacher, diagonal_spec,
                      effective_input_dim, effective_rank, explicit_spec,
                      isotropic_spec, linear_teacher, load_dataset,
                      model_teacher, power_law_spec, sample_dataset,
                      save_dataset, spec_eigenvalues, zero_teacher)
from .dynamics import (CLRToyTrace, LRSchedule, OptimizerConfig, Trajectory,
                       clr_toy_run, constant_schedule, cyclical_schedule,
                       gd_step, lr_at, run, sgd_step)
from .errors import (CapacityError, ConvergenceError, NumericalError,
                     UnsupportedFamilyError, ValidationError)
from .escape import (AlignmentConstants, ComponentDynamicsReport, EscapeBound,
                     EscapeTrace, SpectrumSpec, SubspaceTrace,
                     component_dynamics_check, estimate_alignment_constants,
                     flat_tail_spectrum, gd_escape_analytic,
                     linearized_sgd_escape, nonlinear_escape_track,
                     sgd_escape_lr, spectrum_spec, surrogate_sgd_escape,
                     theorem51_bound)
from .geometry import (AlignmentReport, DirectionalReport, EigenAlignment,
                       LossState, OneStepLoss, PopulationCheck,
                       directional_alignment_g, eigen_alignment,
                       expected_one_step_loss, fisher_apply, fisher_matrix,
                       fisher_operator, loss_alignment_mu, loss_state,
                       mc_apply, mc_operator, noise_covariance,
                       population_identity_check, sigma1_apply)
from .linalg import (LinearOperator, RngStream, SpectralDecomposition,
                     as_generator, check_symmetric, diagonal_operator,
                     gaussian_vector, lanczos_topk, matrix_operator,
                     sym_eig_dense)
from .models import (Model, deep_linear_model, diag_linear_model,
                     linear_model, two_layer_model)
from .presets import PRESET_NAMES, ExperimentConfig, preset, resolve_blocks
from .verify import (THEOREM_IDS, VerificationReport, default_eps,
                     mu_envelope, report_passes, verify_theorem)
