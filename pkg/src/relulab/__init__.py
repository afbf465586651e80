"""Gradient-flow laboratory for bias-free (leaky) ReLU and linear networks."""
from .analysis import (EquivalenceReport, StructureReport, count_loss_drops, equivalence_report,
                       fit_exponential_rate, loss_superposition, plateau_duration, structure_report)
from .datasets import (Dataset, DataStats, check_symmetry, compute_stats, halfspace_stats,
                       load_dataset, make_named, make_symmetric_gaussian, save_dataset,
                       symmetrize, whiten)
from .dynamics import (TrainConfig, Trajectory, integrate_deep_linear, integrate_deep_reduced_relu,
                       integrate_linear, integrate_ortho_norm, integrate_reduced_two_layer,
                       monitor_norm_bound, train)
from .model import (ForwardTrace, NetworkParams, forward, gradients, init_conjecture_form,
                    init_gaussian, init_rank1_balanced, loss_and_gradients, predict)
from .numkit import gaussian_matrix, make_rng, matmul, singular_values
from .theory import (ClosedFormSpec, closed_form_spec, closed_form_w, decompose_two_layer, depth_sep_g,
                     early_phase_spec, early_phase_weights, logistic_linear_solution, max_margin,
                     max_margin_solution, ols_solution)

__version__ = "0.1.0"
