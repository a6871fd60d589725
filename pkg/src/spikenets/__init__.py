"""Sparse directed interaction networks from binary spike-train panels.

Simulates lag-1 autoregressive logistic spike panels with smooth
non-stationary baselines, estimates the interaction matrix by l1-penalized
likelihood with a B-spline trend, and builds per-edge confidence intervals
from a debiased estimator.
"""

__version__ = "0.1.0"

from .basis import (BasisMatrix, BasisSpec, build_design, center_design,
                    empty_basis, eval_basis_row, make_basis_spec)
from .fit import (FitOptions, ModelFit, NeuronFit, bic, fit_network, fit_neuron,
                  inv_logit, lambda_max, neg_loglik, select_lambda, soft_threshold)
from .infer import (CIMatrix, DesparsifiedFit, confidence_intervals, desparsify,
                    fisher_gamma, relaxed_inverse, score_gamma, significance_filter)
from .metrics import EvalReport, auc_support, coverage_stats, mse_vector, rmse_gamma
from .netsim import (NetworkSpec, SpikePanel, TrendCurve, gen_chain, gen_erdos_renyi,
                     gen_sbm, simulate_bapla, trend_curve)
