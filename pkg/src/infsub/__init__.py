"""Influence-driven subsampling for sparse L2-regularized logistic regression.

Layers, bottom up: ``data`` (libsvm ingestion, splits, label noise),
``model`` (the classifier and its Hessian-free curvature ops), ``influence``
(per-sample influence via preconditioned conjugate-gradient solves),
``sampling`` (influence-to-probability maps and stratified subset draws),
``risk`` (worst-case risk and robustness diagnostics), ``experiment`` and
``cli`` (the train/validate/test harness).
"""

from .data import (DataError, SparseDataset, SplitSpec, flip_labels,
                   load_libsvm, parse_libsvm, split, write_libsvm)
from .influence import (ConvergenceError, InfluenceReport, PcgConfig, PcgInfo,
                        compute_phi, compute_psi_norms, inverse_hvp_pcg)
# model.risk stays namespaced to avoid shadowing the risk module.
from .model import (ModelError, ModelParams, accuracy, gradient, hessian_diag,
                    hvp, load_params, mean_logloss, per_sample_loss,
                    predict_proba, save_params, train)
from .risk import (RobustnessReport, cov_phi_eps, evaluate_robustness,
                   gamma_shift, worst_case_curve, worst_case_risk)
from .sampling import (SamplingError, SamplingPlan, draw_subset, dropout_probs,
                       linear_probs, optlr_probs, random_probs, sigmoid_probs,
                       subset_risk_weighted)

__version__ = "0.1.0"
