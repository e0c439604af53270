"""Correlated-noise toolkit for differentially private prefix-sum release.

Subpackages by function:

- ``blt_core``: buffered linear Toeplitz (BLT) strategy matrices, the
  inverse pairing, and O(d*m)-memory streaming multiplication by C and C^-1.
- ``participation``: min-separation participation schemas and sensitivity
  (fast Toeplitz path, dense lower bound, brute-force oracle).
- ``loss_metrics``: MaxError/RmsError and MaxLoss/RmsLoss functionals.
- ``tree_baseline``: binary-tree aggregation baseline with full
  pseudoinverse decoding; external strategy-matrix I/O.
- ``blt_optimizer``: differentiable loss and L-BFGS driver that fits BLT
  parameters to a schema and objective.
- ``accountant``: Gaussian-mechanism zCDP and zCDP -> (epsilon, delta).
- ``ftrl_sim``: desk-scale DP federated-averaging simulator.
- ``cli``: batch entry points (optimize, eval, sweep, noisegen, account,
  simulate, bench-inverse).
"""

from corrnoise.blt_core import (
    BltParams,
    blt_coefs,
    blt_inverse_coefs,
    calc_output_scale,
    inverse_blt_params,
    toeplitz_inverse_coefs,
    stream_mult,
    stream_mult_inverse,
    make_noise_generator,
)
from corrnoise.ftrl_sim import (
    ClientPopulation,
    TrainConfig,
    StarvationError,
    make_population,
    run_training,
)
from corrnoise.participation import (
    ParticipationSchema,
    worst_case_pattern,
    toeplitz_sensitivity,
    matrix_sensitivity_lower_bound,
    enumerate_patterns,
    exact_sensitivity_bruteforce,
)
from corrnoise.loss_metrics import (
    MechanismLoss,
    toeplitz_error,
    dense_error,
    mechanism_loss,
    blt_mechanism_loss,
)
from corrnoise.tree_baseline import build_tree_matrix, full_decoder, eval_tree
from corrnoise.blt_optimizer import OptimizerConfig, optimize_blt, blt_loss
from corrnoise.accountant import zcdp_of, eps_of_zcdp

__all__ = [
    "BltParams",
    "blt_coefs",
    "blt_inverse_coefs",
    "calc_output_scale",
    "inverse_blt_params",
    "toeplitz_inverse_coefs",
    "stream_mult",
    "stream_mult_inverse",
    "make_noise_generator",
    "ParticipationSchema",
    "worst_case_pattern",
    "toeplitz_sensitivity",
    "matrix_sensitivity_lower_bound",
    "enumerate_patterns",
    "exact_sensitivity_bruteforce",
    "MechanismLoss",
    "toeplitz_error",
    "dense_error",
    "mechanism_loss",
    "blt_mechanism_loss",
    "build_tree_matrix",
    "full_decoder",
    "eval_tree",
    "OptimizerConfig",
    "optimize_blt",
    "blt_loss",
    "zcdp_of",
    "eps_of_zcdp",
    "ClientPopulation",
    "TrainConfig",
    "StarvationError",
    "make_population",
    "run_training",
]

__version__ = "0.1.0"
