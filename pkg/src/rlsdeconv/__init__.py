"""Matrix-free recurrent least-squares non-blind image deconvolution.

A fixed-point reweighted least-squares driver whose steps are conjugate
gradient solves of adaptive regularized systems, trained end to end by
differentiating implicitly through the linear solver.
"""

from .cg import CgConfig, CgReport, cg_solve, cg_solve_batch
from .diffops import ParamSet
from .errors import (
    CheckpointError,
    DimensionError,
    NumericalBreakdownError,
    ParameterError,
    RlsError,
)
from .implicit import (
    NnlsLayer,
    SavedForward,
    WienerLayer,
    nnls_backward,
    nnls_forward,
    wiener_backward,
    wiener_forward,
)
from .linops import (
    BlurKernel,
    BlurOperator,
    DiagonalWeights,
    FilterBank,
    LinearMap,
    SystemOperator,
    WienerOperator,
    build_rhs,
    load_kernel,
    normalize_kernel,
    save_kernel,
)
from .metrics import estimate_sigma_wmad, psnr, ssim, sun_protocol_score
from .model import Deconvolver, ModelConfig, StepTrace, convergence_study
from .predictors import ConvPredictor, PotentialPredictor, predict_weights, predictor_vjp
from .synth import DataConfig, make_sample, synth_kernel
from .tensors import Rng, conv2d_valid, conv2d_valid_adjoint, laplacian_response
from .training import Adam, TrainConfig, load_model, loss_sum_mse, save_model, train

__version__ = "0.1.0"
