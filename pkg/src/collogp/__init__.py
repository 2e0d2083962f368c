"""Gaussian-process regression with differential-equation constraints.

The target function carries a GP prior; the governing equation enters as a
Gaussian virtual likelihood on its residual at collocation points, built
from closed-form covariances between kernel derivatives. Inference is
whitened stochastic variational inference; an exact GP regressor serves as
the unconstrained baseline.
"""

from .io import PACKAGE_VERSION as __version__
from .equation import EquationSpec, parse_equation, preset
from .infer import TrainConfig, TrainData, elbo_estimate, elbo_grad, train
from .kernel import ArdParams, deriv_cov, deriv_cov_grad, se_ard
from .linalg import JitterPolicy, cholesky, cholesky_backward
from .model import ModelParams, build_layout, build_sigma, init_params
from .predict import GaussianPrediction, PosteriorGP, mnll, rmse

__all__ = [
    "__version__",
    "ArdParams", "se_ard", "deriv_cov", "deriv_cov_grad",
    "JitterPolicy", "cholesky", "cholesky_backward",
    "EquationSpec", "parse_equation", "preset",
    "ModelParams", "init_params", "build_layout", "build_sigma",
    "TrainConfig", "TrainData", "train", "elbo_estimate", "elbo_grad",
    "PosteriorGP", "GaussianPrediction", "rmse", "mnll",
]
