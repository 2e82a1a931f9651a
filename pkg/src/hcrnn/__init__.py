"""Joint-distribution neurons based on Hierarchical Correlation Reconstruction (HCR).

A neuron stores a joint density of its normalized connections as a linear
combination of orthonormal polynomial products, ``rho(x) = sum_j a_j f_j(x)``.
The coefficients are mixed moments, so the same model can be estimated
directly, queried in any direction, propagate moment-encoded densities and
give cheap mutual information estimates.
"""

from .basis import (
    BasisSet,
    FeatureMatrix,
    features,
    make_basis,
    marginal_basis,
    poly_deriv,
    poly_eval,
    tensor_eval,
)
from .density import (
    BasisRotation,
    CalibrationSpec,
    JointDensityModel,
    density_at,
    estimate,
    estimate_missing,
    log_likelihood,
    marginalize,
    optimize_basis,
    update_ema,
)
from .normalize import Normalizer, fit_normalizer
from .propagate import (
    DegenerateDenominator,
    MomentVector,
    conditional_density,
    conditional_joint,
    conditional_mean,
    kan_mean,
)
from .info import (
    IndependenceReport,
    KernelMatrix,
    cross_entropy_approx,
    entropy_approx,
    independence_test,
    kernel,
    mutual_info_approx,
    mutual_info_corrected,
)
from .ibtrain import HiddenLayer, IbConfig, WeightMatrix, estimate_weights, ib_gradient, ib_objective, ib_train
from .network import HcrNetwork, fit_direct, propagate_density, propagate_values

__version__ = "0.1.0"
