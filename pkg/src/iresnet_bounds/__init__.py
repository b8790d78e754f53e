"""Constructive sample-complexity lower bounds for invertible residual networks.

Hat-function network blocks, exact i-ResNet inversion, fooling-family
construction and an adversarial harness that runs real sampling algorithms
against the family.
"""

from .adversary import (
    ExperimentReport,
    FoolingFamily,
    SampleTrace,
    build_family,
    build_grid,
    filter_grid,
    fooling_pair,
    guaranteed_floor,
    lower_bound_constant,
    run_experiment,
)
from .base_maps import BiLipschitzMap, diagonal_affine_map, identity_map, iresnet_map
from .core_nets import (
    ConvLayer,
    ConvNetwork,
    DenseLayer,
    FeedForwardNetwork,
    ResidualBlock,
    ResidualNetwork,
    circ_conv,
    iresnet_inverse,
    resnet_forward,
)
from .errors import (
    AmplitudeTooLarge,
    BudgetExceeded,
    DimensionMismatch,
    EmptyFilteredGrid,
    ImageTooSmall,
    IResNetBoundsError,
    NoConvergence,
    NotCertifiedInvertible,
)
from .hat import HatParams, hat_as_fnn, hat_value, phi_as_cnn, phi_block, theta_block
from .learners import GridLearner, ParametricFitLearner, RandomLearner, make_learner
from .metrics import INF, lp_distance

__version__ = "0.1.0"
