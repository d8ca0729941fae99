"""Closed-form transceiver designs for amplify-and-forward MIMO relay links."""

from .channel import KroneckerErrorModel, TwoHopChannel, rayleigh_channel, svd_sorted
from .errors import (
    DegenerateChannelError,
    DispatchError,
    InfeasibleTargetError,
    InvalidInputError,
    NumericalError,
    RelayDesignError,
    UnsupportedConfigurationError,
)
from .linear import DesignOptions, QoSTargets, design_p1, design_p2, naf_design, sa_design_p2, solve_p2
from .mse import TransceiverDesign, mmse_matrix, mse_matrix, stream_mse, wiener_receiver
from .multihop import MultiHopChannel, multihop_design
from .multirelay import MultiRelayChannel, multirelay_design
from .nonlinear import design_dfe_p1, design_dfe_p2
from .objectives import OBJECTIVE_NAMES, get_objective
from .robust import RobustChannelState, averaged_mse, robust_design_p1

__version__ = "0.1.0"
