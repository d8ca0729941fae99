"""Monte Carlo link simulation, experiment runners and the command line."""

from .detect import detect_dfe, detect_linear
from .experiments import BerCurve, PowerRow, SimConfig, empirical_mse, power_experiment, simulate_ber
from .qam import qam_demod, qam_mod
