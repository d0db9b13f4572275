"""Differentially private federated learning over fading multiple-access
channels, with time-adaptive power allocation."""

from .channel import ChannelParams, FadingProcess
from .data import Dataset, Partition
from .errors import AirdpError
from .experiments import SweepSpec, parse_config, run_sweep, threshold_report
from .power import PaInputsNoma, PaInputsOma, PowerSchedule, solve_offline_noma, solve_offline_oma
from .privacy import DpTarget, PrivacyLedger, r_dp
from .trainer import MetricsTrace, TrainConfig, run

__all__ = [
    "AirdpError", "ChannelParams", "Dataset", "DpTarget", "FadingProcess", "MetricsTrace",
    "PaInputsNoma", "PaInputsOma", "Partition", "PowerSchedule", "PrivacyLedger", "SweepSpec",
    "TrainConfig", "parse_config", "r_dp", "run", "run_sweep", "solve_offline_noma",
    "solve_offline_oma", "threshold_report",
]
__version__ = "0.1.0"
