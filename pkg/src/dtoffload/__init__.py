"""Stochastic computation offloading in a digital-twin IIoT network.

Slotted queue/energy/channel simulator, perturbed Lyapunov drift-plus-penalty
objective and an asynchronous actor-critic learner for joint offloading,
power, bandwidth and CPU allocation.
"""
from .config import SimConfig, load_config, reference_config
from .env import Action, OffloadEnv, project_action
from .harness import RunRecord, export_metrics, run_baseline, run_training, sweep

__all__ = [
    "Action",
    "OffloadEnv",
    "RunRecord",
    "SimConfig",
    "export_metrics",
    "load_config",
    "project_action",
    "reference_config",
    "run_baseline",
    "run_training",
    "sweep",
]

__version__ = "0.1.0"
