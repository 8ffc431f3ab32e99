"""Event-driven, energy-budgeted continual learning for IoT fault detection.

A battery-powered device runs a tiny on-device detector over a sensor
stream, ships suspected-fault windows to an edge server, and the server
retrains, compresses (prune + quantize) and pushes models back.  All
transmission parameters adapt to the estimated link rate and the
remaining energy budget.  The package provides the simulator, the
adaptation planner, the two baseline policies and an experiment CLI.
"""

from edgecl.dataset import Trace, SplitSpec, SynthConfig, load_trace, split_initial, synth_trace
from edgecl.model import DenseModel, TrainBatch, ae_loss, classify, fault_score, forward, train
from edgecl.energy import EnergyLedger, EnergyParams
from edgecl.planner import Plan, PlanInputs, SizeModel
from edgecl.runtime import RunResult, run

__version__ = "0.1.0"

__all__ = [
    "Trace",
    "SplitSpec",
    "SynthConfig",
    "load_trace",
    "split_initial",
    "synth_trace",
    "DenseModel",
    "TrainBatch",
    "forward",
    "fault_score",
    "classify",
    "ae_loss",
    "train",
    "EnergyParams",
    "EnergyLedger",
    "SizeModel",
    "PlanInputs",
    "Plan",
    "RunResult",
    "run",
]
