from .detection import DetectedField, DetectionConfig, hwp_epsilon
from .feedback import (GateController, PulseProtocol, deadtime_for_missed_fraction,
                       gate_triggers, missed_fraction)
from .master import (G2Curve, MasterEquation, SolverDivergence, TruncationOverflow,
                     conditional_g2, evolve)
from .trajectories import (SeedError, TrajectoryRun, collapse, gate_copy_log, run_trajectories,
                           trajectory_seeds)

__all__ = [
    "DetectedField", "DetectionConfig", "hwp_epsilon", "GateController", "PulseProtocol",
    "deadtime_for_missed_fraction", "gate_triggers", "missed_fraction", "G2Curve",
    "MasterEquation", "SolverDivergence", "TruncationOverflow", "conditional_g2", "evolve",
    "SeedError", "TrajectoryRun", "collapse", "gate_copy_log", "run_trajectories",
    "trajectory_seeds",
]
