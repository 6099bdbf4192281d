"""Task-parallel distributed 3D FFT with slab and pencil decompositions."""

from .cost import CommCostParams, ComputeModel, PhaseEstimate, PhaseTimings
from .events import EventLog
from .grid import DecompositionPlan, DistributedArray, GridSpec, make_decomposition
from .kernel import PlanCache, PlanKey, naive_dft_3d
from .pipeline import (
    Fft3dContext,
    create_context,
    fft3d_forward,
    fft3d_inverse,
    forward,
    gather,
    inverse,
    run_barrier_baseline,
    scatter,
)
from .scheduler import TaskRecord, TaskScheduler

__all__ = [
    "CommCostParams", "ComputeModel", "PhaseEstimate", "PhaseTimings", "EventLog",
    "DecompositionPlan", "DistributedArray", "GridSpec", "make_decomposition",
    "PlanCache", "PlanKey", "naive_dft_3d", "Fft3dContext", "create_context",
    "fft3d_forward", "fft3d_inverse", "forward", "gather", "inverse",
    "run_barrier_baseline", "scatter", "TaskRecord", "TaskScheduler",
]
