"""tensorspike: memory-bounded streaming recovery of planted rank-1 tensor components."""

from .model import (InstanceSpec, ModelError, RecoveryLoss, SignalInstance,
                    correlation, make_instance, recovery_loss)
from .noise_oracle import (BackendError, FreshnessError, NoiseConfig, NoiseOracle,
                           ProjectionRequest, noise_bound_c1)
from .pipeline import (ConfigError, InitPattern, RunConfig, RunReport,
                       build_initialization, enumerate_patterns, run_mpsnsga,
                       samples_until_aligned, select_initialization)
from .resources import (PipelineSnapshot, ResourceLedger, SampleBudgetExceeded,
                        audit_state_size, charge_sample)
from .schedule import (PhaseSchedule, ScheduleConstants, ScheduleError,
                       StrengthParams, adaptive_schedule, compute_c0,
                       compute_gamma, reference_search, theorem_schedule)
from .sga_core import (BlockState, NumericalAbort, StepPlan, normalized_step,
                       run_block_inner, scaled_gradient, sequential_sweep)
from .spectral import PowerIterationError, top_eigvec_ga, top_eigvec_power

__version__ = "0.1.0"

__all__ = [
    "BackendError", "BlockState", "ConfigError", "FreshnessError", "InitPattern",
    "InstanceSpec", "ModelError", "NoiseConfig", "NoiseOracle", "NumericalAbort",
    "PhaseSchedule", "PipelineSnapshot", "PowerIterationError", "ProjectionRequest",
    "RecoveryLoss", "ResourceLedger", "RunConfig", "RunReport",
    "SampleBudgetExceeded", "ScheduleConstants", "ScheduleError", "SignalInstance",
    "StepPlan", "StrengthParams", "adaptive_schedule", "audit_state_size",
    "build_initialization", "charge_sample", "compute_c0", "compute_gamma",
    "correlation", "enumerate_patterns", "make_instance", "noise_bound_c1",
    "normalized_step", "recovery_loss", "reference_search", "run_block_inner",
    "run_mpsnsga", "samples_until_aligned", "scaled_gradient",
    "select_initialization", "sequential_sweep", "theorem_schedule",
    "top_eigvec_ga", "top_eigvec_power",
]
