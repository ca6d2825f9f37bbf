"""Age- vs value-of-information scheduling for cellular networked control loops."""
from .estimation import (
    ErrorGrowth,
    EstimatorView,
    aoi_of,
    estimate_state,
    estimation_error,
    expected_error_sq,
    voi_downlink,
    voi_uplink,
)
from .model import (
    ConfigError,
    LoopNotStarted,
    RngStream,
    SubSystemParams,
    control_input,
    draw_offset,
    map_slot_to_step,
    plant_step,
    sample_noise,
)
from .network import ContractViolation, ResourceGrid, ScheduleDecision
from .scheduling import SchedulerKind, make_scheduler
from .simulation import (
    ClassSpec,
    RunConfig,
    RunMetrics,
    Simulation,
    compute_avg_aoi,
    compute_iae,
    paper_classes,
    run_simulation,
    run_sweep,
)

__version__ = "0.1.0"
