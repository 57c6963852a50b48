"""Event-driven simulation of one-dimensional SDEs driven by Poisson random measures."""

from .errors import IntegrationError, InvalidInput
from .point_process import (
    EventStream,
    IntensityRegion,
    MarkedEvent,
    SeedSpec,
    Source,
    StreamRole,
    derive_seed,
    filter_stream,
    merge_streams,
    sample_stream,
)
from .sde_core import (
    AffineDrift,
    CadlagPath,
    Drift,
    JumpKernel,
    ModelSpec,
    MonotoneFlag,
    check_monotone,
    drift_flow,
    integrate,
)
from .semimartingale import (
    continuous_qv,
    local_time_integral,
    max_identity_residual,
    tanaka_residual,
    verify_max_is_solution,
)
from .lfv import (
    RadiusLaw,
    TruncationLevel,
    atom_law,
    check_integrability,
    lfv_compensator_drift,
    lfv_g0,
    lfv_model_spec,
    lfv_region,
    power_law,
)
from .experiments import (
    couple_paths,
    pathwise_uniqueness_probe,
    truncation_ladder_run,
    weak_uniqueness_check,
)

__version__ = "0.1.0"
