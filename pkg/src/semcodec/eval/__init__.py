from .bd import BdError, BdResult, RdCurve, RdPoint, bd_metric
from .sweeps import (
    ANCHOR_MODES,
    ANCHOR_QPS,
    DEFAULT_SPAN,
    HANDCRAFTED_KINDS,
    SWEEP_LAMBDAS,
    SweepSet,
    anchor_schedule,
    anchor_sweep,
    baseline_sweep,
    handcrafted_offsets,
    handcrafted_qp_map,
    policy_sweep,
)
