from .agent import (
    BG_ACTIONS,
    CTU_OFFSETS,
    FG_ACTIONS,
    FRAME_QPS,
    ActionDecision,
    LossReport,
    State,
    ctu_crops,
    ctu_scalars,
    forward,
    forward_backward,
    frame_state,
    greedy_action,
    greedy_actions,
    head_fraction,
    legal_for_labels,
    log_softmax,
    masked_logits,
    param_groups,
    sample_action,
    sample_actions,
    trainable_mask,
)
from .net import (
    ACTOR,
    ADAPTER_A,
    ADAPTER_C,
    ADAPTER_GROUPS,
    ADAPTER_V1,
    BASE_GROUPS,
    CRITIC,
    FC,
    FE,
    GROUPS,
    ArchConfig,
    NumericError,
    PolicyError,
    PolicyNet,
    ctu_arch,
    frame_arch,
)
from .checkpoint import Checkpoint, CheckpointError, fresh, tensor_hashes
