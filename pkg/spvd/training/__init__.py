from spvd.training.optim import Adam, one_cycle_lr
from spvd.training.run_config import (
    RESOLVED_CONFIG,
    STREAMS,
    RunConfig,
    load_run_config,
    rng_stream,
    with_overrides,
    write_resolved_config,
)
from spvd.training.trainer import TrainResult, build_dataset, task_mask, train
