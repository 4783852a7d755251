from .loop import (
    TrainConfig,
    TrainState,
    fit,
    load_checkpoint,
    loss_for_sample,
    pair_supervisions,
    save_checkpoint,
    train_step_pair,
)
