from .checkpoint import (Checkpoint, CheckpointError, CorruptCheckpointError, ShapeMismatchError,
                         VersionMismatchError, load_checkpoint, save_checkpoint)
from .experiments import (EditMetrics, dense_baseline, run_data_scaling, run_edit_experiment,
                          run_forgetting_experiment, run_finetune)
from .tasks import TaskBundle, gen_classification_task, gen_fact_edit_task, pretrain_base
