"""Row/column-wise sparse low-rank adaptation on small dense models."""
from .adapter import (LoraAdapter, apply_masks, delta_sparsity, effective_weight, forward,
                      init_adapter)
from .pruner import SparsitySchedule, keep_fraction_at, prune_adapter, prune_vector
from .sensitivity import SensitivityState, init_state, instantaneous_sensitivity, update_ema
from .sparsity_analysis import (BoundSweepRow, empirical_bound_sweep, example1_counterexample,
                                product_sparsity_lower_bound, rank_one_sparsity, sparsity)
from .tensor_core import ContractError, Graph, ShapeError, backward, finite_diff_grad, matmul
from .trainer import (StepReport, TrainConfig, TrainingDiverged, clip_frobenius, roselora_step,
                      train)

__version__ = "0.1.0"
