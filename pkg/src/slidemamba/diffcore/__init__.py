from .tensor import Tensor, tensor, concat, linear_recurrence, RowIndexPlan
from .nn import Linear, MLP, BatchNorm1d, Dropout, xavier_uniform, check_mode
from .optim import Adam
from .gradcheck import finite_difference_check
from .checkpoint import save_checkpoint, load_checkpoint, apply_entries

__all__ = [
    "Tensor", "tensor", "concat", "linear_recurrence", "RowIndexPlan",
    "Linear", "MLP", "BatchNorm1d", "Dropout", "xavier_uniform", "check_mode",
    "Adam", "finite_difference_check",
    "save_checkpoint", "load_checkpoint", "apply_entries",
]
