from . import ops
from .tensor import DTYPE, ComputationRecord, Function, Tensor, active_record, backward, tensor

__all__ = ["DTYPE", "ComputationRecord", "Function", "Tensor", "active_record", "backward", "ops", "tensor"]
