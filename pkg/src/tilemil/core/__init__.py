from . import ops
from .tensor import Tape, Tensor, active_tape, backward, no_tape

__all__ = ["Tape", "Tensor", "active_tape", "backward", "no_tape", "ops"]
