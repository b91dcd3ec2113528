from pkcam.tensor.module import Module
from pkcam.tensor.module import ModuleList
from pkcam.tensor.module import parameter
from pkcam.tensor.tensor import GradTape
from pkcam.tensor.tensor import Tensor

__all__ = ["GradTape", "Module", "ModuleList", "Tensor", "parameter"]
