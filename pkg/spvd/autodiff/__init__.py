from spvd.autodiff.grad_check import grad_check, grad_check_parameters
from spvd.autodiff.tensor import (
    ComputationGraph,
    GraphNode,
    Tensor,
    backward,
    default_dtype,
    is_grad_enabled,
    make_node,
    no_grad,
    precision,
    set_precision,
)
