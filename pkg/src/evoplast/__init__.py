"""Evolution of learning: inner-loop plasticity under evolutionary outer loops."""

from .autodiff import (
    ContractError,
    Node,
    NumericError,
    ShapeError,
    Tape,
    backward_nodes,
)
from .nets import (
    ForwardPass,
    HeadSpec,
    NetworkArch,
    ParamLayout,
    ParamVector,
    a2c_arch,
    backward,
    build_layout,
    forward,
    init_params,
    meta_grad,
    mse_node,
    net_apply,
    param_count,
    sgd_step,
    sine_arch,
    zeros_params,
)

__version__ = "0.1.0"
