"""Self attention as convolution: 2D self attention, self attentive
convolutions (SAC) and their multiscale fusion (MSAC), with reverse-mode
gradients and two small demo pipelines."""

from .attention import (
    AttentionParams,
    MultiHeadParams,
    multi_head_sa2d,
    sa2d,
    sa2d_apply,
    sa2d_coefficients,
    sa2d_project,
    sa2d_scores,
    self_attention_1d,
)
from .autodiff import Node, backward, finite_diff_grad
from .errors import FormatError, ShapeError
from .sac import MSACConfig, MSACParams, SACParams, init_msac, msac, msac_1d, sac
from .tensor import concat_last_axis, conv2d, conv_bank, matmul_via_conv, softmax_over_axes

__version__ = "0.1.0"
