"""SVD-parameterized weight matrices built from Householder reflectors."""

from .flops import FlopCounter, leading_flops, predicted_flops
from .householder import (
    FactorizationError,
    ReflectorStack,
    hgrad,
    householder_qr,
    hprod,
    stack_apply,
    stack_materialize,
)
from .layers import (
    Activation,
    RnnCell,
    SpectralDenseLayer,
    rnn_backward_through_time,
    rnn_forward,
    spectral_apply,
    spectral_backward,
)
from .oracle import jacobi_svd
from .svd_param import (
    SigmaParam,
    SigmaRangeError,
    SpectralMatrix,
    decompose,
    decompose_square,
    dumps_spectral,
    embed_orthogonal,
    loads_spectral,
    materialize,
    spectral_margin,
)
from .training import DivergenceError, MetricRecord, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Activation", "DivergenceError", "FactorizationError", "FlopCounter", "MetricRecord",
    "ReflectorStack", "RnnCell", "SigmaParam", "SigmaRangeError", "SpectralDenseLayer",
    "SpectralMatrix", "TrainConfig", "decompose", "decompose_square", "dumps_spectral",
    "embed_orthogonal", "hgrad", "householder_qr", "hprod", "jacobi_svd", "leading_flops",
    "loads_spectral", "materialize", "predicted_flops", "rnn_backward_through_time",
    "rnn_forward", "spectral_apply", "spectral_backward", "spectral_margin",
    "stack_apply", "stack_materialize", "train",
]
