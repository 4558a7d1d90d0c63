"""Attribute reconstruction attacks against federated averaging.

Modules: ``autodiff`` (reverse mode with double backprop), ``nnmodel`` (MLP),
``dataio`` (datasets and candidate enumeration), ``fedsim`` (FedAvg with victim
snapshots), ``attacks`` (cos/L2 matching and baselines), ``mia`` (GMM
membership inference) and ``harness`` (configs, runner, reports).
"""

from .errors import ConfigError, DivergenceError

__version__ = "0.1.0"
__all__ = ["ConfigError", "DivergenceError", "__version__"]
