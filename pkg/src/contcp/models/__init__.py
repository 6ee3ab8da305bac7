from .density import ConditionalDensity, ConditionalDensityConfig, fit_conditional_density, silverman_bandwidth
from .mlp import MlpConfig, MlpPredictor, mc_dropout_interval, mc_dropout_intervals, mse, train_mlp

__all__ = [
    "ConditionalDensity", "ConditionalDensityConfig", "fit_conditional_density", "silverman_bandwidth",
    "MlpConfig", "MlpPredictor", "mc_dropout_interval", "mc_dropout_intervals", "mse", "train_mlp",
]
