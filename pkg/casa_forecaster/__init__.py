"""
CASA forecaster: channel-wise Transformer encoder with CNN-autoencoder score attention.
"""
from casa_forecaster.forecaster import CasaForecaster

__version__ = "0.1.0"
__all__ = ['CasaForecaster', '__version__']
