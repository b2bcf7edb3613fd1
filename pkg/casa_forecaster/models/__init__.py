"""
Layers, the CASA forecaster and its conventional-attention twin.
"""
from casa_forecaster.models.casa import (
    CasaModel,
    ModelConfig,
    casa_attention,
    casa_block,
    count_parameters,
    embed_series,
    estimate_flops,
    model_forward,
    score_network,
)
from casa_forecaster.models.attention import baseline_attention

__all__ = ['CasaModel', 'ModelConfig', 'baseline_attention', 'casa_attention', 'casa_block',
           'count_parameters', 'embed_series', 'estimate_flops', 'model_forward', 'score_network']
