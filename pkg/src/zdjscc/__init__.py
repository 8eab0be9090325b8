"""Zero-delay hybrid digital-analog coding of correlated Gaussian sources over
a two-user Gaussian interference channel."""

from .analytic import DistortionReport, analytic_distortion, joint_pmf, scheme_b_report
from .codec import EncoderParams, MapDecoder, encode, encoder_power, solve_beta_for_power
from .core import ChannelModel, QuantizerSpec, SourceModel, quantize, quantizer_moments
from .optimizer import SearchSpace, optimize_scheme_b, uncoded_distortion
from .simulation import ExperimentConfig, run_monte_carlo, run_sweep

__all__ = [
    "ChannelModel", "DistortionReport", "EncoderParams", "ExperimentConfig", "MapDecoder",
    "QuantizerSpec", "SearchSpace", "SourceModel", "analytic_distortion", "encode",
    "encoder_power", "joint_pmf", "optimize_scheme_b", "quantize", "quantizer_moments",
    "run_monte_carlo", "run_sweep", "scheme_b_report", "solve_beta_for_power",
    "uncoded_distortion",
]
__version__ = "0.1.0"
