"""Exchangeable-group BMA calibration of temperature ensembles and its verification suite."""
from .domain import BiasMode, Dataset, ForecastCase, GroupScheme, SchemeVariant, group_members, load_dataset, write_dataset
from .estimation import BmaParameters, EmControl, TrainingSet, fit_bias, fit_bma, log_likelihood
from .predictive import PredictiveDistribution, cdf, crps, event_probability, make_predictive, pdf, quantile
from .pipeline import RunConfig, run_rolling, sweep_window
from .synth import SynthSpec, generate

__version__ = "0.1.0"
