"""Consensus Monte Carlo over simulated noisy wireless channels.

A small numpy/scipy library for one-shot distributed Bayesian learning
experiments: workers sample local posteriors, samples travel over simulated
uncoded OMA/NOMA links, and the server aggregates them with closed-form or
variationally optimized linear weights.
"""

__version__ = "0.1.0"

from . import aggregators, baselines, channel, matops, metrics, posteriors, wvcmc

__all__ = [
    "aggregators",
    "baselines",
    "channel",
    "matops",
    "metrics",
    "posteriors",
    "wvcmc",
    "__version__",
]
