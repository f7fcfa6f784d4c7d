"""Decentralized stochastic gradient tracking (GT-DSGD) simulator.

Submodules: ``topology`` (graphs and mixing matrices), ``objectives`` (test
problems), ``oracles`` (stochastic gradients), ``algorithms`` (GT-DSGD, DSGD,
centralized SGD), ``analysis`` (metrics and closed-form bounds) and
``harness`` (configuration, presets, Monte Carlo runner, CLI).
"""

__version__ = "0.1.0"
