"""Stochastic direct and indirect effects of stochastic interventions with efficient estimation."""

__version__ = "0.1.0"
