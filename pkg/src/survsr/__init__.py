"""Multi-objective symbolic regression of Cox risk scores, with glass-box baselines."""

__version__ = "0.1.0"
