"""Graph-signal forecasting plus a DQN monitoring agent, tuned by a GP surrogate."""

__version__ = "0.1.0"
