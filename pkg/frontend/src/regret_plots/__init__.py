"""Figure rendering for bandit-experiment aggregate CSVs."""

__version__ = "0.1.0"

from .plot import PlotSpec, plot_regret

__all__ = ["PlotSpec", "plot_regret", "__version__"]
