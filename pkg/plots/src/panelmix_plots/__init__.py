"""Publication-style figures from panelmix CSV outputs.

This package deliberately consumes only the documented CSV contracts
(`pair,time,subpop,mean,lo95,hi95,n_defined` trajectories and
`subpop,time,mae,log_mae,n_cells` scores); it never touches draw files.
"""

from .figures import PlotSpec, plot_mae_boxes, plot_trajectories
from .io import read_score_csv, read_trajectory_csv

__version__ = "0.1.0"

__all__ = [
    "PlotSpec",
    "plot_mae_boxes",
    "plot_trajectories",
    "read_score_csv",
    "read_trajectory_csv",
]
