"""contagion-figures: batch figure rendering for contagion-lab outputs.

Reads the documented CSV/JSON files emitted by the simulation scenarios and
renders capital trajectories with default markers, per-type density heat
maps with jump lines, and scaling-study decay plots.
"""

__version__ = "0.1.0"

from .inputs import (
    SchemaError,
    read_defaults,
    read_jumps,
    read_mf_density,
    read_mf_losses,
    read_scaling_study,
    read_trajectories,
)
from .render import FigureJob, render
