"""Two-scale simulator of tumour growth under oncolytic virus therapy with
cell adhesion, fibre rearrangement and a moving tumour boundary."""

from .config import RunConfig, load_config, loads_config, preset_config
from .simulation import RunResult, Simulation, run_simulation

__all__ = ["RunConfig", "RunResult", "Simulation", "load_config", "loads_config",
           "preset_config", "run_simulation"]
__version__ = "0.1.0"
