"""Large-deformation topology optimization of strain-inducing compliant mechanisms."""

__version__ = "0.1.0"

from .config import RunConfig, load_config, list_presets  # noqa: E402
from .driver import RobustProblem, run_optimization  # noqa: E402

__all__ = ["RunConfig", "load_config", "list_presets", "RobustProblem", "run_optimization", "__version__"]
