"""Design optimisation and adjusted analysis for group sequential
stepped-wedge cluster randomised trials."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    AllocationSchedule,
    AnalysisSchedule,
    ConstraintViolationError,
    FixedEffects,
    GroupSequentialDesign,
    NonEstimableError,
    ScenarioSpec,
    StoppingBoundaries,
    VarianceComponents,
)
from .mvnorm import RectangleProbability, mvn_rectangle  # noqa: F401
from .oc import OperatingCharacteristics, OutcomeLabel, summarize  # noqa: F401
