from .scene import SceneConfig

from .neural import (
    ModelArch,
    ModelRole,
    SkipPattern,
    TrainConfig
)

from .experiment import (
    ArtifactRecord,
    DEFAULT_STRATEGIES,
    ExperimentConfig,
    RealizationResult,
    RealizationStatus,
    RunManifest,
    SelectionMethod,
    STRATEGY_ORDER,
    Strategy,
    SummaryRow,
    SummaryTable,
    TestMetrics,
    TestSet
)
