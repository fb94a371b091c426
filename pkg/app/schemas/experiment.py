from datetime import datetime
from enum import Enum
from typing import Dict, List, Optional, Union
from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator

from app.core.config import settings
from app.schemas.neural import TrainConfig
from app.schemas.scene import SceneConfig


class SelectionMethod(str, Enum):
    """Data-selection algorithms"""
    RANDOM = "random"
    GENIE = "genie"
    PRACTICAL = "practical"


class Strategy(str, Enum):
    """Protocol variants run per realization"""
    RANDOM = "random"
    GENIE = "genie"
    PRACTICAL = "practical"
    RAND60 = "rand60"
    RAND100 = "rand100"

    @property
    def method(self) -> SelectionMethod:
        if self in (Strategy.RAND60, Strategy.RAND100):
            return SelectionMethod.RANDOM
        return SelectionMethod(self.value)

    @property
    def fixed_percent(self) -> Optional[float]:
        """Selection percentage pinned by the baseline, None when the config's X applies."""
        return {Strategy.RAND60: 60.0, Strategy.RAND100: 100.0}.get(self)


class TestSet(str, Enum):
    """Evaluation splits"""
    __test__ = False

    TEST1 = "test1"  # non-selected candidates
    TEST2 = "test2"  # pool minus D2


class RealizationStatus(str, Enum):
    OK = "ok"
    DIVERGED = "diverged"


DEFAULT_STRATEGIES = [Strategy.RANDOM, Strategy.GENIE, Strategy.PRACTICAL, Strategy.RAND60, Strategy.RAND100]
STRATEGY_ORDER = {strategy: rank for rank, strategy in enumerate(Strategy)}


def _split_csv(v: Union[str, List]) -> List:
    if isinstance(v, str):
        return [item.strip() for item in v.split(",") if item.strip()]
    return v


class ExperimentConfig(BaseModel):
    """Full experiment description"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    scene: SceneConfig = Field(default_factory=SceneConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    n: int = Field(1700, ge=1, description="Size of D1 and of the candidate set")
    x_percent: float = Field(10.0, ge=0, le=100, description="Share of candidates to select")
    pool_size: int = Field(80000, ge=2, description="Positions in the baseline pool")
    bs_counts: List[int] = Field(default_factory=lambda: [18, 12, 8, 4], min_length=1)
    bs_subsets: Dict[int, List[int]] = Field(default_factory=dict, description="Kept BS columns per count")
    strategies: List[Strategy] = Field(default_factory=lambda: list(DEFAULT_STRATEGIES), min_length=1)
    n_realizations: int = Field(25, ge=1)
    base_seed: int = Field(20240607, ge=0)
    workers: int = Field(default_factory=lambda: settings.DEFAULT_WORKERS, ge=1)
    save_checkpoints: bool = Field(False, description="Write NN1A/NN1B checkpoints per job")
    save_selections: bool = Field(False, description="Write per-strategy selection files per job")

    @field_validator("bs_counts", "strategies", mode="before")
    @classmethod
    def split_lists(cls, v):
        return _split_csv(v)

    @field_validator("bs_subsets", mode="before")
    @classmethod
    def split_subsets(cls, v):
        if isinstance(v, dict):
            return {key: _split_csv(value) for key, value in v.items()}
        return v

    @field_validator("pool_size")
    @classmethod
    def validate_pool_size(cls, v: int, info: ValidationInfo) -> int:
        n = info.data.get("n")
        if n is not None and 2 * n > v:
            raise ValueError(f"pool_size must be at least 2 * n = {2 * n}")
        return v

    @field_validator("bs_counts")
    @classmethod
    def validate_bs_counts(cls, v: List[int], info: ValidationInfo) -> List[int]:
        scene = info.data.get("scene")
        n_bs = scene.n_bs if scene is not None else 18
        for count in v:
            if count < 1 or count > n_bs:
                raise ValueError(f"each BS count must lie in [1, {n_bs}]")
        if len(set(v)) != len(v):
            raise ValueError("BS counts must be distinct")
        return v

    @field_validator("bs_subsets")
    @classmethod
    def validate_bs_subsets(cls, v: Dict[int, List[int]], info: ValidationInfo) -> Dict[int, List[int]]:
        scene = info.data.get("scene")
        n_bs = scene.n_bs if scene is not None else 18
        for count, keep in v.items():
            if len(keep) != count:
                raise ValueError(f"subset for {count} BS lists {len(keep)} indices")
            if any(b < 0 or b >= n_bs for b in keep) or any(a >= b for a, b in zip(keep, keep[1:])):
                raise ValueError(f"subset for {count} BS must be strictly increasing indices in [0, {n_bs})")
        return v

    @field_validator("strategies")
    @classmethod
    def validate_strategies(cls, v: List[Strategy]) -> List[Strategy]:
        if len(set(v)) != len(v):
            raise ValueError("strategies must be distinct")
        return v


class TestMetrics(BaseModel):
    """Q(0.9) before and after fine-tuning on one test set"""
    __test__ = False

    q90_initial_m: float = Field(..., ge=0)
    q90_after_m: float = Field(..., ge=0)
    gain: float
    n_test: Optional[int] = Field(None, ge=1, description="Test-set size; not kept in results.csv")


class RealizationResult(BaseModel):
    """Outcome of one strategy in one (bs_count, realization) job"""
    realization: int
    seed: int
    bs_count: int
    strategy: Strategy
    k_selected: int
    status: RealizationStatus = RealizationStatus.OK
    metrics: Dict[TestSet, TestMetrics] = Field(default_factory=dict)
    selected_indices: List[int] = Field(default_factory=list, description="Pool indices added to D1")
    d1_hash: str = ""
    candidates_hash: str = ""
    nn1a_hash: str = ""
    test1_is_candidates: bool = Field(False, description="Selection exhausted the candidates; test1 fell back to them")

    @property
    def is_valid(self) -> bool:
        return self.status == RealizationStatus.OK

    @property
    def sort_key(self) -> tuple:
        """(bs_count, strategy, realization) with strategies in declaration order."""
        return self.bs_count, STRATEGY_ORDER[self.strategy], self.realization


class SummaryRow(BaseModel):
    """Means over the valid realizations of one (bs_count, strategy, test set)"""
    bs_count: int
    strategy: Strategy
    test_set: TestSet
    mean_gain: Optional[float] = None
    mean_q90_initial_m: Optional[float] = None
    mean_q90_after_m: Optional[float] = None
    n_valid: int = 0
    n_total: int = 0


class SummaryTable(BaseModel):
    rows: List[SummaryRow] = Field(default_factory=list)

    def get(self, bs_count: int, strategy: Strategy, test_set: TestSet) -> Optional[SummaryRow]:
        for row in self.rows:
            if (row.bs_count, row.strategy, row.test_set) == (bs_count, strategy, test_set):
                return row
        return None

    @property
    def bs_counts(self) -> List[int]:
        return sorted({row.bs_count for row in self.rows})

    @property
    def strategies(self) -> List[Strategy]:
        seen: List[Strategy] = []
        for row in self.rows:
            if row.strategy not in seen:
                seen.append(row.strategy)
        return seen


class ArtifactRecord(BaseModel):
    path: str
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    """Provenance of one command invocation"""
    project: str = settings.PROJECT_NAME
    tool_version: str = settings.APP_VERSION
    command: str
    config: Optional[ExperimentConfig] = None
    started_at: datetime
    finished_at: Optional[datetime] = None
    seeds: Dict[str, int] = Field(default_factory=dict)
    files: List[ArtifactRecord] = Field(default_factory=list)
