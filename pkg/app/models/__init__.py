# Domain objects holding numpy arrays; configuration lives in app.schemas
from .scene import Scene, FieldGrid, ShadowAndLosFields
from .dataset import Sample, Dataset
from .network import Model, Normalizer, FEATURE_STD_FLOOR
from .selection import SelectionResult

__all__ = [
    "Scene",
    "FieldGrid",
    "ShadowAndLosFields",
    "Sample",
    "Dataset",
    "Model",
    "Normalizer",
    "FEATURE_STD_FLOOR",
    "SelectionResult"
]
