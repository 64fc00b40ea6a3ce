"""Energy-aware GPU allocation with learned throughput estimates for co-located jobs."""

from .catalog import Catalog, CatalogError, EstimateRecord
from .dataset import (FeatureSchema, GroundTruth, TableFormatError, gavel_like_table,
                      generate_synthetic, load_table, split, write_table)
from .domain import SENTINEL, SENTINEL_ID, AcceleratorType, Combination, JobSpec
from .optimizer import (Allocation, AllocationInstance, Server, brute_force, build, power_of,
                        solve, validate)
from .regressor import Regressor, TrainConfig, TrainReport, gradient_check, train

__version__ = "0.1.0"

__all__ = [
    "AcceleratorType", "Allocation", "AllocationInstance", "Catalog", "CatalogError",
    "Combination", "EstimateRecord", "FeatureSchema", "GroundTruth", "JobSpec", "Regressor",
    "SENTINEL", "SENTINEL_ID", "Server", "TableFormatError", "TrainConfig", "TrainReport",
    "brute_force", "build", "gavel_like_table", "generate_synthetic", "gradient_check",
    "load_table", "power_of", "solve", "split", "train", "validate", "write_table",
]
