"""Meta-path guided graph convolutional knowledge-concept recommender."""
from ._kernels import BACKEND
from .graph import (EntityType, Hin, HinBuilder, MetaPathSpec, compose_meta_path,
                    concept_meta_path_catalog, user_meta_path_catalog, validate_schema)
from .metrics import MetricReport
from .trainer import Model, TrainConfig, build_model, train

__version__ = "0.1.0"
