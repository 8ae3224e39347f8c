"""Self-supervised pre-training and joint multimodal prediction of
traffic motion on synthetic scene corpora."""

from .config import (ConfigError, GenerateConfig, ModelConfig, TrainConfig,
                     load_config)
from .metrics import (MetricReport, evaluate_predictions, joint_min_ade,
                      joint_min_fde, joint_miss_rate, simplified_map)
from .prediction import JointPrediction, postprocess_confidences
from .scene import (DatasetDialect, DataError, SceneFormatError, TrafficScene,
                    deserialize_scene, generate_corpus, generate_synthetic_scene,
                    get_dialect, read_corpus, serialize_scene, to_agent_centric_views,
                    to_scene_centric, validate_scene)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "DatasetDialect", "GenerateConfig",
    "JointPrediction", "MetricReport", "ModelConfig", "SceneFormatError",
    "TrafficScene", "TrainConfig", "deserialize_scene", "evaluate_predictions",
    "generate_corpus", "generate_synthetic_scene", "get_dialect",
    "joint_min_ade", "joint_min_fde", "joint_miss_rate", "load_config",
    "postprocess_confidences", "read_corpus", "serialize_scene",
    "simplified_map", "to_agent_centric_views", "to_scene_centric",
    "validate_scene",
]
