"""IMU gait identification: segmentation, spectral features, a small CNN,
int8 post-training quantization and a streaming classifier."""

from .errors import (CalibrationError, ConfigError, DatasetError, DegenerateInputError,
                     FormatError, GaitError, ModeError, ParseError, ShapeError, SizeError,
                     UnsupportedVersionError)
from .features import FeatureGrid, featurize, featurize_many, real_fft, welch_power
from .imu import (GaitProfile, GaitSegment, ImuStream, ImuWindow, default_profiles,
                  load_segments, load_stream, save_segments, save_stream, synthesize_gait)
from .quant import (QuantModel, calibrate, load_quant_model, memory_report, quantize,
                    save_quant_model)
from .segmentation import extract_walking_intervals, segment_stream
from .streaming import UNKNOWN, PredictionEvent, StreamEngine, replay, smooth
from .tinycnn import (ModelConfig, ModelParams, TrainConfig, build_model, evaluate,
                      load_model, save_model, train)

__version__ = "0.1.0"

__all__ = [
    "CalibrationError", "ConfigError", "DatasetError", "DegenerateInputError",
    "FormatError", "GaitError", "ModeError", "ParseError", "ShapeError", "SizeError",
    "UnsupportedVersionError", "FeatureGrid", "featurize", "featurize_many", "real_fft",
    "welch_power", "GaitProfile", "GaitSegment", "ImuStream", "ImuWindow",
    "default_profiles", "load_segments", "load_stream", "save_segments", "save_stream",
    "synthesize_gait", "QuantModel", "calibrate", "load_quant_model", "memory_report",
    "quantize", "save_quant_model", "extract_walking_intervals", "segment_stream",
    "UNKNOWN", "PredictionEvent", "StreamEngine", "replay", "smooth", "ModelConfig",
    "ModelParams", "TrainConfig", "build_model", "evaluate", "load_model", "save_model",
    "train",
]
