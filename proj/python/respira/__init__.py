# Copyright 2026 The Respira Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#  http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Respiratory-sound classification with attribution-driven band selection."""

from respira._core import (
    ConfigError,
    DataError,
    Error,
    FbsConfig,
    FrequencyMask,
    FrontendConfig,
    Model,
    ModelConfig,
    NumericalError,
    ShapeError,
    Spectrogram,
    SynthSpec,
    TrainConfig,
    attribute,
    count_flops,
    fbs_backward,
    fbs_importance,
    log_mel,
    metrics_from_confusion,
    metrics_from_se_sp,
    parameter_count,
    synth_corpus,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "FbsConfig",
    "FrequencyMask",
    "FrontendConfig",
    "Model",
    "ModelConfig",
    "NumericalError",
    "ShapeError",
    "Spectrogram",
    "SynthSpec",
    "TrainConfig",
    "attribute",
    "count_flops",
    "fbs_backward",
    "fbs_importance",
    "log_mel",
    "metrics_from_confusion",
    "metrics_from_se_sp",
    "parameter_count",
    "synth_corpus",
    "train",
]
