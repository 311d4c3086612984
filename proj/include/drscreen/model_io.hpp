// Copyright 2026 The drscreen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "drscreen/svm.hpp"

namespace drscreen {

/// Model file: one JSON document.
///
///   {
///     "format": "drscreen.svm-model",
///     "schema_version": 1,
///     "classes": [0, 1, ...],                    grade ids, ascending
///     "feature_classes": ["MICROANEURYSM", ...], count columns read
///     "confidence_weighted": false,
///     "hyperparameters": {C, kernel, gamma, resolved_gamma, tol, max_passes, seed},
///     "preprocess": {input_dim, selected_indices, variance_floor, scaler, pca},
///     "machines": [{negative, positive, kernel: {kind, gamma}, C, bias,
///                   dual_coefs: [...], support_vectors: [[...], ...]}],
///     "metadata": {...}                          free-form (creation time, report summary)
///   }
///
/// Numbers are written in shortest round-trip form, so a reloaded model
/// reproduces every decision value bit for bit.
inline constexpr std::string_view kModelFormat = "drscreen.svm-model";

nlohmann::json model_to_json(const SvmModel& model);
/// Throws LoadError naming the first bad field.
SvmModel model_from_json(const nlohmann::json& j);

void save_model(const SvmModel& model, const std::filesystem::path& path);
SvmModel load_model(const std::filesystem::path& path);

}  // namespace drscreen
