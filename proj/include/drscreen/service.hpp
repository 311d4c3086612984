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

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "drscreen/detector.hpp"
#include "drscreen/features.hpp"
#include "drscreen/svm.hpp"

namespace drscreen {

inline constexpr std::size_t kDefaultMaxUpload = 16u * 1024u * 1024u;
inline constexpr std::size_t kDefaultImageCap = 1000;

// ---- prediction documents ----

/// What the service (and `drscreen predict`) returns for one image. Counts
/// are always extract_counts over `detections` with the model's classes.
struct PredictResponse {
  std::string image_id;
  std::vector<Detection> detections;
  FeatureVector counts;
  LesionSet count_classes;
  Prediction prediction;
  std::vector<DrGrade> model_classes;
  std::string model_version;
};

/// Runs the detector on one image, keeps detections of the model's classes,
/// counts them and predicts.
PredictResponse predict_image(const SvmModel& model, const DetectorConfig& detector,
                              const DetectInput& input, std::string model_version);

/// {
///   "image_id", "model_version",
///   "grade": <0..4>, "grade_name": "MILD", "grade_display": "Mild",
///   "detections": [{"class": "MICROANEURYSM", "class_id": 0,
///                   "box": {"cx","cy","w","h"}, "confidence"}],
///   "counts": {"MICROANEURYSM": 2, ...},
///   "votes": {"NO_DR": 0, ...}, "scores": {"NO_DR": 0.0, ...}
/// }
nlohmann::json to_json(const PredictResponse& response);

/// "sha256:" + first 16 hex digits of the SHA-256 of the model document.
std::string model_fingerprint(const SvmModel& model);
std::string sha256_hex(std::string_view bytes);

// ---- triage ----

struct TriageRecord {
  std::uint64_t record_id = 0;
  std::string image_id;
  DrGrade predicted_grade = DrGrade::NoDr;
  DrGrade clinician_grade = DrGrade::NoDr;
  std::string reviewer_id;
  std::string timestamp;  // UTC, second precision
  std::string note;

  bool is_override() const noexcept { return predicted_grade != clinician_grade; }
};

nlohmann::json to_json(const TriageRecord& record);
TriageRecord triage_record_from_json(const nlohmann::json& j);

/// Append-only JSON-lines log. Record ids are sequential from 1; timestamps
/// never go backwards within the log.
class TriageLog {
 public:
  explicit TriageLog(std::filesystem::path path);

  /// Assigns record_id and timestamp, appends, and returns the stored record.
  TriageRecord append(TriageRecord record);
  /// Records for `image_id` (all records when empty), newest first.
  std::vector<TriageRecord> list(std::string_view image_id = {}) const;
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::vector<TriageRecord> records_;
  std::string last_timestamp_;
};

/// Uploaded images under content-hash ids. Writes are atomic; beyond `cap`
/// images the least recently used one is removed.
class ImageStore {
 public:
  ImageStore(std::filesystem::path dir, std::size_t cap);

  /// Returns the id ("img-" + 16 hex digits of SHA-256). `ext` is ".png" or
  /// ".jpg".
  std::string put(std::string_view bytes, std::string_view ext);
  std::optional<std::filesystem::path> find(std::string_view id);
  bool contains(std::string_view id);
  std::size_t size() const;

  void set_prediction(std::string_view id, DrGrade grade);
  std::optional<DrGrade> prediction(std::string_view id) const;

 private:
  void touch_locked(const std::string& id);
  void evict_locked();

  std::filesystem::path dir_;
  std::size_t cap_;
  mutable std::mutex mutex_;
  std::map<std::string, std::filesystem::path> files_;
  std::map<std::string, std::uint64_t> last_use_;
  std::map<std::string, DrGrade> predictions_;
  std::uint64_t clock_ = 0;
};

// ---- HTTP API ----

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path model_path;     // empty: start without a model (503s)
  std::filesystem::path detector_config;  // empty: default oracle detector
  std::filesystem::path data_dir = "drscreen-data";
  std::size_t max_upload = kDefaultMaxUpload;
  std::size_t image_cap = kDefaultImageCap;
};

struct ApiPart {
  std::string filename;
  std::string content_type;
  std::string content;
};

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string content_type;
  std::string body;
  std::map<std::string, ApiPart> parts;  // multipart fields by name
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Endpoints:
///   GET  /healthz                 200 "ok"
///   GET  /api/v1/model            model metadata (503 without a model)
///   POST /api/v1/predict          multipart field "image" (optional field
///                                 "truth": annotation text for the oracle
///                                 detector) or a raw PNG/JPEG body
///   GET  /api/v1/images/<id>      stored upload
///   POST /api/v1/triage           {image_id, clinician_grade, reviewer_id,
///                                  note, predicted_grade?} -> 201
///   GET  /api/v1/triage?image_id= records, newest first
/// Errors are {"error": message} with 400, 404, 413, 415, 422, 502 or 503.
class Service {
 public:
  Service(ServiceConfig config, std::optional<SvmModel> model, DetectorConfig detector);

  /// Loads the model and detector config named in `config`.
  static std::unique_ptr<Service> from_config(const ServiceConfig& config);

  ApiResponse handle(const ApiRequest& request);

  const ServiceConfig& config() const noexcept { return config_; }
  bool has_model() const noexcept { return model_.has_value(); }

 private:
  ApiResponse predict(const ApiRequest& request);
  ApiResponse model_info() const;
  ApiResponse image(std::string_view id);
  ApiResponse post_triage(const ApiRequest& request);
  ApiResponse get_triage(const ApiRequest& request);

  ServiceConfig config_;
  std::optional<SvmModel> model_;
  std::string model_version_;
  DetectorConfig detector_;
  ImageStore images_;
  TriageLog triage_;
  std::mutex diag_mutex_;
  std::uint64_t diag_counter_ = 0;
};

/// Serves `service` over HTTP until stop() is called.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks serving requests.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace drscreen
