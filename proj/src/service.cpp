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

#include "drscreen/service.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <httplib.h>

#include "drscreen/dataset_io.hpp"
#include "drscreen/errors.hpp"
#include "drscreen/model_io.hpp"
#include "drscreen/pipeline.hpp"

namespace drscreen {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ApiResponse json_response(int status, const ordered_json& body) {
  return ApiResponse{status, "application/json", body.dump()};
}

ApiResponse error_response(int status, const std::string& message) {
  ordered_json j;
  j["error"] = message;
  return json_response(status, j);
}

std::optional<std::string> media_extension(std::string_view bytes) {
  static constexpr std::string_view kPng = "\x89PNG\r\n\x1a\n";
  if (bytes.substr(0, kPng.size()) == kPng) return ".png";
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
      static_cast<unsigned char>(bytes[1]) == 0xD8 && static_cast<unsigned char>(bytes[2]) == 0xFF) {
    return ".jpg";
  }
  return std::nullopt;
}

// Grade given as 0..4 or a grade name such as "SEVERE".
std::optional<DrGrade> grade_value(const json& v) {
  if (v.is_number_integer()) {
    const auto g = v.get<long long>();
    if (g < 0 || g >= kGradeCount) return std::nullopt;
    return static_cast<DrGrade>(g);
  }
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    for (int g = 0; g < kGradeCount; ++g) {
      if (s == grade_name(static_cast<DrGrade>(g))) return static_cast<DrGrade>(g);
    }
  }
  return std::nullopt;
}

ordered_json grade_map_int(const std::array<int, kGradeCount>& values,
                           std::span<const DrGrade> classes) {
  ordered_json j = ordered_json::object();
  for (auto g : classes) j[std::string(grade_name(g))] = values[grade_id(g)];
  return j;
}

ordered_json grade_map_double(const std::array<double, kGradeCount>& values,
                              std::span<const DrGrade> classes) {
  ordered_json j = ordered_json::object();
  for (auto g : classes) j[std::string(grade_name(g))] = values[grade_id(g)];
  return j;
}

}  // namespace

// ---- prediction documents ----

PredictResponse predict_image(const SvmModel& model, const DetectorConfig& detector,
                              const DetectInput& input, std::string model_version) {
  PredictResponse r;
  r.image_id = input.image_id;
  r.model_version = std::move(model_version);
  r.model_classes = model.classes;
  r.count_classes = model.feature_classes;
  r.detections = detect(input, detector);
  std::erase_if(r.detections,
                [&](const Detection& d) { return !model.feature_classes.contains(d.lesion); });
  r.counts = extract_counts(input.image_id, r.detections, model.feature_classes,
                            model.confidence_weighted);
  r.prediction = classify_counts(model, r.counts.values);
  return r;
}

json to_json(const PredictResponse& r) {
  ordered_json j;
  j["image_id"] = r.image_id;
  j["model_version"] = r.model_version;
  j["grade"] = grade_id(r.prediction.grade);
  j["grade_name"] = grade_name(r.prediction.grade);
  j["grade_display"] = grade_display_name(r.prediction.grade);
  auto dets = ordered_json::array();
  for (const auto& d : r.detections) {
    ordered_json dj;
    dj["class"] = lesion_name(d.lesion);
    dj["class_id"] = lesion_id(d.lesion);
    dj["box"] = {{"cx", d.box.cx}, {"cy", d.box.cy}, {"w", d.box.w}, {"h", d.box.h}};
    dj["confidence"] = d.confidence;
    dets.push_back(dj);
  }
  j["detections"] = dets;
  ordered_json counts = ordered_json::object();
  const auto classes = r.count_classes.classes();
  for (std::size_t i = 0; i < classes.size() && i < r.counts.values.size(); ++i) {
    counts[std::string(lesion_name(classes[i]))] = r.counts.values[i];
  }
  j["counts"] = counts;
  j["votes"] = grade_map_int(r.prediction.votes, r.model_classes);
  j["scores"] = grade_map_double(r.prediction.scores, r.model_classes);
  return json::parse(j.dump());
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string model_fingerprint(const SvmModel& model) {
  return "sha256:" + sha256_hex(model_to_json(model).dump()).substr(0, 16);
}

// ---- triage ----

json to_json(const TriageRecord& r) {
  ordered_json j;
  j["record_id"] = r.record_id;
  j["image_id"] = r.image_id;
  j["predicted_grade"] = grade_id(r.predicted_grade);
  j["clinician_grade"] = grade_id(r.clinician_grade);
  j["override"] = r.is_override();
  j["reviewer_id"] = r.reviewer_id;
  j["timestamp"] = r.timestamp;
  j["note"] = r.note;
  return json::parse(j.dump());
}

TriageRecord triage_record_from_json(const json& j) {
  TriageRecord r;
  try {
    r.record_id = j.at("record_id").get<std::uint64_t>();
    r.image_id = j.at("image_id").get<std::string>();
    r.predicted_grade = grade_from_int(j.at("predicted_grade").get<long long>());
    r.clinician_grade = grade_from_int(j.at("clinician_grade").get<long long>());
    r.reviewer_id = j.value("reviewer_id", std::string());
    r.timestamp = j.at("timestamp").get<std::string>();
    r.note = j.value("note", std::string());
  } catch (const json::exception& e) {
    throw LoadError(std::string("triage record: ") + e.what());
  } catch (const DomainError& e) {
    throw LoadError(std::string("triage record: ") + e.what());
  }
  return r;
}

TriageLog::TriageLog(fs::path path) : path_(std::move(path)) {
  if (!fs::exists(path_)) return;
  std::ifstream in(path_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records_.push_back(triage_record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw LoadError(path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    last_timestamp_ = std::max(last_timestamp_, records_.back().timestamp);
  }
}

TriageRecord TriageLog::append(TriageRecord record) {
  std::lock_guard lock(mutex_);
  record.record_id = records_.empty() ? 1 : records_.back().record_id + 1;
  record.timestamp = std::max(utc_timestamp(), last_timestamp_);
  if (!path_.parent_path().empty()) fs::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  out << to_json(record).dump() << '\n';
  out.flush();
  if (!out) throw IoError("cannot append to triage log '" + path_.string() + "'");
  last_timestamp_ = record.timestamp;
  records_.push_back(record);
  return record;
}

std::vector<TriageRecord> TriageLog::list(std::string_view image_id) const {
  std::lock_guard lock(mutex_);
  std::vector<TriageRecord> out;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (image_id.empty() || it->image_id == image_id) out.push_back(*it);
  }
  return out;
}

std::size_t TriageLog::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

ImageStore::ImageStore(fs::path dir, std::size_t cap) : dir_(std::move(dir)), cap_(cap) {
  if (cap_ == 0) throw DomainError("image store cap must be positive");
  fs::create_directories(dir_);
  std::vector<std::pair<fs::file_time_type, fs::path>> existing;
  for (const auto& e : fs::directory_iterator(dir_)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind("img-", 0) == 0 &&
        (e.path().extension() == ".png" || e.path().extension() == ".jpg")) {
      existing.emplace_back(e.last_write_time(), e.path());
    }
  }
  std::sort(existing.begin(), existing.end());
  for (const auto& [t, p] : existing) {
    const auto id = p.stem().string();
    files_[id] = p;
    touch_locked(id);
  }
  evict_locked();
}

std::string ImageStore::put(std::string_view bytes, std::string_view ext) {
  const auto id = "img-" + sha256_hex(bytes).substr(0, 16);
  std::lock_guard lock(mutex_);
  if (!files_.contains(id)) {
    const auto path = dir_ / (id + std::string(ext));
    write_text_file(path, bytes);
    files_[id] = path;
  }
  touch_locked(id);
  evict_locked();
  return id;
}

std::optional<fs::path> ImageStore::find(std::string_view id) {
  std::lock_guard lock(mutex_);
  const auto it = files_.find(std::string(id));
  if (it == files_.end()) return std::nullopt;
  touch_locked(it->first);
  return it->second;
}

bool ImageStore::contains(std::string_view id) {
  std::lock_guard lock(mutex_);
  return files_.contains(std::string(id));
}

std::size_t ImageStore::size() const {
  std::lock_guard lock(mutex_);
  return files_.size();
}

void ImageStore::set_prediction(std::string_view id, DrGrade grade) {
  std::lock_guard lock(mutex_);
  predictions_[std::string(id)] = grade;
}

std::optional<DrGrade> ImageStore::prediction(std::string_view id) const {
  std::lock_guard lock(mutex_);
  const auto it = predictions_.find(std::string(id));
  if (it == predictions_.end()) return std::nullopt;
  return it->second;
}

void ImageStore::touch_locked(const std::string& id) { last_use_[id] = ++clock_; }

void ImageStore::evict_locked() {
  while (files_.size() > cap_) {
    auto oldest = last_use_.begin();
    for (auto it = last_use_.begin(); it != last_use_.end(); ++it) {
      if (it->second < oldest->second) oldest = it;
    }
    const auto id = oldest->first;
    std::error_code ec;
    fs::remove(files_.at(id), ec);
    files_.erase(id);
    predictions_.erase(id);
    last_use_.erase(oldest);
  }
}

// ---- service ----

Service::Service(ServiceConfig config, std::optional<SvmModel> model, DetectorConfig detector)
    : config_(std::move(config)),
      model_(std::move(model)),
      detector_(std::move(detector)),
      images_(config_.data_dir / "images", config_.image_cap),
      triage_(config_.data_dir / "triage.jsonl") {
  detector_.validate();
  if (model_) model_version_ = model_fingerprint(*model_);
}

std::unique_ptr<Service> Service::from_config(const ServiceConfig& config) {
  std::optional<SvmModel> model;
  if (!config.model_path.empty()) model = load_model(config.model_path);
  DetectorConfig detector;
  if (!config.detector_config.empty()) detector = load_detector_config(config.detector_config);
  return std::make_unique<Service>(config, std::move(model), std::move(detector));
}

ApiResponse Service::handle(const ApiRequest& req) {
  try {
    if (req.method == "GET" && req.path == "/healthz") return ApiResponse{200, "text/plain", "ok"};
    if (req.path == "/api/v1/predict") {
      if (req.method != "POST") return error_response(405, "use POST");
      return predict(req);
    }
    if (req.path == "/api/v1/model") {
      if (req.method != "GET") return error_response(405, "use GET");
      return model_info();
    }
    if (req.path == "/api/v1/triage") {
      if (req.method == "POST") return post_triage(req);
      if (req.method == "GET") return get_triage(req);
      return error_response(405, "use GET or POST");
    }
    static constexpr std::string_view kImages = "/api/v1/images/";
    if (req.method == "GET" && req.path.rfind(kImages, 0) == 0) {
      return image(std::string_view(req.path).substr(kImages.size()));
    }
    return error_response(404, "no route for " + req.method + " " + req.path);
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

ApiResponse Service::predict(const ApiRequest& req) {
  if (!model_) return error_response(503, "no model loaded");

  std::string_view bytes = req.body;
  std::string filename;
  if (const auto it = req.parts.find("image"); it != req.parts.end()) {
    bytes = it->second.content;
    filename = it->second.filename;
  } else if (req.content_type.rfind("multipart/form-data", 0) == 0) {
    return error_response(400, "multipart upload has no 'image' field");
  } else if (const auto q = req.query.find("name"); q != req.query.end()) {
    filename = q->second;
  }
  if (bytes.empty()) return error_response(400, "empty upload");
  if (bytes.size() > config_.max_upload) {
    return error_response(413, "upload of " + std::to_string(bytes.size()) + " bytes exceeds " +
                                   std::to_string(config_.max_upload));
  }
  const auto ext = media_extension(bytes);
  if (!ext) return error_response(415, "only PNG and JPEG images are accepted");

  const auto id = images_.put(bytes, *ext);
  DetectInput input;
  input.image_id = id;
  input.image_path = *images_.find(id);
  try {
    if (const auto t = req.parts.find("truth"); t != req.parts.end()) {
      input.truth = parse_annotations(t->second.content, "truth");
    } else if (detector_.mode == DetectorMode::Oracle && !detector_.truth_dir.empty() &&
               !filename.empty()) {
      const auto path = detector_.truth_dir / (fs::path(filename).stem().string() + ".txt");
      if (fs::exists(path)) input.truth = read_annotation_file(path, id);
    }
  } catch (const ParseError& e) {
    return error_response(400, std::string("bad truth annotations: ") + e.what());
  }

  try {
    auto response = predict_image(*model_, detector_, input, model_version_);
    images_.set_prediction(id, response.prediction.grade);
    return json_response(200, ordered_json::parse(to_json(response).dump()));
  } catch (const DetectorError& e) {
    std::string diag;
    {
      std::lock_guard lock(diag_mutex_);
      char buf[48];
      std::snprintf(buf, sizeof(buf), "diag-%06llu",
                    static_cast<unsigned long long>(++diag_counter_));
      diag = buf;
    }
    std::cerr << "[" << diag << "] detector failure for " << id << ": " << e.what() << "\n";
    try {
      write_text_file(config_.data_dir / "diagnostics" / (diag + ".txt"), e.what());
    } catch (const Error&) {
    }
    ordered_json j;
    j["error"] = "detector failed";
    j["diagnostic_id"] = diag;
    j["image_id"] = id;
    return json_response(502, j);
  }
}

ApiResponse Service::model_info() const {
  if (!model_) return error_response(503, "no model loaded");
  const auto& m = *model_;
  ordered_json j;
  j["model_version"] = model_version_;
  j["schema_version"] = m.schema_version;
  auto classes = ordered_json::array();
  for (auto g : m.classes) {
    classes.push_back({{"id", grade_id(g)}, {"name", grade_name(g)}, {"display", grade_display_name(g)}});
  }
  j["classes"] = classes;
  auto fc = ordered_json::array();
  for (auto c : m.feature_classes.classes()) fc.push_back(lesion_name(c));
  j["feature_classes"] = fc;
  j["kernel"] = kernel_name(m.config.kernel);
  j["C"] = m.config.C;
  j["gamma"] = m.config.gamma.to_string();
  j["resolved_gamma"] = m.resolved_gamma;
  j["machines"] = m.machines.size();
  j["metadata"] = ordered_json::parse(m.metadata.dump());
  j["reference"] = {{"svm_train_accuracy", ReferenceScores::kSvmTrainAccuracy},
                    {"svm_test_accuracy", ReferenceScores::kSvmTestAccuracy},
                    {"svm_f1", ReferenceScores::kSvmF1},
                    {"svm_precision", ReferenceScores::kSvmPrecision},
                    {"detector_accuracy", ReferenceScores::kDetectorAccuracy},
                    {"detector_f1", ReferenceScores::kDetectorF1},
                    {"detector_precision", ReferenceScores::kDetectorPrecision},
                    {"note", "published figures on a different corpus; informational only"}};
  return json_response(200, j);
}

ApiResponse Service::image(std::string_view id) {
  const auto path = images_.find(id);
  if (!path) return error_response(404, "unknown image_id '" + std::string(id) + "'");
  return ApiResponse{200, path->extension() == ".png" ? "image/png" : "image/jpeg",
                     read_text_file(*path)};
}

ApiResponse Service::post_triage(const ApiRequest& req) {
  json body;
  try {
    body = json::parse(req.body);
  } catch (const json::exception&) {
    return error_response(400, "body is not valid JSON");
  }
  if (!body.is_object()) return error_response(400, "body must be a JSON object");
  if (!body.contains("image_id") || !body.at("image_id").is_string()) {
    return error_response(422, "field 'image_id' must be a string");
  }
  TriageRecord rec;
  rec.image_id = body.at("image_id").get<std::string>();
  if (!images_.contains(rec.image_id)) {
    return error_response(404, "unknown image_id '" + rec.image_id + "'");
  }
  const auto clinician = body.contains("clinician_grade") ? grade_value(body.at("clinician_grade"))
                                                          : std::nullopt;
  if (!clinician) return error_response(422, "field 'clinician_grade' must be a grade 0..4");
  rec.clinician_grade = *clinician;
  if (body.contains("predicted_grade")) {
    const auto p = grade_value(body.at("predicted_grade"));
    if (!p) return error_response(422, "field 'predicted_grade' must be a grade 0..4");
    rec.predicted_grade = *p;
  } else if (const auto p = images_.prediction(rec.image_id)) {
    rec.predicted_grade = *p;
  } else {
    return error_response(422, "field 'predicted_grade' is required for this image");
  }
  for (const char* key : {"reviewer_id", "note"}) {
    if (body.contains(key) && !body.at(key).is_string()) {
      return error_response(422, std::string("field '") + key + "' must be a string");
    }
  }
  rec.reviewer_id = body.value("reviewer_id", std::string());
  rec.note = body.value("note", std::string());
  const auto stored = triage_.append(std::move(rec));
  return json_response(201, ordered_json::parse(to_json(stored).dump()));
}

ApiResponse Service::get_triage(const ApiRequest& req) {
  std::string image_id;
  if (const auto it = req.query.find("image_id"); it != req.query.end()) image_id = it->second;
  const auto records = triage_.list(image_id);
  if (!image_id.empty() && records.empty() && !images_.contains(image_id)) {
    return error_response(404, "unknown image_id '" + image_id + "'");
  }
  auto arr = ordered_json::array();
  for (const auto& r : records) arr.push_back(ordered_json::parse(to_json(r).dump()));
  return json_response(200, arr);
}

// ---- HTTP adapter ----

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;

  explicit Impl(Service& s) : service(s) {
    server.set_payload_max_length(service.config().max_upload);
    const auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      ApiRequest api;
      api.method = req.method;
      api.path = req.path;
      for (const auto& [k, v] : req.params) api.query.emplace(k, v);
      api.content_type = req.get_header_value("Content-Type");
      api.body = req.body;
      for (const auto& [name, file] : req.files) {
        api.parts.emplace(name, ApiPart{file.filename, file.content_type, file.content});
      }
      const auto out = service.handle(api);
      res.status = out.status;
      res.set_content(out.body, out.content_type);
    };
    server.Get(R"(/.*)", handler);
    server.Post(R"(/.*)", handler);
    server.Put(R"(/.*)", handler);
    server.Delete(R"(/.*)", handler);
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        ordered_json j;
        j["error"] = res.status == 413 ? "upload too large" : httplib::status_message(res.status);
        res.set_content(j.dump(), "application/json");
      }
    });
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace drscreen
