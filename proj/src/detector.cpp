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

#include "drscreen/detector.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>

#include <opencv2/imgcodecs.hpp>

#include "drscreen/errors.hpp"
#include "drscreen/process.hpp"
#include "drscreen/rng.hpp"
#include "drscreen/synthetic.hpp"

namespace drscreen {
namespace {

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::string box_key(std::string_view image_id, const Detection& d) {
  std::string key(image_id);
  key += '|';
  key += format_annotations(std::span<const Detection>(&d, 1), false);
  return key;
}

bool intersects(const BBox& a, const BBox& b) {
  return a.x_min() < b.x_max() && b.x_min() < a.x_max() && a.y_min() < b.y_max() &&
         b.y_min() < a.y_max();
}

std::vector<Detection> filter(std::vector<Detection> dets, const DetectorConfig& config) {
  std::erase_if(dets, [&](const Detection& d) {
    return d.confidence < config.confidence_threshold || !config.class_subset.contains(d.lesion);
  });
  return dets;
}

fs::path unique_exchange_dir(const fs::path& root) {
  static std::atomic<std::uint64_t> counter{0};
  const auto now = std::chrono::steady_clock::now().time_since_epoch().count();
  return root / ("run-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" +
                 std::to_string(now));
}

std::string tail(const std::string& s, std::size_t n) {
  return s.size() <= n ? s : "..." + s.substr(s.size() - n);
}

AnnotationMap run_external(std::span<const DetectInput> inputs, const DetectorConfig& config) {
  const fs::path root = config.exchange_dir.empty()
                            ? fs::temp_directory_path() / "drscreen-exchange"
                            : config.exchange_dir;
  const auto work = unique_exchange_dir(root);
  const auto input_dir = work / "input";
  const auto output_dir = work / "output";
  std::error_code ec;
  fs::create_directories(input_dir, ec);
  fs::create_directories(output_dir, ec);
  if (ec) throw DetectorError("cannot create exchange directory '" + work.string() + "'");

  std::vector<std::string> ids;
  for (const auto& in : inputs) {
    if (!fs::exists(in.image_path)) {
      throw DetectorError("image for '" + in.image_id + "' not found at '" +
                          in.image_path.string() + "'");
    }
    fs::copy_file(in.image_path, input_dir / (in.image_id + in.image_path.extension().string()),
                  fs::copy_options::overwrite_existing, ec);
    if (ec) throw DetectorError("cannot stage image '" + in.image_id + "': " + ec.message());
    ids.push_back(in.image_id);
  }

  char conf[32];
  std::snprintf(conf, sizeof(conf), "%g", config.confidence_threshold);
  std::vector<std::string> argv;
  for (const auto& arg : config.external_command) {
    auto a = replace_all(arg, "{input_dir}", input_dir.string());
    a = replace_all(a, "{output_dir}", output_dir.string());
    argv.push_back(replace_all(a, "{conf}", conf));
  }

  const auto result = run_process(argv);
  if (result.exit_code != 0) {
    throw DetectorError("external detector exited with status " +
                        std::to_string(result.exit_code) + " (exchange dir kept at '" +
                        work.string() + "'); output: " + tail(result.output, 4000));
  }
  AnnotationMap parsed;
  try {
    parsed = parse_detection_output(output_dir, ids);
  } catch (const ParseError& e) {
    throw DetectorError(std::string("unparsable detector output (exchange dir kept at '") +
                        work.string() + "'): " + e.what() +
                        "; tool output: " + tail(result.output, 2000));
  }
  fs::remove_all(work, ec);
  for (auto& [id, dets] : parsed) dets = filter(std::move(dets), config);
  return parsed;
}

}  // namespace

void OraclePerturbation::validate() const {
  const auto rate_ok = [](double r) { return r >= 0.0 && r < 1.0; };
  if (!rate_ok(drop_rate) && drop_rate != 1.0) throw DomainError("drop_rate must be in [0,1]");
  if (!rate_ok(spurious_rate)) throw DomainError("spurious_rate must be in [0,1)");
  if (!(jitter >= 0.0)) throw DomainError("jitter must be non-negative");
}

void DetectorConfig::validate() const {
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
    throw DomainError("confidence_threshold must be in [0,1]");
  }
  if (mode == DetectorMode::External && external_command.empty()) {
    throw DomainError("external detector mode requires a command");
  }
  if (class_subset.empty()) throw DomainError("class_subset is empty");
  perturbation.validate();
}

DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  try {
    const auto mode = j.value("mode", std::string("oracle"));
    if (mode == "oracle") {
      c.mode = DetectorMode::Oracle;
    } else if (mode == "external") {
      c.mode = DetectorMode::External;
    } else {
      throw DomainError("unknown detector mode '" + mode + "'");
    }
    if (j.contains("command")) c.external_command = j.at("command").get<std::vector<std::string>>();
    c.confidence_threshold = j.value("confidence_threshold", c.confidence_threshold);
    if (j.contains("class_subset")) {
      LesionSet s;
      for (const auto& n : j.at("class_subset")) s.insert(lesion_from_name(n.get<std::string>()));
      c.class_subset = s;
    }
    if (j.contains("truth_dir")) c.truth_dir = j.at("truth_dir").get<std::string>();
    if (j.contains("exchange_dir")) c.exchange_dir = j.at("exchange_dir").get<std::string>();
    if (j.contains("perturbation")) {
      const auto& p = j.at("perturbation");
      c.perturbation.drop_rate = p.value("drop_rate", 0.0);
      c.perturbation.spurious_rate = p.value("spurious_rate", 0.0);
      c.perturbation.jitter = p.value("jitter", 0.0);
      c.perturbation.seed = p.value("seed", std::uint64_t{42});
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("detector config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const DetectorConfig& c) {
  nlohmann::ordered_json j;
  j["mode"] = c.mode == DetectorMode::Oracle ? "oracle" : "external";
  j["command"] = c.external_command;
  j["confidence_threshold"] = c.confidence_threshold;
  auto names = nlohmann::ordered_json::array();
  for (auto cls : c.class_subset.classes()) names.push_back(lesion_name(cls));
  j["class_subset"] = names;
  if (!c.truth_dir.empty()) j["truth_dir"] = c.truth_dir.string();
  if (!c.exchange_dir.empty()) j["exchange_dir"] = c.exchange_dir.string();
  j["perturbation"] = {{"drop_rate", c.perturbation.drop_rate},
                       {"spurious_rate", c.perturbation.spurious_rate},
                       {"jitter", c.perturbation.jitter},
                       {"seed", c.perturbation.seed}};
  return nlohmann::json(j);
}

DetectorConfig load_detector_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw LoadError(e.what());
  }
  auto c = detector_config_from_json(j);
  const auto base = fs::absolute(path).parent_path();
  if (!c.truth_dir.empty() && c.truth_dir.is_relative()) c.truth_dir = base / c.truth_dir;
  if (!c.exchange_dir.empty() && c.exchange_dir.is_relative()) c.exchange_dir = base / c.exchange_dir;
  return c;
}

std::vector<Detection> oracle_detect(std::string_view image_id, std::span<const Detection> truth,
                                     const OraclePerturbation& p, const LesionSet& class_subset,
                                     double min_spurious_confidence) {
  p.validate();
  std::vector<Detection> out;
  if (p.is_identity()) {
    out.assign(truth.begin(), truth.end());
    for (auto& d : out) d.confidence = 1.0;
    return out;
  }
  const auto classes = class_subset.classes();
  for (const auto& t : truth) {
    Rng rng(derive_seed(p.seed, box_key(image_id, t)));
    if (!rng.bernoulli(p.drop_rate)) {
      Detection d = t;
      d.confidence = 1.0;
      if (p.jitter > 0.0) {
        d.box.cx += rng.uniform(-p.jitter, p.jitter) * t.box.w;
        d.box.cy += rng.uniform(-p.jitter, p.jitter) * t.box.h;
        d.box.w = std::max(t.box.w * 1e-3, t.box.w + rng.uniform(-p.jitter, p.jitter) * t.box.w);
        d.box.h = std::max(t.box.h * 1e-3, t.box.h + rng.uniform(-p.jitter, p.jitter) * t.box.h);
      }
      if (auto clipped = clip_to_unit(d.box)) {
        d.box = *clipped;
        out.push_back(d);
      }
    }
    if (!classes.empty() && rng.bernoulli(p.spurious_rate)) {
      Detection s;
      s.lesion = classes[rng.below(classes.size())];
      s.confidence = rng.uniform(min_spurious_confidence, 1.0);
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double w = rng.uniform(0.02, 0.10);
        const double h = rng.uniform(0.02, 0.10);
        s.box = BBox{rng.uniform(w / 2, 1.0 - w / 2), rng.uniform(h / 2, 1.0 - h / 2), w, h};
        const bool touches = std::any_of(truth.begin(), truth.end(), [&](const Detection& o) {
          return intersects(o.box, s.box);
        });
        if (!touches) break;
      }
      out.push_back(s);
    }
  }
  return out;
}

std::vector<Detection> detect(const DetectInput& input, const DetectorConfig& config) {
  auto result = detect_batch(std::span<const DetectInput>(&input, 1), config);
  auto it = result.find(input.image_id);
  return it == result.end() ? std::vector<Detection>{} : std::move(it->second);
}

AnnotationMap detect_batch(std::span<const DetectInput> inputs, const DetectorConfig& config) {
  config.validate();
  if (config.mode == DetectorMode::External) return run_external(inputs, config);

  AnnotationMap out;
  for (const auto& in : inputs) {
    std::vector<Detection> truth;
    if (in.truth) {
      truth = *in.truth;
    } else if (!config.truth_dir.empty()) {
      const auto path = config.truth_dir / (in.image_id + ".txt");
      if (!fs::exists(path)) {
        throw DetectorError("oracle detector has no truth for '" + in.image_id + "' in '" +
                            config.truth_dir.string() + "'");
      }
      try {
        truth = read_annotation_file(path, in.image_id);
      } catch (const ParseError& e) {
        throw DetectorError(std::string("oracle truth unreadable: ") + e.what());
      }
    } else {
      throw DetectorError("oracle detector requires truth annotations for '" + in.image_id + "'");
    }
    out[in.image_id] = filter(oracle_detect(in.image_id, truth, config.perturbation,
                                            config.class_subset, config.confidence_threshold),
                              config);
  }
  return out;
}

AnnotationMap parse_detection_output(const fs::path& dir, std::span<const std::string> expected_ids) {
  AnnotationMap out;
  const AnnotationParseOptions strict{.require_confidence = true};
  if (expected_ids.empty()) {
    if (!fs::is_directory(dir)) return out;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto id = f.stem().string();
      out[id] = read_annotation_file(f, id, strict);
    }
    return out;
  }
  for (const auto& id : expected_ids) {
    const auto f = dir / (id + ".txt");
    out[id] = fs::exists(f) ? read_annotation_file(f, id, strict) : std::vector<Detection>{};
  }
  return out;
}

fs::path prepare_training_bundle(const Dataset& dataset, const fs::path& out_dir,
                                 const BundleOptions& options) {
  if (dataset.records.empty()) throw BundleError("dataset has no records");
  for (const auto& r : dataset.records) {
    if (!dataset.annotations.contains(r.image_id)) {
      throw BundleError("no annotations for image '" + r.image_id + "'");
    }
    if (!fs::exists(dataset.image_path(r.image_id))) {
      throw BundleError("image file for '" + r.image_id + "' not found in '" +
                        dataset.image_dir.string() + "'");
    }
  }

  std::vector<bool> is_val(dataset.records.size(), false);
  {
    std::vector<std::size_t> idx(dataset.records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(options.seed);
    rng.shuffle(idx);
    const auto n_val = static_cast<std::size_t>(
        std::llround(static_cast<double>(idx.size()) * options.val_fraction));
    for (std::size_t k = 0; k < n_val && k < idx.size(); ++k) is_val[idx[k]] = true;
  }

  for (const char* part : {"train", "val"}) {
    fs::create_directories(out_dir / "images" / part);
    fs::create_directories(out_dir / "labels" / part);
  }
  std::string train_list;
  std::string val_list;

  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& id = dataset.records[i].image_id;
    const std::string part = is_val[i] ? "val" : "train";
    const auto src = dataset.image_path(id);
    cv::Mat image = cv::imread(src.string(), cv::IMREAD_COLOR);
    if (image.empty()) throw BundleError("cannot decode image for '" + id + "'");
    const auto& boxes = dataset.annotations.at(id);

    const auto emit = [&](const std::string& name, const cv::Mat& img,
                          std::span<const Detection> dets) {
      write_png(img, out_dir / "images" / part / (name + ".png"));
      write_annotation_file(dets, out_dir / "labels" / part / (name + ".txt"), false);
      (is_val[i] ? val_list : train_list) += "images/" + part + "/" + name + ".png\n";
    };
    emit(id, image, boxes);
    if (options.augment && !is_val[i]) {
      for (const auto& op : options.augmentations) {
        auto aug = augment_image(image, op, boxes, derive_seed(options.seed, id + "|" + op.tag()));
        emit(id + "__" + op.tag(), aug.image, aug.boxes);
      }
    }
  }
  write_text_file(out_dir / "train.txt", train_list);
  write_text_file(out_dir / "val.txt", val_list);

  std::string yaml = "# detector training bundle (YOLO layout)\n";
  yaml += "path: " + fs::absolute(out_dir).lexically_normal().string() + "\n";
  yaml += "train: images/train\nval: images/val\n";
  yaml += "train_list: train.txt\nval_list: val.txt\n";
  yaml += "nc: " + std::to_string(kLesionClassCount) + "\nnames:\n";
  for (auto c : kAllLesionClasses) {
    std::string name(lesion_name(c));
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    yaml += "  " + std::to_string(lesion_id(c)) + ": " + name + "\n";
  }
  const auto manifest = out_dir / "data.yaml";
  write_text_file(manifest, yaml);
  return manifest;
}

}  // namespace drscreen
