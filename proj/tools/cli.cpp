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

#include "cli.hpp"

#include <csignal>
#include <pthread.h>

#include <algorithm>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "drscreen/dataset_io.hpp"
#include "drscreen/detector.hpp"
#include "drscreen/deteval.hpp"
#include "drscreen/errors.hpp"
#include "drscreen/model_io.hpp"
#include "drscreen/pipeline.hpp"
#include "drscreen/service.hpp"
#include "drscreen/synthetic.hpp"

namespace drscreen {
namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

bool given(const CLI::Option* opt) { return opt != nullptr && opt->count() > 0; }

// Detector flags shared by detect, featurize, train and predict.
struct DetectorFlags {
  std::string detector = "oracle";
  std::string command;
  double conf = 0.25;
  double drop_rate = 0.0;
  double spurious_rate = 0.0;
  double jitter = 0.0;
  std::string truth_dir;
  std::vector<std::string> classes;

  CLI::Option* detector_opt = nullptr;
  CLI::Option* command_opt = nullptr;
  CLI::Option* conf_opt = nullptr;
  CLI::Option* drop_opt = nullptr;
  CLI::Option* spurious_opt = nullptr;
  CLI::Option* jitter_opt = nullptr;
  CLI::Option* truth_dir_opt = nullptr;
  CLI::Option* classes_opt = nullptr;

  void add(CLI::App* app, bool with_truth_dir) {
    detector_opt = app->add_option("--detector", detector,
                                   "oracle, external, or a detector config JSON file")
                       ->capture_default_str();
    command_opt = app->add_option("--detector-command", command,
                                  "external detector argv template ({input_dir} {output_dir} {conf})");
    conf_opt = app->add_option("--conf", conf, "confidence threshold")
                   ->check(CLI::Range(0.0, 1.0))
                   ->capture_default_str();
    drop_opt = app->add_option("--drop-rate", drop_rate, "oracle: probability of missing a box")
                   ->check(CLI::Range(0.0, 1.0));
    spurious_opt = app->add_option("--spurious-rate", spurious_rate,
                                   "oracle: probability of a spurious box per truth box")
                       ->check(CLI::Range(0.0, 1.0));
    jitter_opt = app->add_option("--jitter", jitter, "oracle: box jitter as a fraction of box size")
                     ->check(CLI::NonNegativeNumber);
    classes_opt = app->add_option("--classes", classes, "active lesion classes (names or ma,hem,...)")
                      ->delimiter(',');
    if (with_truth_dir) {
      truth_dir_opt = app->add_option("--truth-dir", truth_dir,
                                      "oracle: directory of <image_id>.txt truth files");
    }
  }

  /// `base` is the detector section of a --config file, if any.
  DetectorConfig build(const DetectorConfig& base, bool has_base, std::uint64_t seed,
                       bool seed_given) const {
    DetectorConfig c = has_base ? base : DetectorConfig{};
    if (given(detector_opt) || !has_base) {
      if (detector == "oracle") {
        c.mode = DetectorMode::Oracle;
      } else if (detector == "external") {
        c.mode = DetectorMode::External;
      } else {
        c = load_detector_config(detector);
      }
    }
    if (given(command_opt)) c.external_command = split_words(command);
    if (given(conf_opt)) c.confidence_threshold = conf;
    if (given(drop_opt)) c.perturbation.drop_rate = drop_rate;
    if (given(spurious_opt)) c.perturbation.spurious_rate = spurious_rate;
    if (given(jitter_opt)) c.perturbation.jitter = jitter;
    if (given(truth_dir_opt)) c.truth_dir = truth_dir;
    if (given(classes_opt)) {
      LesionSet s;
      for (const auto& n : classes) s.insert(lesion_from_name(n));
      c.class_subset = s;
    }
    if (seed_given || !has_base) c.perturbation.seed = seed;
    c.validate();
    return c;
  }
};

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : "; ") + s;
  return out;
}

// Signals stop the server from a dedicated thread.
void serve_until_signal(HttpServer& server) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diabetic retinopathy screening: lesion detection, lesion counts and SVM grading.",
               "drscreen"};
  app.fallthrough();
  app.require_subcommand(1);

  std::uint64_t seed = 42;
  std::string config_path;
  bool no_timestamps = false;
  auto* seed_opt = app.add_option("--seed", seed, "seed for every random choice")->capture_default_str();
  app.add_option("--config", config_path, "run configuration JSON (same schema as run_config.json)");
  app.add_flag("--no-timestamps", no_timestamps, "omit wall-clock times from artifacts");

  // synth
  auto* synth = app.add_subcommand("synth", "write a rule-based synthetic dataset");
  SyntheticOptions synth_opts;
  std::string synth_out;
  synth->add_option("--n-per-grade", synth_opts.n_per_grade, "images per grade")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--image-size", synth_opts.image_size, "image side in pixels")
      ->check(CLI::Range(32, 4096))
      ->capture_default_str();
  synth->add_option("--label-noise", synth_opts.label_noise, "probability of a flipped grade label")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();

  // bundle
  auto* bundle = app.add_subcommand("bundle", "prepare a detector training bundle");
  std::string bundle_data;
  std::string bundle_out;
  BundleOptions bundle_opts;
  bundle->add_option("--data", bundle_data, "dataset manifest")->required();
  bundle->add_option("--out", bundle_out, "output directory")->required();
  bundle->add_flag("--augment", bundle_opts.augment, "add flipped, rotated, cropped and noisy variants");
  bundle->add_option("--val-fraction", bundle_opts.val_fraction, "share of images in val")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();

  // detect
  auto* detect_cmd = app.add_subcommand("detect", "run the detector over a dataset");
  std::string detect_data;
  std::string detect_out;
  double detect_iou = kDefaultIouThreshold;
  DetectorFlags detect_flags;
  detect_cmd->add_option("--data", detect_data, "dataset manifest")->required();
  detect_cmd->add_option("--out", detect_out, "directory for <image_id>.txt detection files")->required();
  detect_cmd->add_option("--iou", detect_iou, "IoU threshold for the detection report")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  detect_flags.add(detect_cmd, true);

  // featurize
  auto* featurize = app.add_subcommand("featurize", "write the lesion count table");
  std::string feat_data;
  std::string feat_out;
  bool feat_weighted = false;
  DetectorFlags feat_flags;
  featurize->add_option("--data", feat_data, "dataset manifest")->required();
  featurize->add_option("--out", feat_out, "count table path (CSV)")->required();
  featurize->add_flag("--weighted", feat_weighted, "sum confidences instead of counting boxes");
  feat_flags.add(featurize, true);

  // train
  auto* train = app.add_subcommand("train", "run a full training run");
  std::string train_data;
  std::string train_counts;
  std::string train_out;
  RunConfig defaults;
  double test_fraction = defaults.split.test_fraction;
  int cv_folds = defaults.cv_folds;
  std::vector<double> grid_c;
  std::vector<std::string> grid_gamma;
  std::vector<std::string> grid_kernels;
  std::size_t select_k = 0;
  bool no_scale = false;
  std::size_t pca_components = 0;
  double pca_variance = 0.0;
  bool train_weighted = false;
  DetectorFlags train_flags;
  auto* train_data_opt = train->add_option("--data", train_data, "dataset manifest");
  auto* train_counts_opt =
      train->add_option("--counts", train_counts, "train from an existing count table instead");
  auto* train_out_opt = train->add_option("--out", train_out, "artifact directory");
  auto* tf_opt = train->add_option("--test-fraction", test_fraction, "held-out share")
                     ->check(CLI::Range(0.0, 1.0))
                     ->capture_default_str();
  auto* folds_opt = train->add_option("--cv-folds", cv_folds, "cross-validation folds")
                        ->check(CLI::Range(2, 1000))
                        ->capture_default_str();
  auto* c_opt = train->add_option("--C", grid_c, "C grid (comma separated)")->delimiter(',');
  auto* gamma_opt =
      train->add_option("--gamma", grid_gamma, "gamma grid: scale or numbers (comma separated)")
          ->delimiter(',');
  auto* kernel_opt =
      train->add_option("--kernel", grid_kernels, "kernel grid: rbf, linear (comma separated)")
          ->delimiter(',');
  auto* select_opt = train->add_option("--select-k", select_k, "keep the k best features (0 = all)");
  auto* noscale_opt = train->add_flag("--no-scale", no_scale, "skip standardization");
  auto* pca_opt = train->add_option("--pca-components", pca_components, "PCA components (0 = off)");
  auto* pcav_opt = train->add_option("--pca-variance", pca_variance,
                                     "PCA: smallest k reaching this explained variance ratio")
                       ->check(CLI::Range(0.0, 1.0));
  auto* weighted_opt = train->add_flag("--weighted", train_weighted, "sum confidences instead of counting boxes");
  train_flags.add(train, true);

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score a model against a count table");
  std::string eval_model;
  std::string eval_counts;
  std::string eval_out;
  bool eval_json = false;
  evaluate_cmd->add_option("--model", eval_model, "model file")->required();
  evaluate_cmd->add_option("--counts", eval_counts, "count table (CSV)")->required();
  evaluate_cmd->add_option("--out", eval_out, "also write the JSON report here");
  evaluate_cmd->add_flag("--json", eval_json, "print the JSON report instead of text");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "grade one image");
  std::string pred_model;
  std::string pred_image;
  std::string pred_truth;
  DetectorFlags pred_flags;
  predict_cmd->add_option("--model", pred_model, "model file")->required();
  predict_cmd->add_option("--image", pred_image, "PNG or JPEG image")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--truth", pred_truth, "oracle: annotation file of the image");
  pred_flags.add(predict_cmd, true);

  // serve
  auto* serve = app.add_subcommand("serve", "start the HTTP service");
  ServiceConfig serve_cfg;
  serve->add_option("--host", serve_cfg.host, "listen address")->capture_default_str();
  serve->add_option("--port", serve_cfg.port, "listen port (0 picks one)")
      ->check(CLI::Range(0, 65535))
      ->capture_default_str();
  serve->add_option("--model", serve_cfg.model_path, "model file (omit to start without one)");
  serve->add_option("--detector-config", serve_cfg.detector_config, "detector config JSON");
  serve->add_option("--data-dir", serve_cfg.data_dir, "uploads and triage log")->capture_default_str();
  serve->add_option("--max-upload", serve_cfg.max_upload, "upload limit in bytes")->capture_default_str();
  serve->add_option("--image-cap", serve_cfg.image_cap, "stored uploads before LRU eviction")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << "\n" << app.help();
    return 2;
  }

  const bool seed_given = given(seed_opt);
  std::string stage = app.get_subcommands().front()->get_name();
  try {
    std::optional<RunConfig> file_config;
    if (!config_path.empty()) file_config = load_run_config(config_path);

    if (synth->parsed()) {
      synth_opts.seed = seed;
      const auto manifest = write_synthetic_dataset(generate_synthetic_dataset(synth_opts), synth_out);
      out << "wrote " << synth_opts.n_per_grade * kGradeCount << " images; manifest " << manifest.string()
          << "\n";
      return 0;
    }

    if (bundle->parsed()) {
      bundle_opts.seed = seed;
      const auto manifest = prepare_training_bundle(load_dataset(bundle_data), bundle_out, bundle_opts);
      out << "bundle manifest " << manifest.string() << "\n";
      return 0;
    }

    if (detect_cmd->parsed()) {
      const auto dataset = load_dataset(detect_data);
      RunConfig cfg = file_config.value_or(RunConfig{});
      cfg.detector = detect_flags.build(cfg.detector, file_config.has_value(), seed, seed_given);
      cfg.iou_threshold = detect_iou;
      std::vector<std::string> warnings;
      const auto feats = featurize_dataset(dataset, cfg, &warnings);
      fs::create_directories(detect_out);
      for (const auto& [id, dets] : feats.detections) {
        write_annotation_file(dets, fs::path(detect_out) / (id + ".txt"), true);
      }
      std::size_t boxes = 0;
      for (const auto& [id, dets] : feats.detections) boxes += dets.size();
      out << "detected " << boxes << " lesions in " << feats.detections.size() << " images\n";
      if (feats.detection_report) {
        write_text_file(fs::path(detect_out) / "report_detection.json",
                        to_json(*feats.detection_report).dump(2) + "\n");
        out << to_text(*feats.detection_report);
      }
      return 0;
    }

    if (featurize->parsed()) {
      const auto dataset = load_dataset(feat_data);
      RunConfig cfg = file_config.value_or(RunConfig{});
      cfg.detector = feat_flags.build(cfg.detector, file_config.has_value(), seed, seed_given);
      if (feat_weighted) cfg.confidence_weighted = true;
      std::vector<std::string> warnings;
      const auto feats = featurize_dataset(dataset, cfg, &warnings);
      write_count_table(feats.rows, feat_out);
      out << "wrote " << feats.rows.size() << " rows to " << feat_out << "\n";
      return 0;
    }

    if (train->parsed()) {
      RunConfig cfg = file_config.value_or(RunConfig{});
      if (seed_given || !file_config) {
        cfg.seed = seed;
        cfg.split.seed = seed;
      }
      if (given(train_data_opt)) cfg.dataset = train_data;
      if (given(train_out_opt)) cfg.output_dir = train_out;
      if (given(tf_opt)) cfg.split.test_fraction = test_fraction;
      if (given(folds_opt)) cfg.cv_folds = cv_folds;
      if (given(c_opt)) cfg.grid.C = grid_c;
      if (given(gamma_opt)) {
        cfg.grid.gamma.clear();
        for (const auto& g : grid_gamma) cfg.grid.gamma.push_back(GammaSetting::parse(g));
      }
      if (given(kernel_opt)) {
        cfg.grid.kernels.clear();
        for (const auto& k : grid_kernels) cfg.grid.kernels.push_back(kernel_from_name(k));
      }
      if (given(select_opt)) cfg.preprocess.select_k = select_k;
      if (given(noscale_opt)) cfg.preprocess.scale = !no_scale;
      if (given(pca_opt)) cfg.preprocess.pca.components = pca_components;
      if (given(pcav_opt)) cfg.preprocess.pca.variance_ratio = pca_variance;
      if (given(weighted_opt)) cfg.confidence_weighted = train_weighted;
      if (no_timestamps) cfg.timestamps = false;
      cfg.detector = train_flags.build(cfg.detector, file_config.has_value(), seed, seed_given);
      if (cfg.output_dir.empty()) throw DomainError("--out is required");

      RunResult result;
      if (given(train_counts_opt)) {
        stage = "load";
        auto rows = read_count_table(train_counts);
        stage = "train";
        result = train_from_counts(std::move(rows), cfg);
      } else {
        if (cfg.dataset.empty()) throw DomainError("--data or --counts is required");
        result = run_training(cfg);
      }
      if (!result.warnings.empty()) err << "warning: " << join(result.warnings) << "\n";
      const auto& best = result.grid.best();
      out << "best: kernel " << kernel_name(best.kernel) << ", C " << best.C << ", gamma "
          << (best.kernel == KernelKind::Rbf ? best.gamma.to_string() : "-") << " (cv accuracy "
          << result.grid.table[result.grid.best_index].mean_accuracy << ")\n";
      out << "train accuracy " << result.train_report.accuracy << ", test accuracy "
          << result.test_report.accuracy << ", test macro-F1 " << result.test_report.macro_f1 << "\n";
      out << "artifacts in " << cfg.output_dir.string() << "\n";
      return 0;
    }

    if (evaluate_cmd->parsed()) {
      const auto model = load_model(eval_model);
      const auto rows = read_count_table(eval_counts);
      const auto report = evaluate(model, feature_matrix(rows, model.feature_classes), grades_of(rows));
      const auto doc = to_json(report, "evaluate").dump(2) + "\n";
      if (!eval_out.empty()) write_text_file(eval_out, doc);
      out << (eval_json ? doc : to_text(report, "evaluate"));
      return 0;
    }

    if (predict_cmd->parsed()) {
      const auto model = load_model(pred_model);
      const auto detector = pred_flags.build(file_config ? file_config->detector : DetectorConfig{},
                                             file_config.has_value(), seed, seed_given);
      DetectInput input;
      input.image_path = pred_image;
      input.image_id = fs::path(pred_image).stem().string();
      if (!pred_truth.empty()) input.truth = read_annotation_file(pred_truth, input.image_id);
      const auto response = predict_image(model, detector, input, model_fingerprint(model));
      out << to_json(response).dump(2) << "\n";
      return 0;
    }

    if (serve->parsed()) {
      auto service = Service::from_config(serve_cfg);
      HttpServer server(*service);
      const int port = server.bind(serve_cfg.host, serve_cfg.port);
      out << "listening on http://" << serve_cfg.host << ":" << port
          << (service->has_model() ? "" : " (no model loaded)") << std::endl;
      serve_until_signal(server);
      return 0;
    }
  } catch (const RunError& e) {
    err << "error: stage " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: stage " << stage << ": " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace drscreen
