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

#include "drscreen/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <Eigen/Dense>

#include "drscreen/errors.hpp"

namespace drscreen {
namespace {

void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DomainError(std::string(what) + ": expected " + std::to_string(want) +
                      " features, got " + std::to_string(got));
  }
}

}  // namespace

FeatureVector extract_counts(std::string image_id, std::span<const Detection> detections,
                             const LesionSet& class_subset, bool confidence_weighted,
                             std::vector<std::string>* warnings) {
  FeatureVector fv;
  fv.image_id = std::move(image_id);
  fv.values.assign(class_subset.size(), 0.0);
  for (const auto& d : detections) {
    const auto idx = class_subset.index_of(d.lesion);
    if (!idx) {
      if (warnings) {
        warnings->push_back(fv.image_id + ": detection of inactive class " +
                            std::string(lesion_name(d.lesion)) + " not counted");
      }
      continue;
    }
    fv.values[*idx] += confidence_weighted ? d.confidence : 1.0;
  }
  return fv;
}

ScalerParams fit_scaler(const Matrix& x, double variance_floor) {
  if (x.rows() < 2) throw DomainError("fit_scaler needs at least 2 rows");
  ScalerParams p;
  const auto n = static_cast<double>(x.rows());
  p.means.assign(x.cols(), 0.0);
  p.stds.assign(x.cols(), 0.0);
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) sum += x(r, c);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) ss += (x(r, c) - mean) * (x(r, c) - mean);
    p.means[c] = mean;
    p.stds[c] = std::max(std::sqrt(ss / n), variance_floor);
  }
  return p;
}

std::vector<double> apply_scaler(std::span<const double> v, const ScalerParams& params) {
  check_dim(v.size(), params.means.size(), "apply_scaler");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - params.means[i]) / params.stds[i];
  return out;
}

std::vector<double> anova_f_scores(const Matrix& x, std::span<const int> labels) {
  if (labels.size() != x.rows()) throw DomainError("label count does not match row count");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < labels.size(); ++r) groups[labels[r]].push_back(r);
  const auto k = static_cast<double>(groups.size());
  const auto n = static_cast<double>(x.rows());

  std::vector<double> scores(x.cols(), 0.0);
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double grand = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) grand += x(r, c);
    grand /= n;
    double ssb = 0.0;
    double ssw = 0.0;
    for (const auto& [label, rows] : groups) {
      double mean = 0.0;
      for (auto r : rows) mean += x(r, c);
      mean /= static_cast<double>(rows.size());
      ssb += static_cast<double>(rows.size()) * (mean - grand) * (mean - grand);
      for (auto r : rows) ssw += (x(r, c) - mean) * (x(r, c) - mean);
    }
    // Relative cut-offs keep round-off from turning a constant column into a
    // huge score.
    const double scale = std::max(1.0, grand * grand) * n;
    const double eps = 1e-24 * scale;
    if (ssb <= eps) {
      scores[c] = 0.0;
    } else if (ssw <= eps || n <= k) {
      scores[c] = std::numeric_limits<double>::infinity();
    } else {
      scores[c] = (ssb / (k - 1.0)) / (ssw / (n - k));
    }
  }
  return scores;
}

std::vector<std::size_t> select_features(const Matrix& x, std::span<const int> labels,
                                         std::size_t k) {
  if (k < 1 || k > x.cols()) {
    throw DomainError("select_features: k = " + std::to_string(k) + " is outside 1.." +
                      std::to_string(x.cols()));
  }
  {
    std::vector<int> distinct(labels.begin(), labels.end());
    std::sort(distinct.begin(), distinct.end());
    if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2) {
      throw DomainError("select_features needs at least 2 distinct labels");
    }
  }
  const auto scores = anova_f_scores(x, labels);
  std::vector<std::size_t> order(x.cols());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

PcaParams fit_pca(const Matrix& x, const PcaTarget& target) {
  if (x.rows() < 2) throw DomainError("fit_pca needs at least 2 rows");
  const std::size_t d = x.cols();
  if (target.components > d) {
    throw DomainError("fit_pca: k = " + std::to_string(target.components) + " exceeds d = " +
                      std::to_string(d));
  }
  if (target.components == 0 && !(target.variance_ratio > 0.0 && target.variance_ratio <= 1.0)) {
    throw DomainError("fit_pca: variance target must be in (0,1]");
  }

  PcaParams p;
  p.means.assign(d, 0.0);
  const auto n = static_cast<double>(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) p.means[c] += x(r, c);
  }
  for (auto& m : p.means) m /= n;

  Eigen::MatrixXd centered(x.rows(), d);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) centered(r, c) = x(r, c) - p.means[c];
  }
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / n;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw DomainError("fit_pca: eigendecomposition failed");

  // Eigen returns ascending eigenvalues.
  std::vector<double> values(d);
  for (std::size_t i = 0; i < d; ++i) {
    values[i] = std::max(0.0, solver.eigenvalues()(static_cast<Eigen::Index>(d - 1 - i)));
  }
  const double total = std::accumulate(values.begin(), values.end(), 0.0);

  std::size_t k = target.components;
  if (k == 0) {
    k = d;
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      acc += total > 0.0 ? values[i] / total : 0.0;
      if (acc >= target.variance_ratio - 1e-12) {
        k = i + 1;
        break;
      }
    }
    if (total == 0.0) k = 1;
  }

  p.components = Matrix(k, d);
  p.explained_variance_ratio.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto col = solver.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - i));
    std::size_t arg = 0;
    for (std::size_t c = 1; c < d; ++c) {
      if (std::abs(col(static_cast<Eigen::Index>(c))) >
          std::abs(col(static_cast<Eigen::Index>(arg))) + 1e-12) {
        arg = c;
      }
    }
    const double sign = col(static_cast<Eigen::Index>(arg)) < 0.0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < d; ++c) {
      p.components(i, c) = sign * col(static_cast<Eigen::Index>(c));
    }
    p.explained_variance_ratio[i] = total > 0.0 ? values[i] / total : 0.0;
  }
  return p;
}

std::vector<double> apply_pca(std::span<const double> v, const PcaParams& params) {
  check_dim(v.size(), params.means.size(), "apply_pca");
  std::vector<double> out(params.components.rows(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < v.size(); ++c) s += params.components(i, c) * (v[c] - params.means[c]);
    out[i] = s;
  }
  return out;
}

std::vector<double> inverse_pca(std::span<const double> z, const PcaParams& params) {
  check_dim(z.size(), params.components.rows(), "inverse_pca");
  std::vector<double> out(params.means);
  for (std::size_t i = 0; i < z.size(); ++i) {
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += z[i] * params.components(i, c);
  }
  return out;
}

std::size_t PreprocessParams::output_dim() const noexcept {
  if (pca) return pca->components.rows();
  return selected_indices.size();
}

PreprocessParams fit_preprocess(const Matrix& x, std::span<const int> labels,
                                const PreprocessConfig& config) {
  PreprocessParams p;
  p.input_dim = x.cols();
  p.variance_floor = config.variance_floor;
  if (config.select_k > 0 && config.select_k < x.cols()) {
    p.selected_indices = select_features(x, labels, config.select_k);
  } else if (config.select_k > x.cols()) {
    throw DomainError("select_k = " + std::to_string(config.select_k) + " exceeds " +
                      std::to_string(x.cols()) + " features");
  } else {
    p.selected_indices.resize(x.cols());
    std::iota(p.selected_indices.begin(), p.selected_indices.end(), std::size_t{0});
  }

  Matrix current(x.rows(), p.selected_indices.size());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < p.selected_indices.size(); ++i) {
      current(r, i) = x(r, p.selected_indices[i]);
    }
  }
  if (config.scale) {
    p.scaler = fit_scaler(current, config.variance_floor);
    for (std::size_t r = 0; r < current.rows(); ++r) {
      auto scaled = apply_scaler(current.row(r), *p.scaler);
      std::copy(scaled.begin(), scaled.end(), current.row(r).begin());
    }
  }
  if (config.pca_enabled()) p.pca = fit_pca(current, config.pca);
  return p;
}

std::vector<double> apply_preprocess(std::span<const double> v, const PreprocessParams& params) {
  check_dim(v.size(), params.input_dim, "apply_preprocess");
  std::vector<double> out(params.selected_indices.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[params.selected_indices[i]];
  if (params.scaler) out = apply_scaler(out, *params.scaler);
  if (params.pca) out = apply_pca(out, *params.pca);
  return out;
}

Matrix apply_preprocess(const Matrix& x, const PreprocessParams& params) {
  Matrix out;
  for (std::size_t r = 0; r < x.rows(); ++r) out.push_row(apply_preprocess(x.row(r), params));
  return out;
}

nlohmann::json to_json(const PreprocessParams& p) {
  nlohmann::ordered_json j;
  j["input_dim"] = p.input_dim;
  j["selected_indices"] = p.selected_indices;
  j["variance_floor"] = p.variance_floor;
  if (p.scaler) {
    j["scaler"] = {{"means", p.scaler->means}, {"stds", p.scaler->stds}};
  } else {
    j["scaler"] = nullptr;
  }
  if (p.pca) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < p.pca->components.rows(); ++i) {
      auto r = p.pca->components.row(i);
      rows.emplace_back(r.begin(), r.end());
    }
    j["pca"] = {{"components", rows},
                {"means", p.pca->means},
                {"explained_variance_ratio", p.pca->explained_variance_ratio}};
  } else {
    j["pca"] = nullptr;
  }
  return nlohmann::json(j);
}

PreprocessParams preprocess_from_json(const nlohmann::json& j) {
  PreprocessParams p;
  std::string field;
  try {
    field = "preprocess.input_dim";
    p.input_dim = j.at("input_dim").get<std::size_t>();
    field = "preprocess.selected_indices";
    p.selected_indices = j.at("selected_indices").get<std::vector<std::size_t>>();
    for (std::size_t i = 0; i < p.selected_indices.size(); ++i) {
      if (p.selected_indices[i] >= p.input_dim ||
          (i > 0 && p.selected_indices[i] <= p.selected_indices[i - 1])) {
        throw LoadError("field '" + field + "' is not a strictly increasing index list");
      }
    }
    field = "preprocess.variance_floor";
    p.variance_floor = j.at("variance_floor").get<double>();
    field = "preprocess.scaler";
    if (!j.at("scaler").is_null()) {
      ScalerParams s;
      s.means = j.at("scaler").at("means").get<std::vector<double>>();
      s.stds = j.at("scaler").at("stds").get<std::vector<double>>();
      if (s.means.size() != p.selected_indices.size() || s.stds.size() != s.means.size()) {
        throw LoadError("field '" + field + "' has the wrong length");
      }
      for (double v : s.stds) {
        if (!(v > 0.0)) throw LoadError("field '" + field + ".stds' must be positive");
      }
      p.scaler = std::move(s);
    }
    field = "preprocess.pca";
    if (!j.at("pca").is_null()) {
      PcaParams pc;
      pc.components = Matrix::from_rows(
          j.at("pca").at("components").get<std::vector<std::vector<double>>>());
      pc.means = j.at("pca").at("means").get<std::vector<double>>();
      pc.explained_variance_ratio =
          j.at("pca").at("explained_variance_ratio").get<std::vector<double>>();
      if (pc.components.cols() != p.selected_indices.size() ||
          pc.means.size() != p.selected_indices.size()) {
        throw LoadError("field '" + field + "' has the wrong shape");
      }
      p.pca = std::move(pc);
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("field '" + field + "': " + e.what());
  } catch (const DomainError& e) {
    throw LoadError("field '" + field + "': " + e.what());
  }
  return p;
}

}  // namespace drscreen
