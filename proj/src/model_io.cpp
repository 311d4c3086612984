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

#include "drscreen/model_io.hpp"

#include "drscreen/dataset_io.hpp"
#include "drscreen/errors.hpp"

namespace drscreen {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json matrix_json(const Matrix& m) {
  auto rows = ordered_json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

// Walks a JSON document, naming the current field in every error.
class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {}

  template <class T>
  T get(const json& obj, const std::string& key, const std::string& path) const {
    const std::string field = path.empty() ? key : path + "." + key;
    if (!obj.is_object() || !obj.contains(key)) throw LoadError("missing field '" + field + "'");
    try {
      return obj.at(key).get<T>();
    } catch (const json::exception&) {
      throw LoadError("field '" + field + "' has the wrong type");
    }
  }

  const json& node(const json& obj, const std::string& key, const std::string& path) const {
    const std::string field = path.empty() ? key : path + "." + key;
    if (!obj.is_object() || !obj.contains(key)) throw LoadError("missing field '" + field + "'");
    return obj.at(key);
  }

  const json& root() const { return root_; }

 private:
  const json& root_;
};

DrGrade grade_field(long long v, const std::string& field) {
  try {
    return grade_from_int(v);
  } catch (const DomainError& e) {
    throw LoadError("field '" + field + "': " + e.what());
  }
}

}  // namespace

json model_to_json(const SvmModel& model) {
  ordered_json j;
  j["format"] = kModelFormat;
  j["schema_version"] = model.schema_version;
  auto classes = ordered_json::array();
  for (auto g : model.classes) classes.push_back(grade_id(g));
  j["classes"] = classes;
  auto fc = ordered_json::array();
  for (auto c : model.feature_classes.classes()) fc.push_back(lesion_name(c));
  j["feature_classes"] = fc;
  j["confidence_weighted"] = model.confidence_weighted;

  ordered_json hp;
  hp["C"] = model.config.C;
  hp["kernel"] = kernel_name(model.config.kernel);
  hp["gamma"] = model.config.gamma.to_string();
  hp["resolved_gamma"] = model.resolved_gamma;
  hp["tol"] = model.config.tol;
  hp["max_passes"] = model.config.max_passes;
  hp["seed"] = model.config.seed;
  j["hyperparameters"] = hp;
  j["preprocess"] = ordered_json::parse(to_json(model.preprocess).dump());

  auto machines = ordered_json::array();
  for (const auto& m : model.machines) {
    ordered_json mj;
    mj["negative"] = grade_id(m.negative);
    mj["positive"] = grade_id(m.positive);
    mj["kernel"] = {{"kind", kernel_name(m.svm.kernel.kind)}, {"gamma", m.svm.kernel.gamma}};
    mj["C"] = m.svm.C;
    mj["bias"] = m.svm.bias;
    mj["dual_coefs"] = m.svm.dual_coefs;
    mj["support_vectors"] = matrix_json(m.svm.support_vectors);
    machines.push_back(mj);
  }
  j["machines"] = machines;
  j["metadata"] = ordered_json::parse(model.metadata.dump());
  return json::parse(j.dump());
}

SvmModel model_from_json(const json& j) {
  Reader rd(j);
  SvmModel m;
  if (rd.get<std::string>(j, "format", "") != kModelFormat) {
    throw LoadError("field 'format' is not \"" + std::string(kModelFormat) + "\"");
  }
  m.schema_version = rd.get<int>(j, "schema_version", "");
  if (m.schema_version != kModelSchemaVersion) {
    throw LoadError("unsupported model schema_version " + std::to_string(m.schema_version) +
                    " (supported: " + std::to_string(kModelSchemaVersion) + ")");
  }
  for (auto v : rd.get<std::vector<long long>>(j, "classes", "")) {
    m.classes.push_back(grade_field(v, "classes"));
  }
  for (std::size_t i = 1; i < m.classes.size(); ++i) {
    if (grade_id(m.classes[i]) <= grade_id(m.classes[i - 1])) {
      throw LoadError("field 'classes' must be strictly ascending");
    }
  }
  if (m.classes.size() < 2) throw LoadError("field 'classes' needs at least 2 grades");
  {
    LesionSet fc;
    for (const auto& name : rd.get<std::vector<std::string>>(j, "feature_classes", "")) {
      try {
        fc.insert(lesion_from_name(name));
      } catch (const DomainError& e) {
        throw LoadError(std::string("field 'feature_classes': ") + e.what());
      }
    }
    m.feature_classes = fc;
  }
  m.confidence_weighted = rd.get<bool>(j, "confidence_weighted", "");

  const auto& hp = rd.node(j, "hyperparameters", "");
  m.config.C = rd.get<double>(hp, "C", "hyperparameters");
  try {
    m.config.kernel = kernel_from_name(rd.get<std::string>(hp, "kernel", "hyperparameters"));
    m.config.gamma = GammaSetting::parse(rd.get<std::string>(hp, "gamma", "hyperparameters"));
  } catch (const DomainError& e) {
    throw LoadError(std::string("field 'hyperparameters': ") + e.what());
  }
  m.resolved_gamma = rd.get<double>(hp, "resolved_gamma", "hyperparameters");
  m.config.tol = rd.get<double>(hp, "tol", "hyperparameters");
  m.config.max_passes = rd.get<int>(hp, "max_passes", "hyperparameters");
  m.config.seed = rd.get<std::uint64_t>(hp, "seed", "hyperparameters");

  m.preprocess = preprocess_from_json(rd.node(j, "preprocess", ""));

  const auto& machines = rd.node(j, "machines", "");
  if (!machines.is_array()) throw LoadError("field 'machines' must be an array");
  const std::size_t expected = m.classes.size() * (m.classes.size() - 1) / 2;
  if (machines.size() != expected) {
    throw LoadError("field 'machines' has " + std::to_string(machines.size()) + " entries, expected " +
                    std::to_string(expected));
  }
  const std::size_t dim = m.preprocess.output_dim();
  std::size_t idx = 0;
  for (std::size_t a = 0; a < m.classes.size(); ++a) {
    for (std::size_t b = a + 1; b < m.classes.size(); ++b, ++idx) {
      const auto& mj = machines[idx];
      const std::string path = "machines[" + std::to_string(idx) + "]";
      PairwiseMachine pm;
      pm.negative = grade_field(rd.get<long long>(mj, "negative", path), path + ".negative");
      pm.positive = grade_field(rd.get<long long>(mj, "positive", path), path + ".positive");
      if (pm.negative != m.classes[a] || pm.positive != m.classes[b]) {
        throw LoadError("field '" + path + "' is out of order");
      }
      const auto& kj = rd.node(mj, "kernel", path);
      try {
        pm.svm.kernel.kind = kernel_from_name(rd.get<std::string>(kj, "kind", path + ".kernel"));
        pm.svm.kernel.gamma = rd.get<double>(kj, "gamma", path + ".kernel");
        pm.svm.kernel.validate();
      } catch (const DomainError& e) {
        throw LoadError("field '" + path + ".kernel': " + e.what());
      }
      pm.svm.C = rd.get<double>(mj, "C", path);
      pm.svm.bias = rd.get<double>(mj, "bias", path);
      pm.svm.dual_coefs = rd.get<std::vector<double>>(mj, "dual_coefs", path);
      const auto rows = rd.get<std::vector<std::vector<double>>>(mj, "support_vectors", path);
      if (rows.size() != pm.svm.dual_coefs.size()) {
        throw LoadError("field '" + path + ".support_vectors' does not match 'dual_coefs'");
      }
      pm.svm.support_vectors = Matrix(0, dim);
      for (const auto& r : rows) {
        if (r.size() != dim) {
          throw LoadError("field '" + path + ".support_vectors' has rows of length " +
                          std::to_string(r.size()) + ", expected " + std::to_string(dim));
        }
        pm.svm.support_vectors.push_row(r);
      }
      m.machines.push_back(std::move(pm));
    }
  }
  if (j.contains("metadata")) m.metadata = j.at("metadata");
  return m;
}

void save_model(const SvmModel& model, const std::filesystem::path& path) {
  write_text_file(path, model_to_json(model).dump(1) + "\n");
}

SvmModel load_model(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw LoadError(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": not a valid model document (" + e.what() + ")");
  }
  try {
    return model_from_json(j);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace drscreen
