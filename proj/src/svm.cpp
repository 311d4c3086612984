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

#include "drscreen/svm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <cstdio>
#include <limits>

#include "drscreen/errors.hpp"
#include "drscreen/rng.hpp"

namespace drscreen {
namespace {

constexpr double kDegenerateEta = 1e-12;

void check_same_dim(std::size_t a, std::size_t b) {
  if (a != b) {
    throw DomainError("dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

double eval_unchecked(const Kernel& k, std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  if (k.kind == KernelKind::Linear) {
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::exp(-k.gamma * s);
}

// Working-set state for one SMO run.
class SmoState {
 public:
  SmoState(const Matrix& x, std::span<const int> y, const Kernel& kernel, double c)
      : n_(x.rows()), y_(y), c_(c), kernel_(n_ * n_), alpha_(n_, 0.0), grad_(n_, -1.0) {
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = i; j < n_; ++j) {
        const double v = eval_unchecked(kernel, x.row(i), x.row(j));
        kernel_[i * n_ + j] = v;
        kernel_[j * n_ + i] = v;
      }
    }
  }

  std::size_t size() const noexcept { return n_; }
  double k(std::size_t i, std::size_t j) const noexcept { return kernel_[i * n_ + j]; }
  const std::vector<double>& alpha() const noexcept { return alpha_; }

  bool in_up(std::size_t t) const noexcept {
    return (y_[t] > 0 && alpha_[t] < c_) || (y_[t] < 0 && alpha_[t] > 0.0);
  }
  bool in_low(std::size_t t) const noexcept {
    return (y_[t] > 0 && alpha_[t] > 0.0) || (y_[t] < 0 && alpha_[t] < c_);
  }
  // -y_t * grad_t; optimality means max over I_up <= min over I_low.
  double score(std::size_t t) const noexcept { return -y_[t] * grad_[t]; }
  // E_t up to the bias, which cancels in differences.
  double error(std::size_t t) const noexcept { return y_[t] * grad_[t]; }

  /// Analytic two-variable step; false when the pair cannot move.
  bool step(std::size_t i, std::size_t j) {
    const double eta = k(i, i) + k(j, j) - 2.0 * k(i, j);
    if (eta <= kDegenerateEta) return false;
    const double ai = alpha_[i];
    const double aj = alpha_[j];
    double lo;
    double hi;
    if (y_[i] != y_[j]) {
      lo = std::max(0.0, aj - ai);
      hi = std::min(c_, c_ + aj - ai);
    } else {
      lo = std::max(0.0, ai + aj - c_);
      hi = std::min(c_, ai + aj);
    }
    if (!(hi > lo)) return false;
    double aj_new = aj + y_[j] * (error(i) - error(j)) / eta;
    aj_new = std::clamp(aj_new, lo, hi);
    if (std::abs(aj_new - aj) <= 1e-15 * std::max(1.0, c_)) return false;
    double ai_new = ai + static_cast<double>(y_[i] * y_[j]) * (aj - aj_new);
    ai_new = snap(ai_new);
    aj_new = snap(aj_new);
    const double dai = ai_new - ai;
    const double daj = aj_new - aj;
    alpha_[i] = ai_new;
    alpha_[j] = aj_new;
    for (std::size_t t = 0; t < n_; ++t) {
      grad_[t] += y_[t] * (y_[i] * k(t, i) * dai + y_[j] * k(t, j) * daj);
    }
    return true;
  }

  double bias() const noexcept {
    double sum = 0.0;
    std::size_t free = 0;
    double up_max = -std::numeric_limits<double>::infinity();
    double low_min = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n_; ++t) {
      if (alpha_[t] > 0.0 && alpha_[t] < c_) {
        sum += -error(t);
        ++free;
      }
      if (in_up(t)) up_max = std::max(up_max, score(t));
      if (in_low(t)) low_min = std::min(low_min, score(t));
    }
    if (free > 0) return sum / static_cast<double>(free);
    return (up_max + low_min) / 2.0;
  }

  double objective() const noexcept {
    double sum = 0.0;
    double quad = 0.0;
    for (std::size_t t = 0; t < n_; ++t) {
      sum += alpha_[t];
      quad += alpha_[t] * (grad_[t] + 1.0);
    }
    return sum - 0.5 * quad;
  }

 private:
  double snap(double a) const noexcept {
    const double eps = 1e-12 * c_;
    if (a < eps) return 0.0;
    if (a > c_ - eps) return c_;
    return a;
  }

  std::size_t n_;
  std::span<const int> y_;
  double c_;
  std::vector<double> kernel_;
  std::vector<double> alpha_;
  std::vector<double> grad_;  // Q alpha - 1, Q_ij = y_i y_j K_ij
};

}  // namespace

std::string_view kernel_name(KernelKind k) noexcept {
  return k == KernelKind::Linear ? "linear" : "rbf";
}

KernelKind kernel_from_name(std::string_view name) {
  if (name == "linear" || name == "LINEAR") return KernelKind::Linear;
  if (name == "rbf" || name == "RBF") return KernelKind::Rbf;
  throw DomainError("unknown kernel '" + std::string(name) + "'");
}

void Kernel::validate() const {
  if (kind == KernelKind::Rbf && !(gamma > 0.0 && std::isfinite(gamma))) {
    throw DomainError("RBF gamma must be positive");
  }
}

double kernel_eval(const Kernel& k, std::span<const double> x, std::span<const double> y) {
  check_same_dim(x.size(), y.size());
  return eval_unchecked(k, x, y);
}

double GammaSetting::resolve(const Matrix& x) const {
  if (!scale) return value;
  const double n = static_cast<double>(x.rows() * x.cols());
  if (n == 0.0) return 1.0;
  double mean = 0.0;
  for (double v : x.data()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= n;
  if (!(var > 0.0)) return 1.0;
  return 1.0 / (static_cast<double>(x.cols()) * var);
}

std::string GammaSetting::to_string() const {
  if (scale) return "scale";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

GammaSetting GammaSetting::parse(std::string_view text) {
  if (text == "scale") return auto_scale();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !(v > 0.0)) {
    throw DomainError("gamma must be \"scale\" or a positive number, got '" + std::string(text) +
                      "'");
  }
  return fixed(v);
}

void TrainConfig::validate() const {
  if (!(C > 0.0) || !std::isfinite(C)) throw TrainError("C must be positive");
  if (!(tol > 0.0)) throw TrainError("tol must be positive");
  if (max_passes < 1) throw TrainError("max_passes must be at least 1");
  if (!gamma.scale && !(gamma.value > 0.0)) throw TrainError("gamma must be positive");
}

SmoSolution smo_solve(const Matrix& x, std::span<const int> y, const Kernel& kernel,
                      const TrainConfig& config) {
  config.validate();
  kernel.validate();
  if (y.size() != x.rows()) throw TrainError("label count does not match row count");
  bool has_pos = false;
  bool has_neg = false;
  for (int v : y) {
    if (v == 1) {
      has_pos = true;
    } else if (v == -1) {
      has_neg = true;
    } else {
      throw TrainError("binary labels must be -1 or +1");
    }
  }
  if (!has_pos || !has_neg) throw TrainError("training data contains a single class");

  SmoState st(x, y, kernel, config.C);
  const std::size_t n = st.size();
  Rng rng(config.seed);
  std::vector<char> stuck(n, 0);
  const long long max_iter = static_cast<long long>(config.max_passes) *
                             static_cast<long long>(std::max<std::size_t>(n, 1));

  SmoSolution sol;
  const double inf = std::numeric_limits<double>::infinity();
  for (;;) {
    double up_all = -inf;
    double up_free = -inf;
    double low_min = inf;
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t) {
      const double v = st.score(t);
      if (st.in_up(t)) {
        up_all = std::max(up_all, v);
        if (!stuck[t] && v > up_free) {
          up_free = v;
          i = t;
        }
      }
      if (st.in_low(t)) low_min = std::min(low_min, v);
    }
    sol.max_violation = std::max(0.0, up_all - low_min);
    if (up_all - low_min < config.tol) {
      sol.converged = true;
      break;
    }
    if (i == n || sol.iterations >= max_iter) break;

    // Partners that violate together with i, best |E_i - E_j| first.
    std::size_t best = n;
    double best_gap = 0.0;
    std::vector<std::size_t> others;
    for (std::size_t t = 0; t < n; ++t) {
      if (t == i || !st.in_low(t)) continue;
      const double gap = up_free - st.score(t);
      if (gap <= 0.0) continue;
      others.push_back(t);
      if (gap > best_gap) {
        best_gap = gap;
        best = t;
      }
    }
    ++sol.iterations;
    bool moved = best < n && st.step(i, best);
    if (!moved) {
      std::erase(others, best);
      rng.shuffle(others);
      for (auto j : others) {
        if (st.step(i, j)) {
          moved = true;
          break;
        }
      }
    }
    if (moved) {
      std::fill(stuck.begin(), stuck.end(), 0);
    } else {
      stuck[i] = 1;
    }
  }

  sol.alpha = st.alpha();
  sol.objective = st.objective();
  auto& m = sol.machine;
  m.kernel = kernel;
  m.C = config.C;
  m.bias = st.bias();
  for (std::size_t t = 0; t < n; ++t) {
    if (sol.alpha[t] > 0.0) {
      m.support_vectors.push_row(x.row(t));
      m.dual_coefs.push_back(sol.alpha[t] * y[t]);
    }
  }
  if (m.support_vectors.empty()) m.support_vectors = Matrix(0, x.cols());
  return sol;
}

BinarySvm smo_train_binary(const Matrix& x, std::span<const int> y, const Kernel& kernel,
                           const TrainConfig& config) {
  return smo_solve(x, y, kernel, config).machine;
}

double decision(const BinarySvm& machine, std::span<const double> x) {
  if (machine.support_vectors.rows() > 0) check_same_dim(x.size(), machine.support_vectors.cols());
  double f = machine.bias;
  for (std::size_t i = 0; i < machine.dual_coefs.size(); ++i) {
    f += machine.dual_coefs[i] * eval_unchecked(machine.kernel, machine.support_vectors.row(i), x);
  }
  return f;
}

int classify_binary(const BinarySvm& machine, std::span<const double> x) {
  return decision(machine, x) >= 0.0 ? 1 : -1;
}

std::size_t SvmModel::feature_dim() const noexcept { return preprocess.input_dim; }

SvmModel train_multiclass(const Matrix& x, std::span<const DrGrade> grades,
                          const TrainConfig& config, std::vector<std::string>* warnings) {
  config.validate();
  if (grades.size() != x.rows()) throw TrainError("grade count does not match row count");
  std::array<std::vector<std::size_t>, kGradeCount> rows_of;
  for (std::size_t r = 0; r < grades.size(); ++r) rows_of[grade_id(grades[r])].push_back(r);

  SvmModel model;
  model.config = config;
  model.preprocess.input_dim = x.cols();
  model.preprocess.selected_indices.resize(x.cols());
  std::iota(model.preprocess.selected_indices.begin(), model.preprocess.selected_indices.end(),
            std::size_t{0});
  for (int g = 0; g < kGradeCount; ++g) {
    if (rows_of[g].empty()) {
      if (warnings) {
        warnings->push_back("grade " + std::string(grade_name(static_cast<DrGrade>(g))) +
                            " has no samples and is excluded");
      }
      continue;
    }
    model.classes.push_back(static_cast<DrGrade>(g));
  }
  if (model.classes.size() < 2) {
    throw TrainError("need at least 2 grades with samples, found " +
                     std::to_string(model.classes.size()));
  }

  model.resolved_gamma = config.gamma.resolve(x);
  const Kernel kernel{config.kernel, config.kernel == KernelKind::Rbf ? model.resolved_gamma : 1.0};

  for (std::size_t a = 0; a < model.classes.size(); ++a) {
    for (std::size_t b = a + 1; b < model.classes.size(); ++b) {
      const auto neg = model.classes[a];
      const auto pos = model.classes[b];
      std::vector<std::size_t> idx;
      std::vector<int> y;
      for (std::size_t r = 0; r < grades.size(); ++r) {
        if (grades[r] == neg || grades[r] == pos) {
          idx.push_back(r);
          y.push_back(grades[r] == pos ? 1 : -1);
        }
      }
      TrainConfig pair_cfg = config;
      pair_cfg.seed = derive_seed(config.seed, std::string(grade_name(neg)) + "/" +
                                                   std::string(grade_name(pos)));
      model.machines.push_back(
          PairwiseMachine{neg, pos, smo_train_binary(x.select_rows(idx), y, kernel, pair_cfg)});
    }
  }
  return model;
}

DrGrade resolve_votes(std::span<const DrGrade> candidates,
                      const std::array<int, kGradeCount>& votes,
                      const std::array<double, kGradeCount>& scores) {
  if (candidates.empty()) throw DomainError("no candidate grades");
  DrGrade best = candidates.front();
  for (auto g : candidates) {
    const int gi = grade_id(g);
    const int bi = grade_id(best);
    if (votes[gi] != votes[bi]) {
      if (votes[gi] > votes[bi]) best = g;
    } else if (scores[gi] != scores[bi]) {
      if (scores[gi] > scores[bi]) best = g;
    } else {
      best = severity_max(best, g);
    }
  }
  return best;
}

Prediction predict(const SvmModel& model, std::span<const double> x) {
  Prediction p;
  for (const auto& m : model.machines) {
    const double f = decision(m.svm, x);
    const auto winner = f >= 0.0 ? m.positive : m.negative;
    ++p.votes[grade_id(winner)];
    p.scores[grade_id(winner)] += std::abs(f);
  }
  p.grade = resolve_votes(model.classes, p.votes, p.scores);
  return p;
}

Prediction classify_counts(const SvmModel& model, std::span<const double> counts) {
  return predict(model, apply_preprocess(counts, model.preprocess));
}

}  // namespace drscreen
