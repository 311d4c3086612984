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

#include "qp_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace drscreen::testing {
namespace {

using Mat = std::vector<std::vector<double>>;

std::vector<double> gradient(const Mat& q, const std::vector<double>& a) {
  std::vector<double> g(a.size(), -1.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) g[i] += q[i][j] * a[j];
  }
  return g;
}

double primal_value(const Mat& q, const std::vector<double>& a) {
  double v = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    v -= a[i];
    for (std::size_t j = 0; j < a.size(); ++j) v += 0.5 * a[i] * q[i][j] * a[j];
  }
  return v;
}

}  // namespace

std::vector<double> project_feasible(const std::vector<double>& v, const std::vector<int>& y, double C) {
  const auto residual = [&](double lambda) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += y[i] * std::clamp(v[i] - lambda * y[i], 0.0, C);
    return s;
  };
  double bound = C;
  for (double x : v) bound = std::max(bound, std::abs(x) + C);
  double lo = -bound;
  double hi = bound;
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (residual(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double lambda = 0.5 * (lo + hi);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp(v[i] - lambda * y[i], 0.0, C);
  return out;
}

double dual_objective(const Mat& kernel, const std::vector<int>& y, const std::vector<double>& alpha) {
  double s = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    s += alpha[i];
    for (std::size_t j = 0; j < alpha.size(); ++j) {
      s -= 0.5 * alpha[i] * alpha[j] * y[i] * y[j] * kernel[i][j];
    }
  }
  return s;
}

QpResult solve_dual_qp(const Mat& kernel, const std::vector<int>& y, double C, double tol,
                       long long max_iterations) {
  const std::size_t n = y.size();
  Mat q(n, std::vector<double>(n));
  double lipschitz = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      q[i][j] = y[i] * y[j] * kernel[i][j];
      row += std::abs(q[i][j]);
    }
    lipschitz = std::max(lipschitz, row);
  }
  const double step = 1.0 / std::max(lipschitz, 1e-12);

  std::vector<double> a = project_feasible(std::vector<double>(n, 0.0), y, C);
  std::vector<double> z = a;
  double t = 1.0;
  double prev = primal_value(q, a);
  QpResult res;
  long long it = 0;
  for (; it < max_iterations; ++it) {
    const auto g = gradient(q, z);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = z[i] - step * g[i];
    const auto next = project_feasible(v, y, C);
    const double value = primal_value(q, next);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (value > prev && t > 1.0) {
      // Adaptive restart: drop momentum when the objective goes up.
      z = a;
      t = 1.0;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = next[i] + ((t - 1.0) / t_next) * (next[i] - a[i]);
    a = next;
    t = t_next;
    prev = value;
    // Stop on the gradient mapping at a, which vanishes only at the optimum.
    const auto ga = gradient(q, a);
    for (std::size_t i = 0; i < n; ++i) v[i] = a[i] - step * ga[i];
    const auto fixed = project_feasible(v, y, C);
    double residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) residual = std::max(residual, std::abs(fixed[i] - a[i]) / step);
    if (residual <= tol) break;
  }
  res.alpha = a;
  res.iterations = it;
  res.objective = dual_objective(kernel, y, a);

  // Bias from the KKT conditions: mean over free multipliers, otherwise the
  // midpoint of the feasible interval.
  const auto g = gradient(q, a);
  const double eps = 1e-8 * C;
  double sum = 0.0;
  int free_count = 0;
  double up = -std::numeric_limits<double>::infinity();
  double low = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double yg = y[i] * g[i];
    if (a[i] > eps && a[i] < C - eps) {
      sum += -yg;
      ++free_count;
    }
    const bool in_up = (y[i] > 0 && a[i] < C - eps) || (y[i] < 0 && a[i] > eps);
    const bool in_low = (y[i] > 0 && a[i] > eps) || (y[i] < 0 && a[i] < C - eps);
    if (in_up) up = std::max(up, -yg);
    if (in_low) low = std::min(low, -yg);
  }
  res.bias = free_count > 0 ? sum / free_count : 0.5 * (up + low);
  return res;
}

}  // namespace drscreen::testing
