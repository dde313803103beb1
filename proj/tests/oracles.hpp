#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner. Nothing here calls into the code under test except to
// evaluate a model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sliceops/mlp.hpp"

namespace oracle {

/// Straightforward dense forward pass over nested vectors.
inline std::vector<double> forward(const sliceops::MlpParams& p, const std::vector<double>& x) {
  std::vector<double> a = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    std::vector<std::vector<double>> W(L.out, std::vector<double>(L.in));
    for (std::size_t r = 0; r < L.out; ++r)
      for (std::size_t c = 0; c < L.in; ++c) W[r][c] = L.weights[r * L.in + c];
    std::vector<double> z(L.out);
    for (std::size_t r = 0; r < L.out; ++r) {
      double s = L.biases[r];
      for (std::size_t c = 0; c < L.in; ++c) s += W[r][c] * a[c];
      z[r] = s;
    }
    if (l + 1 < p.layers.size())
      for (double& v : z) v = v > 0.0 ? v : 0.0;
    a = std::move(z);
  }
  return a;
}

/// Sign pattern of every hidden pre-activation; used to skip finite
/// differences that straddle a ReLU kink.
inline std::vector<bool> relu_pattern(const sliceops::MlpParams& p, const std::vector<double>& x) {
  std::vector<bool> pattern;
  std::vector<double> a = x;
  for (std::size_t l = 0; l + 1 < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    std::vector<double> z(L.out);
    for (std::size_t r = 0; r < L.out; ++r) {
      double s = L.biases[r];
      for (std::size_t c = 0; c < L.in; ++c) s += L.weights[r * L.in + c] * a[c];
      pattern.push_back(s > 0.0);
      z[r] = s > 0.0 ? s : 0.0;
    }
    a = std::move(z);
  }
  return pattern;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// Central differences (h = 1e-5) of L = dy . f(x) for every parameter.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline GradCheck finite_difference_check(sliceops::MlpParams p, const std::vector<double>& x,
                                         const std::vector<double>& dy, const sliceops::Gradients& analytic,
                                         double h = 1e-5) {
  auto loss = [&](const sliceops::MlpParams& q) {
    const auto y = forward(q, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += dy[i] * y[i];
    return s;
  };
  const auto base = relu_pattern(p, x);
  GradCheck out;
  auto check = [&](double& param, double grad) {
    const double keep = param;
    param = keep + h;
    const auto up_pattern = relu_pattern(p, x);
    const double up = loss(p);
    param = keep - h;
    const auto down_pattern = relu_pattern(p, x);
    const double down = loss(p);
    param = keep;
    if (up_pattern != base || down_pattern != base) {
      ++out.skipped;
      return;
    }
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(grad), std::abs(numeric), 1e-6});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(grad - numeric) / denom);
    ++out.checked;
  };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (std::size_t k = 0; k < p.layers[l].weights.size(); ++k) check(p.layers[l].weights[k], analytic.layers[l].weights[k]);
    for (std::size_t k = 0; k < p.layers[l].biases.size(); ++k) check(p.layers[l].biases[k], analytic.layers[l].biases[k]);
  }
  return out;
}

/// Exact Shapley values from the subset formula
///   phi_i = sum_S |S|! (M - |S| - 1)! / M! * (v(S + i) - v(S))
/// with v(S) the model mean over background rows where features outside S
/// take background values.
inline std::vector<double> exact_shapley(const std::function<double(const std::vector<double>&)>& f,
                                         const std::vector<double>& x,
                                         const std::vector<std::vector<double>>& background) {
  const std::size_t M = x.size();
  auto value = [&](std::uint32_t S) {
    double acc = 0.0;
    for (const auto& row : background) {
      std::vector<double> z(M);
      for (std::size_t i = 0; i < M; ++i) z[i] = (S >> i) & 1u ? x[i] : row[i];
      acc += f(z);
    }
    return acc / static_cast<double>(background.size());
  };
  std::vector<double> fact(M + 1, 1.0);
  for (std::size_t k = 1; k <= M; ++k) fact[k] = fact[k - 1] * static_cast<double>(k);
  std::vector<double> v(std::size_t{1} << M);
  for (std::uint32_t S = 0; S < v.size(); ++S) v[S] = value(S);
  std::vector<double> phi(M, 0.0);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::uint32_t S = 0; S < v.size(); ++S) {
      if ((S >> i) & 1u) continue;
      std::size_t k = 0;
      for (std::size_t j = 0; j < M; ++j) k += (S >> j) & 1u;
      const double w = fact[k] * fact[M - k - 1] / fact[M];
      phi[i] += w * (v[S | (1u << i)] - v[S]);
    }
  }
  return phi;
}

/// Quantile by the (n - 1) p linear-interpolation rule, recomputed without
/// sharing code with the harness.
inline double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const double lo = std::floor(h);
  const double hi = std::ceil(h);
  return v[static_cast<std::size_t>(lo)] + (h - lo) * (v[static_cast<std::size_t>(hi)] - v[static_cast<std::size_t>(lo)]);
}

inline double upper_whisker(std::vector<double> v) {
  const double q1 = quantile(v, 0.25), q3 = quantile(v, 0.75);
  const double fence = q3 + 1.5 * (q3 - q1);
  double best = q3;
  for (double x : v)
    if (x <= fence) best = std::max(best, x);
  return best;
}

}  // namespace oracle
