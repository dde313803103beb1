#pragma once

// Perturbation-based attributions of a scalar model output to its input
// features: single-baseline occlusion and Kernel SHAP with exhaustive
// coalition enumeration.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sliceops/ddqn.hpp"
#include "sliceops/env_gnb.hpp"
#include "sliceops/mlp.hpp"

namespace sliceops {

struct Explanation {
  double base_value = 0.0;
  double fx = 0.0;
  std::vector<double> phi;
  std::vector<double> feature_values;
  std::vector<std::string> feature_names;
  int action_index = -1;

  double local_accuracy_gap() const {
    double s = base_value;
    for (double p : phi) s += p;
    return std::abs(s - fx);
  }
};

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Shapley kernel weight of a coalition of size k out of M features. The
/// empty and full coalitions have infinite weight and are handled as
/// equality constraints instead.
inline double shapley_kernel_weight(int M, int k) {
  if (M < 2 || k <= 0 || k >= M) throw std::domain_error("kernel weight defined only for 0 < k < M");
  return (M - 1) / (binomial(M, k) * k * (M - k));
}

/// phi_i = f(x) - f(x with feature i set to baseline_i).
template <class Model>
std::vector<double> occlusion_attribution(Model&& f, std::span<const double> x, std::span<const double> baseline) {
  if (x.size() != baseline.size()) throw std::invalid_argument("point and baseline differ in length");
  std::vector<double> z(x.begin(), x.end());
  const double fx = f(std::span<const double>(z));
  std::vector<double> phi(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    z[i] = baseline[i];
    phi[i] = fx - f(std::span<const double>(z));
    z[i] = x[i];
  }
  return phi;
}

/// Kernel SHAP with all 2^M coalitions. Masked features take background
/// values; the coalition value is the mean model output over the background
/// rows. The weighted least-squares problem is solved with the efficiency
/// constraint sum(phi) = f(x) - E[f] eliminated exactly, so local accuracy
/// holds to rounding error.
template <class Model>
Explanation kernel_shap(Model&& f, std::span<const double> x, std::span<const std::vector<double>> background) {
  const std::size_t M = x.size();
  if (M == 0) throw std::invalid_argument("cannot explain a zero-feature input");
  if (M > 20) throw std::invalid_argument("exact coalition enumeration supports at most 20 features");
  if (background.empty()) throw std::invalid_argument("background batch must not be empty");
  for (const auto& row : background) {
    if (row.size() != M) throw std::invalid_argument("background row width differs from the explained point");
    for (double v : row)
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite background value");
  }

  const std::uint32_t full = (std::uint32_t{1} << M) - 1;
  std::vector<double> value(std::size_t{full} + 1, 0.0);
  std::vector<double> z(M);
  for (std::uint32_t mask = 0; mask < full; ++mask) {
    double acc = 0.0;
    for (const auto& row : background) {
      for (std::size_t i = 0; i < M; ++i) z[i] = (mask >> i) & 1u ? x[i] : row[i];
      acc += f(std::span<const double>(z));
    }
    value[mask] = acc / static_cast<double>(background.size());
  }
  value[full] = f(x);

  Explanation e;
  e.base_value = value[0];
  e.fx = value[full];
  e.feature_values.assign(x.begin(), x.end());
  e.phi.assign(M, 0.0);
  const double delta = e.fx - e.base_value;
  if (M == 1) {
    e.phi[0] = delta;
    return e;
  }

  // Substitute phi_{M-1} = delta - sum_{i<M-1} phi_i and solve the normal
  // equations for the first M-1 attributions.
  const std::size_t last = M - 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(last), static_cast<Eigen::Index>(last));
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(last));
  Eigen::VectorXd row(static_cast<Eigen::Index>(last));
  for (std::uint32_t mask = 1; mask < full; ++mask) {
    const int k = std::popcount(mask);
    const double w = shapley_kernel_weight(static_cast<int>(M), k);
    const double z_last = (mask >> last) & 1u ? 1.0 : 0.0;
    for (std::size_t i = 0; i < last; ++i)
      row[static_cast<Eigen::Index>(i)] = ((mask >> i) & 1u ? 1.0 : 0.0) - z_last;
    const double target = value[mask] - e.base_value - z_last * delta;
    A.noalias() += w * row * row.transpose();
    b.noalias() += w * target * row;
  }
  const Eigen::VectorXd sol = A.ldlt().solve(b);
  double sum = 0.0;
  for (std::size_t i = 0; i < last; ++i) {
    e.phi[i] = sol[static_cast<Eigen::Index>(i)];
    sum += e.phi[i];
  }
  e.phi[last] = delta - sum;
  return e;
}

/// Scalar view of a Q-network: the Q-value of one fixed action.
class QValueModel {
 public:
  QValueModel(const MlpParams& params, int action) : params_(&params), action_(static_cast<std::size_t>(action)) {
    if (action < 0 || action_ >= params.output_dim()) throw std::out_of_range("explained action out of range");
    std::size_t widest = 0;
    for (std::size_t d : params.layer_dims) widest = std::max(widest, d);
    a_.resize(widest);
    b_.resize(widest);
  }

  double operator()(std::span<const double> x) {
    const auto& layers = params_->layers;
    std::copy(x.begin(), x.end(), a_.begin());
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
      const DenseLayer& L = layers[l];
      for (std::size_t r = 0; r < L.out; ++r) {
        const double* w = &L.weights[r * L.in];
        double s = L.biases[r];
        for (std::size_t c = 0; c < L.in; ++c) s += w[c] * a_[c];
        b_[r] = s > 0.0 ? s : 0.0;
      }
      a_.swap(b_);
    }
    const DenseLayer& L = layers.back();
    const double* w = &L.weights[action_ * L.in];
    double s = L.biases[action_];
    for (std::size_t c = 0; c < L.in; ++c) s += w[c] * a_[c];
    return s;
  }

 private:
  const MlpParams* params_;
  std::size_t action_;
  std::vector<double> a_, b_;
};

struct BatchExplanation {
  std::vector<Explanation> samples;
  std::vector<double> mean_abs_phi;
};

inline std::vector<std::string> observation_feature_names() {
  const auto& names = feature_names();
  return {names.begin(), names.end()};
}

/// Explains each state at its own greedy action.
inline Explanation explain_state(const MlpParams& params, const Observation& state,
                                 std::span<const std::vector<double>> background) {
  const int action = greedy_action(predict(params, state));
  QValueModel model(params, action);
  Explanation e = kernel_shap(model, state, background);
  e.action_index = action;
  e.feature_names = observation_feature_names();
  return e;
}

inline BatchExplanation explain_batch(const MlpParams& params, std::span<const Observation> states,
                                      std::span<const std::vector<double>> background) {
  BatchExplanation out;
  out.mean_abs_phi.assign(params.input_dim(), 0.0);
  for (const Observation& s : states) {
    out.samples.push_back(explain_state(params, s, background));
    for (std::size_t i = 0; i < out.mean_abs_phi.size(); ++i) out.mean_abs_phi[i] += std::abs(out.samples.back().phi[i]);
  }
  if (!states.empty())
    for (double& v : out.mean_abs_phi) v /= static_cast<double>(states.size());
  return out;
}

inline std::vector<std::vector<double>> to_background(std::span<const Observation> states) {
  std::vector<std::vector<double>> rows;
  rows.reserve(states.size());
  for (const auto& s : states) rows.emplace_back(s.begin(), s.end());
  return rows;
}

}  // namespace sliceops
