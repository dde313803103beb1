#pragma once

// Dense ReLU network with hand-written backprop, Adam, and a canonical text
// serialization used by the model registry.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sliceops {

/// Weights are stored row-major as [out][in].
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> biases;

  double& w(std::size_t row, std::size_t col) { return weights[row * in + col]; }
  double w(std::size_t row, std::size_t col) const { return weights[row * in + col]; }

  bool operator==(const DenseLayer&) const = default;
};

struct MlpParams {
  std::vector<std::size_t> layer_dims;
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.biases.size();
    return n;
  }

  bool operator==(const MlpParams&) const = default;
};

/// Gradients share the parameter layout.
using Gradients = MlpParams;

inline const std::vector<std::size_t>& default_layer_dims() {
  static const std::vector<std::size_t> dims = {5, 24, 24, 10};
  return dims;
}

inline MlpParams zero_params(const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) throw std::invalid_argument("an MLP needs at least an input and an output layer");
  MlpParams p;
  p.layer_dims = dims;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l] == 0 || dims[l + 1] == 0) throw std::invalid_argument("layer dimensions must be positive");
    DenseLayer layer;
    layer.in = dims[l];
    layer.out = dims[l + 1];
    layer.weights.assign(layer.in * layer.out, 0.0);
    layer.biases.assign(layer.out, 0.0);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

/// He-uniform weights in (-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
inline MlpParams init_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  MlpParams p = zero_params(dims);
  std::mt19937_64 rng(seed);
  for (auto& layer : p.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : layer.weights) w = dist(rng);
  }
  return p;
}

/// Activations of every layer; activations[0] is the input, the last entry
/// the (linear) output. pre_activations[l] feeds activations[l + 1].
struct ForwardCache {
  std::vector<std::vector<double>> activations;
  std::vector<std::vector<double>> pre_activations;

  std::span<const double> output() const { return activations.back(); }
};

inline void check_finite_input(const MlpParams& params, std::span<const double> x) {
  if (x.size() != params.input_dim())
    throw std::invalid_argument("input has " + std::to_string(x.size()) + " features, expected " +
                                std::to_string(params.input_dim()));
  for (double v : x)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite network input");
}

inline ForwardCache forward(const MlpParams& params, std::span<const double> x) {
  check_finite_input(params, x);
  ForwardCache cache;
  cache.activations.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const DenseLayer& layer = params.layers[l];
    const std::vector<double>& a = cache.activations.back();
    std::vector<double> z(layer.out);
    for (std::size_t r = 0; r < layer.out; ++r) {
      double s = layer.biases[r];
      const double* row = &layer.weights[r * layer.in];
      for (std::size_t c = 0; c < layer.in; ++c) s += row[c] * a[c];
      z[r] = s;
    }
    std::vector<double> h = z;
    if (l + 1 < params.layers.size())
      for (double& v : h) v = v > 0.0 ? v : 0.0;
    cache.pre_activations.push_back(std::move(z));
    cache.activations.push_back(std::move(h));
  }
  return cache;
}

inline std::vector<double> predict(const MlpParams& params, std::span<const double> x) {
  return std::move(forward(params, x).activations.back());
}

/// Adds the gradient of <dL/dy, f(x)> into `grads`.
inline void accumulate_gradients(const MlpParams& params, const ForwardCache& cache, std::span<const double> dy,
                                 Gradients& grads) {
  if (dy.size() != params.output_dim()) throw std::invalid_argument("output gradient has wrong length");
  std::vector<double> delta(dy.begin(), dy.end());
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const DenseLayer& layer = params.layers[l];
    DenseLayer& g = grads.layers[l];
    const std::vector<double>& a_in = cache.activations[l];
    for (std::size_t r = 0; r < layer.out; ++r) {
      g.biases[r] += delta[r];
      double* grow = &g.weights[r * layer.in];
      for (std::size_t c = 0; c < layer.in; ++c) grow[c] += delta[r] * a_in[c];
    }
    if (l == 0) break;
    std::vector<double> prev(layer.in, 0.0);
    for (std::size_t r = 0; r < layer.out; ++r) {
      const double* row = &layer.weights[r * layer.in];
      for (std::size_t c = 0; c < layer.in; ++c) prev[c] += row[c] * delta[r];
    }
    // ReLU'(0) = 0
    const std::vector<double>& z_prev = cache.pre_activations[l - 1];
    for (std::size_t c = 0; c < layer.in; ++c)
      if (!(z_prev[c] > 0.0)) prev[c] = 0.0;
    delta = std::move(prev);
  }
}

inline Gradients backward(const MlpParams& params, const ForwardCache& cache, std::span<const double> dy) {
  Gradients g = zero_params(params.layer_dims);
  accumulate_gradients(params, cache, dy, g);
  return g;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  Gradients m;
  Gradients v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const MlpParams& params) {
    return AdamState{zero_params(params.layer_dims), zero_params(params.layer_dims)};
  }
};

inline void adam_step(MlpParams& params, AdamState& state, const Gradients& grads, double lr) {
  if (state.m.layer_dims != params.layer_dims || grads.layer_dims != params.layer_dims)
    throw std::invalid_argument("Adam state, gradients and parameters must share a shape");
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  auto update = [&](std::vector<double>& p, std::vector<double>& m, std::vector<double>& v,
                    const std::vector<double>& g) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weights, state.m.layers[l].weights, state.v.layers[l].weights, grads.layers[l].weights);
    update(params.layers[l].biases, state.m.layers[l].biases, state.v.layers[l].biases, grads.layers[l].biases);
  }
}

// ---------------------------------------------------------------------------
// Canonical text form
//
//   sliceops-mlp 1
//   layer_dims 5 24 24 10
//   weights 0 <out*in values, row-major>
//   biases 0 <out values>
//   ...
//
// Every value is printed with 17 significant digits, which round-trips a
// double exactly.

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::size_t token, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", token " + std::to_string(token) + ": " + what),
        line_(line),
        token_(token) {}
  std::size_t line() const { return line_; }
  std::size_t token() const { return token_; }

 private:
  std::size_t line_;
  std::size_t token_;
};

inline void append_double(std::string& out, double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

inline std::string serialize(const MlpParams& params) {
  std::string out = "sliceops-mlp 1\nlayer_dims";
  for (std::size_t d : params.layer_dims) out += " " + std::to_string(d);
  out += '\n';
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    out += "weights " + std::to_string(l);
    for (double w : params.layers[l].weights) {
      out += ' ';
      append_double(out, w);
    }
    out += "\nbiases " + std::to_string(l);
    for (double b : params.layers[l].biases) {
      out += ' ';
      append_double(out, b);
    }
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) tokens.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

inline double parse_double(const std::string& tok, std::size_t line, std::size_t index) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || tok.empty()) throw ParseError(line, index, "not a number: '" + tok + "'");
  if (!std::isfinite(v)) throw ParseError(line, index, "non-finite value");
  return v;
}

inline std::size_t parse_size(const std::string& tok, std::size_t line, std::size_t index) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
    throw ParseError(line, index, "expected a non-negative integer, got '" + tok + "'");
  return static_cast<std::size_t>(std::stoull(tok));
}

}  // namespace detail

inline MlpParams deserialize(std::string_view text) {
  std::vector<std::vector<std::string>> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    lines.push_back(detail::split_ws(text.substr(start, nl - start)));
    start = nl + 1;
  }
  auto line_at = [&](std::size_t i) -> const std::vector<std::string>& {
    if (i >= lines.size() || lines[i].empty()) throw ParseError(i + 1, 0, "unexpected end of input");
    return lines[i];
  };

  const auto& header = line_at(0);
  if (header.size() != 2 || header[0] != "sliceops-mlp" || header[1] != "1")
    throw ParseError(1, 0, "missing 'sliceops-mlp 1' header");

  const auto& dims_line = line_at(1);
  if (dims_line[0] != "layer_dims") throw ParseError(2, 0, "expected 'layer_dims'");
  if (dims_line.size() < 3) throw ParseError(2, dims_line.size(), "need at least two layer dimensions");
  std::vector<std::size_t> dims;
  for (std::size_t k = 1; k < dims_line.size(); ++k) {
    dims.push_back(detail::parse_size(dims_line[k], 2, k));
    if (dims.back() == 0 || dims.back() > 100000) throw ParseError(2, k, "layer dimension out of range");
  }
  MlpParams p = zero_params(dims);

  auto read_values = [&](std::size_t line_index, const std::string& tag, std::size_t layer,
                         std::vector<double>& dst) {
    const auto& toks = line_at(line_index);
    const std::size_t line_no = line_index + 1;
    if (toks[0] != tag) throw ParseError(line_no, 0, "expected '" + tag + "'");
    if (toks.size() < 2 || detail::parse_size(toks[1], line_no, 1) != layer)
      throw ParseError(line_no, 1, "expected layer index " + std::to_string(layer));
    if (toks.size() - 2 != dst.size())
      throw ParseError(line_no, toks.size(),
                       "expected " + std::to_string(dst.size()) + " values, got " + std::to_string(toks.size() - 2));
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = detail::parse_double(toks[k + 2], line_no, k + 2);
  };

  std::size_t line_index = 2;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    read_values(line_index++, "weights", l, p.layers[l].weights);
    read_values(line_index++, "biases", l, p.layers[l].biases);
  }
  for (std::size_t i = line_index; i < lines.size(); ++i)
    if (!lines[i].empty()) throw ParseError(i + 1, 0, "trailing content");
  return p;
}

}  // namespace sliceops
