#pragma once

// Layers built on the tensor engine: affine maps and recurrent cells.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "stocktime/rng.hpp"
#include "stocktime/tensor.hpp"

namespace stocktime {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
inline Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng, bool requires_grad) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor normal_init(Shape shape, double sd, Rng& rng, bool requires_grad) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.normal(0.0, sd);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// y = x W + b with W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng, bool trainable = true) {
    Linear l;
    l.weight = uniform_init({in, out}, in, rng, trainable);
    l.bias = uniform_init({out}, in, rng, trainable);
    return l;
  }

  bool defined() const { return weight.defined(); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

/// One LSTM layer, gate order (input, forget, cell, output).
struct LstmLayer {
  Tensor w_ih;  // [in, 4H]
  Tensor w_hh;  // [H, 4H]
  Tensor bias;  // [4H]
  std::size_t hidden = 0;

  static LstmLayer init(std::size_t in, std::size_t hidden, Rng& rng, bool trainable = true) {
    LstmLayer l;
    l.hidden = hidden;
    l.w_ih = uniform_init({in, 4 * hidden}, in, rng, trainable);
    l.w_hh = uniform_init({hidden, 4 * hidden}, hidden, rng, trainable);
    l.bias = uniform_init({4 * hidden}, hidden, rng, trainable);
    return l;
  }
};

struct Lstm {
  std::vector<LstmLayer> layers;

  static Lstm init(std::size_t in, std::size_t hidden, std::size_t num_layers, Rng& rng, bool trainable = true) {
    Lstm m;
    for (std::size_t i = 0; i < num_layers; ++i) m.layers.push_back(LstmLayer::init(i == 0 ? in : hidden, hidden, rng, trainable));
    return m;
  }

  std::size_t hidden() const { return layers.empty() ? 0 : layers.front().hidden; }

  /// `steps` holds T tensors of shape [N, in]; returns the top layer's hidden
  /// state at every step. Initial states are zero.
  std::vector<Tensor> run(const std::vector<Tensor>& steps) const {
    std::vector<Tensor> seq = steps;
    for (const auto& layer : layers) {
      const std::size_t H = layer.hidden;
      std::vector<Tensor> out;
      out.reserve(seq.size());
      Tensor h, c;
      for (std::size_t t = 0; t < seq.size(); ++t) {
        Tensor gates = matmul(seq[t], layer.w_ih);
        if (t > 0) gates = add(gates, matmul(h, layer.w_hh));
        gates = add(gates, layer.bias);
        const Tensor i = sigmoid(slice_last(gates, 0, H));
        const Tensor g = tanh(slice_last(gates, 2 * H, H));
        const Tensor o = sigmoid(slice_last(gates, 3 * H, H));
        if (t == 0) {
          c = mul(i, g);
        } else {
          const Tensor f = sigmoid(slice_last(gates, H, H));
          c = add(mul(f, c), mul(i, g));
        }
        h = mul(o, tanh(c));
        out.push_back(h);
      }
      seq = std::move(out);
    }
    return seq;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto p = prefix + "." + std::to_string(i);
      out.push_back({p + ".w_ih", layers[i].w_ih});
      out.push_back({p + ".w_hh", layers[i].w_hh});
      out.push_back({p + ".bias", layers[i].bias});
    }
  }
};

/// Elman cell stack: h_t = tanh(x_t W_ih + h_{t-1} W_hh + b).
struct Rnn {
  struct Layer {
    Tensor w_ih, w_hh, bias;
    std::size_t hidden = 0;
  };
  std::vector<Layer> layers;

  static Rnn init(std::size_t in, std::size_t hidden, std::size_t num_layers, Rng& rng) {
    Rnn m;
    for (std::size_t i = 0; i < num_layers; ++i) {
      const std::size_t fan = i == 0 ? in : hidden;
      Layer l;
      l.hidden = hidden;
      l.w_ih = uniform_init({fan, hidden}, fan, rng, true);
      l.w_hh = uniform_init({hidden, hidden}, hidden, rng, true);
      l.bias = uniform_init({hidden}, hidden, rng, true);
      m.layers.push_back(std::move(l));
    }
    return m;
  }

  std::vector<Tensor> run(const std::vector<Tensor>& steps) const {
    std::vector<Tensor> seq = steps;
    for (const auto& layer : layers) {
      std::vector<Tensor> out;
      Tensor h;
      for (std::size_t t = 0; t < seq.size(); ++t) {
        Tensor pre = matmul(seq[t], layer.w_ih);
        if (t > 0) pre = add(pre, matmul(h, layer.w_hh));
        h = tanh(add(pre, layer.bias));
        out.push_back(h);
      }
      seq = std::move(out);
    }
    return seq;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto p = prefix + "." + std::to_string(i);
      out.push_back({p + ".w_ih", layers[i].w_ih});
      out.push_back({p + ".w_hh", layers[i].w_hh});
      out.push_back({p + ".bias", layers[i].bias});
    }
  }
};

/// Splits [N, T] into T column tensors of shape [N, 1].
inline std::vector<Tensor> columns_as_steps(const Tensor& x) {
  std::vector<Tensor> steps;
  const std::size_t T = x.dim(1);
  steps.reserve(T);
  for (std::size_t t = 0; t < T; ++t) steps.push_back(slice(x, 1, t, 1));
  return steps;
}

}  // namespace stocktime
