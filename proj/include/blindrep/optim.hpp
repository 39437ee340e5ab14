#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "blindrep/errors.hpp"
#include "blindrep/net.hpp"
#include "blindrep/rng.hpp"

namespace blindrep {

struct TrainConfig {
  int epochs = 150;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 128;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled; 0 keeps the plain Adam step
  uint64_t seed = 1;

  void validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("train config: beta1 must be in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("train config: beta2 must be in (0, 1)");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be > 0");
    if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
    if (!(epsilon > 0.0)) throw ConfigError("train config: epsilon must be > 0");
    if (weight_decay < 0.0) throw ConfigError("train config: weight_decay must be >= 0");
  }
};

struct AdamState {
  std::vector<Matrix> m_weight, v_weight;
  std::vector<std::vector<double>> m_bias, v_bias;
  long step = 0;

  static AdamState for_net(const DenseNet& net) {
    AdamState s;
    for (const Layer& l : net.layers()) {
      s.m_weight.emplace_back(l.out_dim(), l.in_dim());
      s.v_weight.emplace_back(l.out_dim(), l.in_dim());
      s.m_bias.emplace_back(l.bias.size(), 0.0);
      s.v_bias.emplace_back(l.bias.size(), 0.0);
    }
    return s;
  }

  bool matches(const DenseNet& net) const {
    if (m_weight.size() != net.depth()) return false;
    for (size_t i = 0; i < net.depth(); ++i) {
      if (!m_weight[i].same_shape(net.layers()[i].weight)) return false;
      if (m_bias[i].size() != net.layers()[i].bias.size()) return false;
    }
    return true;
  }
};

// Standard bias-corrected Adam step. The step counter is incremented before
// the bias correction; a non-finite gradient aborts before any mutation.
inline void adam_update(DenseNet& net, const Gradients& g, AdamState& state,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (!state.matches(net)) throw ShapeError("adam_update: state does not match net shapes");
  if (g.weight.size() != net.depth() || g.bias.size() != net.depth()) {
    throw ShapeError("adam_update: gradient layer count does not match net");
  }
  for (size_t i = 0; i < net.depth(); ++i) {
    if (!g.weight[i].same_shape(net.layers()[i].weight) ||
        g.bias[i].size() != net.layers()[i].bias.size()) {
      throw ShapeError("adam_update: gradient shapes do not match net at layer " +
                       std::to_string(i));
    }
  }
  if (!g.all_finite()) throw NumericError("adam_update: non-finite gradient, update aborted");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double mc = 1.0 - std::pow(cfg.beta1, t);
  const double vc = 1.0 - std::pow(cfg.beta2, t);

  const double decay = cfg.learning_rate * cfg.weight_decay;
  auto update = [&](double& p, double& m, double& v, double grad) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
    const double mhat = m / mc;
    const double vhat = v / vc;
    p -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
  };

  for (size_t i = 0; i < net.depth(); ++i) {
    Layer& layer = net.mutable_layers()[i];
    auto& w = layer.weight.data();
    const auto& gw = g.weight[i].data();
    auto& mw = state.m_weight[i].data();
    auto& vw = state.v_weight[i].data();
    for (size_t k = 0; k < w.size(); ++k) {
      update(w[k], mw[k], vw[k], gw[k]);
      if (decay > 0.0) w[k] -= decay * w[k];  // decay weights, not biases
    }
    for (size_t k = 0; k < layer.bias.size(); ++k) {
      update(layer.bias[k], state.m_bias[i][k], state.v_bias[i][k], g.bias[i][k]);
    }
  }
}

inline void accumulate(Gradients& into, const Gradients& from) {
  if (into.weight.empty()) {
    into = from;
    return;
  }
  for (size_t i = 0; i < into.weight.size(); ++i) {
    auto& w = into.weight[i].data();
    const auto& f = from.weight[i].data();
    for (size_t k = 0; k < w.size(); ++k) w[k] += f[k];
    for (size_t k = 0; k < into.bias[i].size(); ++k) into.bias[i][k] += from.bias[i][k];
  }
}

namespace detail {

inline Matrix gather_rows(const Matrix& x, std::span<const size_t> idx) {
  Matrix out(idx.size(), x.cols());
  for (size_t r = 0; r < idx.size(); ++r) {
    const double* src = x.row(idx[r]);
    double* dst = out.row(r);
    for (size_t c = 0; c < x.cols(); ++c) dst[c] = src[c];
  }
  return out;
}

}  // namespace detail

// Minibatch Adam training of a softmax-final classifier with cross-entropy.
// Deterministic for a fixed config: the shuffle order and initial state are
// functions of cfg.seed only.
inline void train_softmax_classifier(DenseNet& net, const Matrix& inputs,
                                     std::span<const int> labels, const TrainConfig& cfg) {
  cfg.validate();
  if (net.layers().back().activation != Activation::kSoftmax) {
    throw ShapeError("train_softmax_classifier: net '" + net.name() + "' must end in softmax");
  }
  if (inputs.rows() != labels.size()) {
    throw ShapeError("train_softmax_classifier: " + std::to_string(inputs.rows()) +
                     " rows vs " + std::to_string(labels.size()) + " labels");
  }
  if (inputs.rows() == 0) throw DataError("train_softmax_classifier: empty training set");
  const size_t classes = net.output_dim();
  for (int y : labels) {
    if (y < 0 || static_cast<size_t>(y) >= classes) {
      throw ArgumentError("train_softmax_classifier: label " + std::to_string(y) +
                          " out of range for " + std::to_string(classes) + " classes");
    }
  }

  AdamState state = AdamState::for_net(net);
  Rng rng(cfg.seed);
  std::vector<size_t> order(inputs.rows());
  std::iota(order.begin(), order.end(), size_t{0});
  const size_t bs = static_cast<size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += bs) {
      const size_t b = std::min(bs, order.size() - start);
      Matrix xb = detail::gather_rows(inputs, {order.data() + start, b});
      ForwardPass fp = forward(net, xb);
      Matrix grad = fp.output();  // softmax probabilities
      for (size_t r = 0; r < b; ++r) {
        grad(r, static_cast<size_t>(labels[order[start + r]])) -= 1.0;
      }
      const double inv_b = 1.0 / static_cast<double>(b);
      for (double& v : grad.data()) v *= inv_b;
      Gradients g = backward(net, fp, grad, GradSeed::kFinalPreactivation);
      adam_update(net, g, state, cfg);
    }
  }
}

inline std::vector<int> predict_classes(const DenseNet& net, const Matrix& inputs) {
  ForwardPass fp = forward(net, inputs);
  const Matrix& out = fp.output();
  std::vector<int> pred(out.rows());
  for (size_t r = 0; r < out.rows(); ++r) {
    const double* row = out.row(r);
    size_t best = 0;
    for (size_t j = 1; j < out.cols(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    pred[r] = static_cast<int>(best);
  }
  return pred;
}

inline double classification_accuracy(const DenseNet& net, const Matrix& inputs,
                                      std::span<const int> labels) {
  if (inputs.rows() == 0) throw DataError("classification_accuracy: empty sample set");
  const std::vector<int> pred = predict_classes(net, inputs);
  size_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Minibatch Adam training of a sigmoid-output binary classifier with
// binary cross-entropy (gradient p - y at the final pre-activation).
inline void train_sigmoid_binary(DenseNet& net, const Matrix& inputs,
                                 std::span<const int> labels, const TrainConfig& cfg) {
  cfg.validate();
  if (net.output_dim() != 1 || net.layers().back().activation != Activation::kSigmoid) {
    throw ShapeError("train_sigmoid_binary: net '" + net.name() +
                     "' must end in a single sigmoid unit");
  }
  if (inputs.rows() != labels.size()) {
    throw ShapeError("train_sigmoid_binary: rows vs labels mismatch");
  }
  if (inputs.rows() == 0) throw DataError("train_sigmoid_binary: empty training set");

  AdamState state = AdamState::for_net(net);
  Rng rng(cfg.seed);
  std::vector<size_t> order(inputs.rows());
  std::iota(order.begin(), order.end(), size_t{0});
  const size_t bs = static_cast<size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += bs) {
      const size_t b = std::min(bs, order.size() - start);
      Matrix xb = detail::gather_rows(inputs, {order.data() + start, b});
      ForwardPass fp = forward(net, xb);
      Matrix grad(b, 1);
      const double inv_b = 1.0 / static_cast<double>(b);
      for (size_t r = 0; r < b; ++r) {
        grad(r, 0) = (fp.output()(r, 0) - static_cast<double>(labels[order[start + r]])) * inv_b;
      }
      Gradients g = backward(net, fp, grad, GradSeed::kFinalPreactivation);
      adam_update(net, g, state, cfg);
    }
  }
}

inline std::vector<double> predict_sigmoid(const DenseNet& net, const Matrix& inputs) {
  ForwardPass fp = forward(net, inputs);
  std::vector<double> p(inputs.rows());
  for (size_t r = 0; r < inputs.rows(); ++r) p[r] = fp.output()(r, 0);
  return p;
}

}  // namespace blindrep
