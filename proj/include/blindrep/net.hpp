#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "blindrep/errors.hpp"
#include "blindrep/matrix.hpp"
#include "blindrep/rng.hpp"

namespace blindrep {

enum class Activation { kLinear, kRelu, kSigmoid, kSoftmax };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  return "linear";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "linear") return Activation::kLinear;
  if (s == "relu") return Activation::kRelu;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "softmax") return Activation::kSoftmax;
  throw ParseError("unknown activation '" + s + "'");
}

struct Layer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::kLinear;

  size_t in_dim() const { return weight.cols(); }
  size_t out_dim() const { return weight.rows(); }
};

struct LayerSpec {
  size_t units = 0;
  Activation activation = Activation::kLinear;
};

// Fixed feed-forward dense topology. One instance houses any of the trainable
// parameter sets of the pipeline (suppressor, task heads, probe networks); the
// name tag records which role it plays.
class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(std::string name, std::vector<Layer> layers)
      : name_(std::move(name)), layers_(std::move(layers)) {
    validate();
  }

  // Seeded uniform init in +-sqrt(6 / (in + out)).
  static DenseNet glorot(std::string name, size_t input_dim,
                         std::span<const LayerSpec> specs, Rng& rng) {
    std::vector<Layer> layers;
    size_t in = input_dim;
    for (const LayerSpec& spec : specs) {
      Layer layer;
      layer.weight = Matrix(spec.units, in);
      layer.bias.assign(spec.units, 0.0);
      layer.activation = spec.activation;
      const double bound = std::sqrt(6.0 / static_cast<double>(in + spec.units));
      for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
      layers.push_back(std::move(layer));
      in = spec.units;
    }
    return DenseNet(std::move(name), std::move(layers));
  }

  // Stack of square linear layers initialised to the identity map.
  static DenseNet identity_stack(std::string name, size_t dim, size_t depth) {
    std::vector<Layer> layers;
    for (size_t i = 0; i < depth; ++i) {
      Layer layer;
      layer.weight = Matrix::identity(dim);
      layer.bias.assign(dim, 0.0);
      layer.activation = Activation::kLinear;
      layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(name), std::move(layers));
  }

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }

  size_t depth() const { return layers_.size(); }
  size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
  size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

  size_t parameter_count() const {
    size_t n = 0;
    for (const Layer& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  void validate() const {
    for (size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      if (l.bias.size() != l.out_dim()) {
        throw ShapeError("net '" + name_ + "': layer " + std::to_string(i) +
                         ": bias size " + std::to_string(l.bias.size()) +
                         " != output dim " + std::to_string(l.out_dim()));
      }
      if (i + 1 < layers_.size()) {
        if (l.out_dim() != layers_[i + 1].in_dim()) {
          throw ShapeError("net '" + name_ + "': layer " + std::to_string(i) +
                           " output dim " + std::to_string(l.out_dim()) +
                           " != layer " + std::to_string(i + 1) + " input dim " +
                           std::to_string(layers_[i + 1].in_dim()));
        }
        if (l.activation == Activation::kSoftmax) {
          throw ShapeError("net '" + name_ + "': softmax allowed only as the final activation");
        }
      }
    }
  }

 private:
  std::string name_;
  std::vector<Layer> layers_;
};

struct ForwardPass {
  Matrix input;
  std::vector<Matrix> pre;   // pre-activation per layer
  std::vector<Matrix> post;  // post-activation per layer
  const Matrix& output() const { return post.back(); }
};

namespace detail {

inline void apply_activation(Activation act, const Matrix& pre, Matrix& post) {
  post = pre;
  switch (act) {
    case Activation::kLinear:
      break;
    case Activation::kRelu:
      for (double& v : post.data()) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::kSigmoid:
      for (double& v : post.data()) v = 1.0 / (1.0 + std::exp(-v));
      break;
    case Activation::kSoftmax:
      for (size_t r = 0; r < post.rows(); ++r) {
        double* row = post.row(r);
        double mx = row[0];
        for (size_t j = 1; j < post.cols(); ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (size_t j = 0; j < post.cols(); ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (size_t j = 0; j < post.cols(); ++j) row[j] /= sum;
      }
      break;
  }
}

// dz from da given the layer's pre/post activations.
inline Matrix activation_backward(Activation act, const Matrix& pre, const Matrix& post,
                                  const Matrix& da) {
  Matrix dz = da;
  switch (act) {
    case Activation::kLinear:
      break;
    case Activation::kRelu:
      for (size_t i = 0; i < dz.size(); ++i) {
        if (pre.data()[i] <= 0.0) dz.data()[i] = 0.0;  // subgradient 0 at the kink
      }
      break;
    case Activation::kSigmoid:
      for (size_t i = 0; i < dz.size(); ++i) {
        const double a = post.data()[i];
        dz.data()[i] *= a * (1.0 - a);
      }
      break;
    case Activation::kSoftmax:
      for (size_t r = 0; r < dz.rows(); ++r) {
        const double* a = post.row(r);
        const double* g = da.row(r);
        double s = 0.0;
        for (size_t j = 0; j < dz.cols(); ++j) s += g[j] * a[j];
        double* out = dz.row(r);
        for (size_t j = 0; j < dz.cols(); ++j) out[j] = a[j] * (g[j] - s);
      }
      break;
  }
  return dz;
}

}  // namespace detail

inline ForwardPass forward(const DenseNet& net, const Matrix& batch) {
  if (net.depth() == 0) throw ShapeError("forward: net '" + net.name() + "' has no layers");
  if (batch.cols() != net.input_dim()) {
    throw ShapeError("forward: net '" + net.name() + "': layer 0 expects " +
                     std::to_string(net.input_dim()) + " inputs, batch has " +
                     std::to_string(batch.cols()) + " columns");
  }
  ForwardPass fp;
  fp.input = batch;
  fp.pre.reserve(net.depth());
  fp.post.reserve(net.depth());
  const Matrix* x = &fp.input;
  for (size_t i = 0; i < net.depth(); ++i) {
    const Layer& layer = net.layers()[i];
    Matrix z = matmul_nt(*x, layer.weight);
    for (size_t r = 0; r < z.rows(); ++r) {
      double* row = z.row(r);
      for (size_t j = 0; j < z.cols(); ++j) row[j] += layer.bias[j];
    }
    Matrix a;
    detail::apply_activation(layer.activation, z, a);
    fp.pre.push_back(std::move(z));
    fp.post.push_back(std::move(a));
    x = &fp.post.back();
  }
  return fp;
}

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<std::vector<double>> bias;
  Matrix input;  // gradient w.r.t. the batch input

  bool all_finite() const {
    for (const Matrix& w : weight) {
      if (!w.all_finite()) return false;
    }
    for (const auto& b : bias) {
      for (double v : b) {
        if (!std::isfinite(v)) return false;
      }
    }
    return input.all_finite();
  }
};

// Where the seed gradient of backward() applies. Classification training
// seeds at the final pre-activation (softmax/sigmoid folded into the loss);
// generic losses seed at the network output.
enum class GradSeed { kOutput, kFinalPreactivation };

inline Gradients backward(const DenseNet& net, const ForwardPass& fp, const Matrix& out_grad,
                          GradSeed seed = GradSeed::kOutput) {
  if (fp.post.size() != net.depth() || fp.pre.size() != net.depth()) {
    throw ShapeError("backward: activations do not match net '" + net.name() + "'");
  }
  if (!out_grad.same_shape(fp.post.back())) {
    throw ShapeError("backward: net '" + net.name() + "': output gradient is " +
                     std::to_string(out_grad.rows()) + "x" + std::to_string(out_grad.cols()) +
                     ", expected " + std::to_string(fp.post.back().rows()) + "x" +
                     std::to_string(fp.post.back().cols()));
  }
  for (size_t i = 0; i < net.depth(); ++i) {
    if (fp.pre[i].cols() != net.layers()[i].out_dim()) {
      throw ShapeError("backward: stale activations at layer " + std::to_string(i) +
                       " of net '" + net.name() + "'");
    }
  }

  Gradients g;
  g.weight.resize(net.depth());
  g.bias.resize(net.depth());

  Matrix dz;
  for (size_t ii = net.depth(); ii-- > 0;) {
    const Layer& layer = net.layers()[ii];
    if (ii == net.depth() - 1) {
      if (seed == GradSeed::kFinalPreactivation) {
        dz = out_grad;
      } else {
        dz = detail::activation_backward(layer.activation, fp.pre[ii], fp.post[ii], out_grad);
      }
    } else {
      dz = detail::activation_backward(layer.activation, fp.pre[ii], fp.post[ii], dz);
    }
    const Matrix& below = ii == 0 ? fp.input : fp.post[ii - 1];
    g.weight[ii] = matmul_tn(dz, below);
    g.bias[ii].assign(layer.out_dim(), 0.0);
    for (size_t r = 0; r < dz.rows(); ++r) {
      const double* row = dz.row(r);
      for (size_t j = 0; j < dz.cols(); ++j) g.bias[ii][j] += row[j];
    }
    dz = matmul(dz, layer.weight);  // gradient w.r.t. the layer input
  }
  g.input = std::move(dz);
  return g;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& tok, int line, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') {
    throw ParseError(std::string(what) + ": line " + std::to_string(line) +
                     ": cannot parse '" + tok + "' as a number");
  }
  return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream iss(line);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

}  // namespace detail

// Versioned flat text format: header with layer count, per-layer dims and
// activation codes, then row-major parameter values as decimal text. Values
// are written with 17 significant digits so a round trip is bit-exact.
inline void save_network(const DenseNet& net, std::ostream& os) {
  os << "densenet 1\n";
  os << "name " << net.name() << "\n";
  os << "layers " << net.depth() << "\n";
  for (const Layer& l : net.layers()) {
    os << "layer " << l.out_dim() << " " << l.in_dim() << " "
       << activation_name(l.activation) << "\n";
  }
  for (const Layer& l : net.layers()) {
    for (size_t r = 0; r < l.out_dim(); ++r) {
      const double* row = l.weight.row(r);
      for (size_t c = 0; c < l.in_dim(); ++c) {
        if (c) os << ' ';
        os << detail::format_double(row[c]);
      }
      os << "\n";
    }
    for (size_t j = 0; j < l.bias.size(); ++j) {
      if (j) os << ' ';
      os << detail::format_double(l.bias[j]);
    }
    os << "\n";
  }
}

inline void save_network(const DenseNet& net, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  save_network(net, os);
  if (!os) throw DataError("failed while writing '" + path + "'");
}

// `line` carries the running 1-based line count so callers embedding a
// network in a larger file report correct positions.
inline DenseNet load_network(std::istream& is, int& line) {
  std::string text;
  auto next_line = [&]() -> std::string {
    if (!std::getline(is, text)) {
      throw ParseError("model file: line " + std::to_string(line + 1) + ": unexpected end of file");
    }
    ++line;
    return text;
  };

  auto header = detail::split_ws(next_line());
  if (header.size() != 2 || header[0] != "densenet" || header[1] != "1") {
    throw ParseError("model file: line " + std::to_string(line) +
                     ": expected 'densenet 1' header");
  }
  std::string name_line = next_line();
  if (name_line.rfind("name", 0) != 0) {
    throw ParseError("model file: line " + std::to_string(line) + ": expected 'name <tag>'");
  }
  std::string name = name_line.size() > 5 ? name_line.substr(5) : "";

  auto layers_line = detail::split_ws(next_line());
  if (layers_line.size() != 2 || layers_line[0] != "layers") {
    throw ParseError("model file: line " + std::to_string(line) + ": expected 'layers <count>'");
  }
  const int count = static_cast<int>(detail::parse_double(layers_line[1], line, "model file"));
  if (count <= 0) {
    throw ParseError("model file: line " + std::to_string(line) + ": layer count must be positive");
  }

  std::vector<Layer> layers(static_cast<size_t>(count));
  for (Layer& l : layers) {
    auto toks = detail::split_ws(next_line());
    if (toks.size() != 4 || toks[0] != "layer") {
      throw ParseError("model file: line " + std::to_string(line) +
                       ": expected 'layer <out> <in> <activation>'");
    }
    const size_t out = static_cast<size_t>(detail::parse_double(toks[1], line, "model file"));
    const size_t in = static_cast<size_t>(detail::parse_double(toks[2], line, "model file"));
    l.weight = Matrix(out, in);
    l.bias.assign(out, 0.0);
    l.activation = activation_from_name(toks[3]);
  }
  for (Layer& l : layers) {
    for (size_t r = 0; r < l.out_dim(); ++r) {
      auto toks = detail::split_ws(next_line());
      if (toks.size() != l.in_dim()) {
        throw ParseError("model file: line " + std::to_string(line) + ": expected " +
                         std::to_string(l.in_dim()) + " values, got " +
                         std::to_string(toks.size()));
      }
      for (size_t c = 0; c < l.in_dim(); ++c) {
        l.weight(r, c) = detail::parse_double(toks[c], line, "model file");
      }
    }
    auto toks = detail::split_ws(next_line());
    if (toks.size() != l.bias.size()) {
      throw ParseError("model file: line " + std::to_string(line) + ": expected " +
                       std::to_string(l.bias.size()) + " bias values, got " +
                       std::to_string(toks.size()));
    }
    for (size_t j = 0; j < l.bias.size(); ++j) {
      l.bias[j] = detail::parse_double(toks[j], line, "model file");
    }
  }
  return DenseNet(std::move(name), std::move(layers));
}

inline DenseNet load_network(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open model file '" + path + "'");
  int line = 0;
  return load_network(is, line);
}

}  // namespace blindrep
