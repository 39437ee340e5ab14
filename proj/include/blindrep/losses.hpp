#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "blindrep/errors.hpp"
#include "blindrep/matrix.hpp"

namespace blindrep {

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Cross-entropy on raw logits: loss = -log softmax(logits)[label],
// gradient = softmax(logits) - one_hot(label).
inline LossGrad cross_entropy(std::span<const double> logits, int label) {
  if (logits.size() < 2) throw ArgumentError("cross_entropy: need at least 2 classes");
  if (label < 0 || static_cast<size_t>(label) >= logits.size()) {
    throw ArgumentError("cross_entropy: label " + std::to_string(label) +
                        " out of range for " + std::to_string(logits.size()) + " classes");
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  LossGrad out;
  out.grad.resize(logits.size());
  for (size_t j = 0; j < logits.size(); ++j) {
    out.grad[j] = std::exp(logits[j] - mx);
    sum += out.grad[j];
  }
  for (double& g : out.grad) g /= sum;
  out.loss = std::log(sum) + mx - logits[static_cast<size_t>(label)];
  out.grad[static_cast<size_t>(label)] -= 1.0;
  return out;
}

struct TripletResult {
  double loss = 0.0;
  std::vector<double> grad_anchor, grad_positive, grad_negative;
};

// Hinge on squared Euclidean distances:
//   L = max(0, |a-p|^2 - |a-n|^2 + margin)
// Gradients are zero when the hinge is inactive (subgradient 0 at the kink).
inline TripletResult triplet_loss(std::span<const double> a, std::span<const double> p,
                                  std::span<const double> n, double margin) {
  if (a.size() != p.size() || a.size() != n.size()) {
    throw ShapeError("triplet_loss: dimensions " + std::to_string(a.size()) + "/" +
                     std::to_string(p.size()) + "/" + std::to_string(n.size()) + " differ");
  }
  if (margin < 0.0) throw ArgumentError("triplet_loss: margin must be >= 0");
  const double d_ap = squared_distance(a, p);
  const double d_an = squared_distance(a, n);
  const double h = d_ap - d_an + margin;

  TripletResult out;
  out.grad_anchor.assign(a.size(), 0.0);
  out.grad_positive.assign(a.size(), 0.0);
  out.grad_negative.assign(a.size(), 0.0);
  if (h > 0.0) {
    out.loss = h;
    for (size_t i = 0; i < a.size(); ++i) {
      out.grad_anchor[i] = 2.0 * (n[i] - p[i]);
      out.grad_positive[i] = 2.0 * (p[i] - a[i]);
      out.grad_negative[i] = 2.0 * (a[i] - n[i]);
    }
  }
  return out;
}

// Backward half of a gradient reversal layer: the forward pass is the
// identity elsewhere; here the upstream gradient comes back negated and
// scaled.
inline std::vector<double> gradient_reversal(std::span<const double> upstream, double scale) {
  if (!std::isfinite(scale)) throw ArgumentError("gradient_reversal: scale must be finite");
  if (scale < 0.0) throw ArgumentError("gradient_reversal: scale must be >= 0");
  std::vector<double> out(upstream.size());
  for (size_t i = 0; i < upstream.size(); ++i) out[i] = -scale * upstream[i];
  return out;
}

inline Matrix gradient_reversal(const Matrix& upstream, double scale) {
  if (!std::isfinite(scale)) throw ArgumentError("gradient_reversal: scale must be finite");
  if (scale < 0.0) throw ArgumentError("gradient_reversal: scale must be >= 0");
  Matrix out = upstream;
  for (double& v : out.data()) v = -scale * v;
  return out;
}

}  // namespace blindrep
