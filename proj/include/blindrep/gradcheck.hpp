#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

#include "blindrep/errors.hpp"
#include "blindrep/net.hpp"
#include "blindrep/rng.hpp"

namespace blindrep {

using LossFn = std::function<double(const DenseNet&)>;

// Central-difference verification of analytic gradients. Every parameter is
// perturbed by +-eps (a seeded subsample of 2000 coordinates above 1e4
// parameters) and the worst relative error is returned. The loss procedure
// must be deterministic and must not mutate the net.
inline double finite_difference_check(const DenseNet& net, const LossFn& loss,
                                      const Gradients& analytic, double eps,
                                      uint64_t subsample_seed = 0xF1FDu) {
  if (analytic.weight.size() != net.depth() || analytic.bias.size() != net.depth()) {
    throw ShapeError("finite_difference_check: gradient layer count does not match net");
  }
  const double base = loss(net);
  if (!std::isfinite(base)) throw NumericError("finite_difference_check: non-finite loss");

  // Coordinate index space: all weights layer by layer, then all biases.
  struct Coord {
    size_t layer;
    bool is_bias;
    size_t index;
  };
  std::vector<Coord> coords;
  coords.reserve(net.parameter_count());
  for (size_t i = 0; i < net.depth(); ++i) {
    for (size_t k = 0; k < net.layers()[i].weight.size(); ++k) coords.push_back({i, false, k});
    for (size_t k = 0; k < net.layers()[i].bias.size(); ++k) coords.push_back({i, true, k});
  }
  if (coords.size() > 10000) {
    Rng rng(subsample_seed);
    rng.shuffle(coords);
    coords.resize(2000);
  }

  DenseNet probe = net;
  double worst = 0.0;
  for (const Coord& c : coords) {
    double& p = c.is_bias ? probe.mutable_layers()[c.layer].bias[c.index]
                          : probe.mutable_layers()[c.layer].weight.data()[c.index];
    const double saved = p;
    const double up = saved + eps;
    const double down = saved - eps;
    p = up;
    const double l_up = loss(probe);
    p = down;
    const double l_down = loss(probe);
    p = saved;
    if (!std::isfinite(l_up) || !std::isfinite(l_down)) {
      throw NumericError("finite_difference_check: non-finite loss during perturbation");
    }
    const double numeric = (l_up - l_down) / (up - down);
    const double a = c.is_bias ? analytic.bias[c.layer][c.index]
                               : analytic.weight[c.layer].data()[c.index];
    const double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace blindrep
