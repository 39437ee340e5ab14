#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <sstream>

#include "blindrep/dataset.hpp"
#include "blindrep/gradcheck.hpp"
#include "blindrep/losses.hpp"
#include "blindrep/net.hpp"
#include "blindrep/optim.hpp"
#include "blindrep/rng.hpp"

using namespace blindrep;

namespace {

DenseNet single_linear(const Matrix& w, std::vector<double> bias) {
  Layer layer;
  layer.weight = w;
  layer.bias = std::move(bias);
  layer.activation = Activation::kLinear;
  return DenseNet("test", {layer});
}

DenseNet random_net(size_t in, std::vector<LayerSpec> specs, uint64_t seed) {
  Rng rng(seed);
  return DenseNet::glorot("test", in, specs, rng);
}

Matrix random_matrix(size_t rows, size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

// Mean squared deviation from fixed targets; generic loss for gradient checks.
double mse_loss(const DenseNet& net, const Matrix& x, const Matrix& target) {
  const Matrix out = forward(net, x).output();
  double acc = 0.0;
  for (size_t i = 0; i < out.size(); ++i) {
    const double d = out.data()[i] - target.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(out.rows());
}

Gradients mse_gradients(const DenseNet& net, const Matrix& x, const Matrix& target) {
  ForwardPass fp = forward(net, x);
  Matrix g = fp.output();
  for (size_t i = 0; i < g.size(); ++i) {
    g.data()[i] = 2.0 * (g.data()[i] - target.data()[i]) / static_cast<double>(g.rows());
  }
  return backward(net, fp, g);
}

}  // namespace

TEST_CASE("forward: identity single layer reproduces the input") {
  DenseNet net = single_linear(Matrix::identity(2), {0.0, 0.0});
  Matrix x(1, 2);
  x(0, 0) = 1.0;
  x(0, 1) = 2.0;
  const Matrix out = forward(net, x).output();
  CHECK(out(0, 0) == 1.0);
  CHECK(out(0, 1) == 2.0);
}

TEST_CASE("forward: zero-logit softmax is uniform over 6 classes") {
  Layer layer;
  layer.weight = Matrix(6, 3);  // all zero -> zero logits
  layer.bias.assign(6, 0.0);
  layer.activation = Activation::kSoftmax;
  DenseNet net("test", {layer});
  Matrix x(1, 3, 0.5);
  const Matrix out = forward(net, x).output();
  for (size_t j = 0; j < 6; ++j) CHECK(out(0, j) == Catch::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("forward: relu clamps negatives") {
  Layer layer;
  layer.weight = Matrix::identity(2);
  layer.bias.assign(2, 0.0);
  layer.activation = Activation::kRelu;
  DenseNet net("test", {layer});
  Matrix x(1, 2);
  x(0, 0) = -1.0;
  x(0, 1) = 3.0;
  const Matrix out = forward(net, x).output();
  CHECK(out(0, 0) == 0.0);
  CHECK(out(0, 1) == 3.0);
}

TEST_CASE("forward: softmax rows sum to one on random nets") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<LayerSpec> specs{{12, Activation::kRelu}, {5, Activation::kSoftmax}};
    DenseNet net = random_net(9, specs, 100 + static_cast<uint64_t>(trial));
    Matrix x = random_matrix(8, 9, rng);
    for (double& v : x.data()) v *= 10.0;  // widen logit range
    const Matrix out = forward(net, x).output();
    for (size_t r = 0; r < out.rows(); ++r) {
      double sum = 0.0;
      for (size_t c = 0; c < out.cols(); ++c) {
        sum += out(r, c);
        CHECK(out(r, c) >= 0.0);
      }
      CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    }
  }
}

TEST_CASE("forward: dimension mismatch names the offending layer") {
  DenseNet net = single_linear(Matrix::identity(3), {0.0, 0.0, 0.0});
  Matrix x(2, 4);
  CHECK_THROWS_MATCHES(forward(net, x), ShapeError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("layer 0")));
}

TEST_CASE("backward: zero output gradient gives zero parameter gradients") {
  DenseNet net = random_net(5, {{4, Activation::kRelu}, {3, Activation::kSoftmax}}, 11);
  Rng rng(3);
  Matrix x = random_matrix(6, 5, rng);
  ForwardPass fp = forward(net, x);
  Gradients g = backward(net, fp, Matrix(6, 3));
  for (const Matrix& w : g.weight) {
    for (double v : w.data()) CHECK(v == 0.0);
  }
  for (const auto& b : g.bias) {
    for (double v : b) CHECK(v == 0.0);
  }
  for (double v : g.input.data()) CHECK(v == 0.0);
}

TEST_CASE("backward: single linear layer weight gradient is g x^T") {
  Rng rng(5);
  Matrix w = random_matrix(3, 4, rng);
  DenseNet net = single_linear(w, {0.0, 0.0, 0.0});
  Matrix x = random_matrix(1, 4, rng);
  Matrix g = random_matrix(1, 3, rng);
  ForwardPass fp = forward(net, x);
  Gradients grads = backward(net, fp, g);
  for (size_t i = 0; i < 3; ++i) {
    for (size_t j = 0; j < 4; ++j) {
      CHECK(grads.weight[0](i, j) == Catch::Approx(g(0, i) * x(0, j)).epsilon(1e-12));
    }
  }
  // input gradient is g W
  for (size_t j = 0; j < 4; ++j) {
    double expect = 0.0;
    for (size_t i = 0; i < 3; ++i) expect += g(0, i) * w(i, j);
    CHECK(grads.input(0, j) == Catch::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("backward: parameters are not mutated") {
  DenseNet net = random_net(4, {{4, Activation::kSigmoid}, {2, Activation::kLinear}}, 17);
  const DenseNet copy = net;
  Rng rng(9);
  Matrix x = random_matrix(3, 4, rng);
  ForwardPass fp = forward(net, x);
  backward(net, fp, random_matrix(3, 2, rng));
  for (size_t l = 0; l < net.depth(); ++l) {
    CHECK(net.layers()[l].weight.data() == copy.layers()[l].weight.data());
    CHECK(net.layers()[l].bias == copy.layers()[l].bias);
  }
}

TEST_CASE("backward: random 2-layer net matches central differences") {
  DenseNet net = random_net(6, {{5, Activation::kRelu}, {4, Activation::kLinear}}, 23);
  Rng rng(29);
  const Matrix x = random_matrix(7, 6, rng);
  const Matrix target = random_matrix(7, 4, rng);
  const Gradients analytic = mse_gradients(net, x, target);
  const double err = finite_difference_check(
      net, [&](const DenseNet& n) { return mse_loss(n, x, target); }, analytic, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("backward: stale activations are rejected") {
  DenseNet net = random_net(4, {{3, Activation::kRelu}}, 31);
  DenseNet other = random_net(4, {{5, Activation::kRelu}}, 32);
  Rng rng(33);
  Matrix x = random_matrix(2, 4, rng);
  ForwardPass fp = forward(other, x);
  CHECK_THROWS_AS(backward(net, fp, Matrix(2, 5)), ShapeError);
}

TEST_CASE("adam: zero gradients leave parameters unchanged and bump the step") {
  DenseNet net = random_net(3, {{2, Activation::kLinear}}, 37);
  const DenseNet before = net;
  AdamState state = AdamState::for_net(net);
  Gradients g;
  g.weight.emplace_back(2, 3);
  g.bias.emplace_back(2, 0.0);
  g.input = Matrix(1, 3);
  TrainConfig cfg;
  adam_update(net, g, state, cfg);
  CHECK(state.step == 1);
  CHECK(net.layers()[0].weight.data() == before.layers()[0].weight.data());
  CHECK(net.layers()[0].bias == before.layers()[0].bias);
}

TEST_CASE("adam: first bias-corrected step moves a zero scalar by ~ -lr") {
  // Scalar parameter 0, gradient 0.5, lr 0.001: mhat/(sqrt(vhat)+eps) ~ 1.
  Layer layer;
  layer.weight = Matrix(1, 1);
  layer.bias.assign(1, 0.0);
  layer.activation = Activation::kLinear;
  DenseNet net("scalar", {layer});
  AdamState state = AdamState::for_net(net);
  Gradients g;
  g.weight.emplace_back(1, 1);
  g.weight[0](0, 0) = 0.5;
  g.bias.emplace_back(1, 0.0);
  TrainConfig cfg;
  adam_update(net, g, state, cfg);
  CHECK(net.layers()[0].weight(0, 0) == Catch::Approx(-0.001).margin(1e-6));
}

TEST_CASE("adam: two real optimization steps differ from one doubled-lr step") {
  // With a constant gradient Adam's step is invariant to the gradient scale,
  // so the comparison is run on a quadratic loss where the second gradient
  // differs from the first.
  auto quad_grad = [](const DenseNet& n) {
    Gradients g;
    g.weight.emplace_back(1, 1);
    g.weight[0](0, 0) = 2.0 * (n.layers()[0].weight(0, 0) - 3.0);
    g.bias.emplace_back(1, 0.0);
    return g;
  };
  Layer layer;
  layer.weight = Matrix(1, 1);
  layer.bias.assign(1, 0.0);
  DenseNet two_step("a", {layer});
  DenseNet one_step("b", {layer});

  TrainConfig cfg;
  AdamState s1 = AdamState::for_net(two_step);
  adam_update(two_step, quad_grad(two_step), s1, cfg);
  adam_update(two_step, quad_grad(two_step), s1, cfg);

  TrainConfig doubled = cfg;
  doubled.learning_rate *= 2.0;
  AdamState s2 = AdamState::for_net(one_step);
  adam_update(one_step, quad_grad(one_step), s2, doubled);

  CHECK(std::abs(two_step.layers()[0].weight(0, 0) - one_step.layers()[0].weight(0, 0)) > 1e-9);
}

TEST_CASE("adam: non-finite gradients abort without mutating") {
  DenseNet net = random_net(2, {{2, Activation::kLinear}}, 41);
  const DenseNet before = net;
  AdamState state = AdamState::for_net(net);
  Gradients g;
  g.weight.emplace_back(2, 2);
  g.weight[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  g.bias.emplace_back(2, 0.0);
  TrainConfig cfg;
  CHECK_THROWS_AS(adam_update(net, g, state, cfg), NumericError);
  CHECK(state.step == 0);
  CHECK(net.layers()[0].weight.data() == before.layers()[0].weight.data());
}

TEST_CASE("cross entropy: uniform, peaked and two-class values") {
  {
    const std::vector<double> logits(6, 0.0);
    const LossGrad lg = cross_entropy(logits, 2);
    CHECK(lg.loss == Catch::Approx(std::log(6.0)).epsilon(1e-12));  // ln 6 ~ 1.7918
  }
  {
    std::vector<double> logits(4, 0.0);
    logits[1] = 1e4;  // margin -> infinity
    const LossGrad lg = cross_entropy(logits, 1);
    CHECK(lg.loss < 1e-12);
  }
  {
    const std::vector<double> logits{1.0, 0.0};
    const LossGrad lg = cross_entropy(logits, 0);
    CHECK(lg.loss == Catch::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));  // ~0.3133
  }
}

TEST_CASE("cross entropy: gradient is softmax minus one-hot") {
  const std::vector<double> logits{0.3, -1.2, 0.7};
  const LossGrad lg = cross_entropy(logits, 2);
  double z = 0.0;
  for (double v : logits) z += std::exp(v);
  for (size_t j = 0; j < 3; ++j) {
    const double expect = std::exp(logits[j]) / z - (j == 2 ? 1.0 : 0.0);
    CHECK(lg.grad[j] == Catch::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy: out-of-range label is rejected") {
  const std::vector<double> logits{0.0, 0.0};
  CHECK_THROWS_AS(cross_entropy(logits, 2), ArgumentError);
  CHECK_THROWS_AS(cross_entropy(logits, -1), ArgumentError);
  CHECK_THROWS_AS(cross_entropy(std::vector<double>{1.0}, 0), ArgumentError);
}

TEST_CASE("triplet loss: spec values") {
  const std::vector<double> zero{0.0, 0.0};
  const std::vector<double> e1{1.0, 0.0};
  {
    // a = p = n -> loss = margin
    const TripletResult r = triplet_loss(e1, e1, e1, 0.2);
    CHECK(r.loss == Catch::Approx(0.2).epsilon(1e-12));
  }
  {
    // a = p, distinct n, margin below the gap -> inactive
    const TripletResult r = triplet_loss(zero, zero, e1, 0.2);
    CHECK(r.loss == 0.0);
    for (double v : r.grad_anchor) CHECK(v == 0.0);
    for (double v : r.grad_positive) CHECK(v == 0.0);
    for (double v : r.grad_negative) CHECK(v == 0.0);
  }
  {
    // |a-p|^2 = |a-n|^2 -> loss = margin
    const TripletResult r = triplet_loss(zero, e1, e1, 0.2);
    CHECK(r.loss == Catch::Approx(0.2).epsilon(1e-12));
  }
}

TEST_CASE("triplet loss: analytic gradients when the hinge is active") {
  Rng rng(43);
  std::vector<double> a(4), p(4), n(4);
  for (auto* v : {&a, &p, &n}) {
    for (double& x : *v) x = rng.normal();
  }
  const double margin = 50.0;  // force the hinge active
  const TripletResult r = triplet_loss(a, p, n, margin);
  REQUIRE(r.loss > 0.0);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(r.grad_anchor[i] == Catch::Approx(2.0 * (n[i] - p[i])).epsilon(1e-12));
    CHECK(r.grad_positive[i] == Catch::Approx(2.0 * (p[i] - a[i])).epsilon(1e-12));
    CHECK(r.grad_negative[i] == Catch::Approx(2.0 * (a[i] - n[i])).epsilon(1e-12));
  }
}

TEST_CASE("triplet loss: dimension mismatch raises a shape error") {
  CHECK_THROWS_AS(
      triplet_loss(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0},
                   std::vector<double>{1.0, 2.0}, 0.2),
      ShapeError);
}

TEST_CASE("triplet loss: invariant under a common rigid rotation") {
  Rng rng(47);
  const size_t d = 6;
  const Matrix rot = blindrep::detail::random_orthogonal_columns(d, d, rng);
  std::vector<double> a(d), p(d), n(d);
  for (auto* v : {&a, &p, &n}) {
    for (double& x : *v) x = rng.normal();
  }
  auto rotate = [&](const std::vector<double>& v) {
    std::vector<double> out(d, 0.0);
    for (size_t i = 0; i < d; ++i) {
      for (size_t j = 0; j < d; ++j) out[i] += rot(i, j) * v[j];
    }
    return out;
  };
  for (double margin : {0.0, 0.2, 2.0, 20.0}) {
    const TripletResult plain = triplet_loss(a, p, n, margin);
    const TripletResult rotated = triplet_loss(rotate(a), rotate(p), rotate(n), margin);
    CHECK(rotated.loss == Catch::Approx(plain.loss).margin(1e-9));
  }
}

TEST_CASE("gradient reversal: negation and scaling") {
  const std::vector<double> upstream{2.0, -4.0};
  {
    const auto out = gradient_reversal(upstream, 1.0);
    CHECK(out[0] == -2.0);
    CHECK(out[1] == 4.0);
  }
  {
    const auto out = gradient_reversal(upstream, 0.0);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
  }
  {
    const auto out = gradient_reversal(upstream, 0.5);
    CHECK(out[0] == -1.0);
    CHECK(out[1] == 2.0);
  }
  CHECK_THROWS_AS(gradient_reversal(upstream, -1.0), ArgumentError);
}

TEST_CASE("finite differences: exact for a linear layer with quadratic loss") {
  DenseNet net = random_net(5, {{4, Activation::kLinear}}, 53);
  Rng rng(59);
  const Matrix x = random_matrix(6, 5, rng);
  const Matrix target = random_matrix(6, 4, rng);
  const Gradients analytic = mse_gradients(net, x, target);
  const double err = finite_difference_check(
      net, [&](const DenseNet& n) { return mse_loss(n, x, target); }, analytic, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("finite differences: 3-layer relu/softmax net under cross-entropy") {
  DenseNet net = random_net(
      8, {{10, Activation::kRelu}, {7, Activation::kSigmoid}, {4, Activation::kSoftmax}}, 61);
  Rng rng(67);
  const Matrix x = random_matrix(9, 8, rng);
  std::vector<int> labels(9);
  for (int& y : labels) y = static_cast<int>(rng.index(4));

  auto ce_loss = [&](const DenseNet& n) {
    const Matrix out = forward(n, x).output();
    double loss = 0.0;
    for (size_t r = 0; r < out.rows(); ++r) {
      loss -= std::log(out(r, static_cast<size_t>(labels[r])));
    }
    return loss / static_cast<double>(out.rows());
  };
  ForwardPass fp = forward(net, x);
  Matrix g = fp.output();
  for (size_t r = 0; r < g.rows(); ++r) g(r, static_cast<size_t>(labels[r])) -= 1.0;
  for (double& v : g.data()) v /= static_cast<double>(g.rows());
  const Gradients analytic = backward(net, fp, g, GradSeed::kFinalPreactivation);

  const double err = finite_difference_check(net, ce_loss, analytic, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("finite differences: a corrupted gradient is flagged") {
  DenseNet net = random_net(5, {{4, Activation::kLinear}}, 71);
  Rng rng(73);
  const Matrix x = random_matrix(6, 5, rng);
  const Matrix target = random_matrix(6, 4, rng);
  Gradients analytic = mse_gradients(net, x, target);
  // Double the largest-magnitude weight gradient entry.
  size_t worst = 0;
  for (size_t i = 0; i < analytic.weight[0].size(); ++i) {
    if (std::abs(analytic.weight[0].data()[i]) > std::abs(analytic.weight[0].data()[worst])) {
      worst = i;
    }
  }
  analytic.weight[0].data()[worst] *= 2.0;
  const double err = finite_difference_check(
      net, [&](const DenseNet& n) { return mse_loss(n, x, target); }, analytic, 1e-5);
  CHECK(err > 0.1);
}

TEST_CASE("finite differences: non-finite loss raises a numeric error") {
  DenseNet net = random_net(3, {{2, Activation::kLinear}}, 79);
  Gradients analytic;
  analytic.weight.emplace_back(2, 3);
  analytic.bias.emplace_back(2, 0.0);
  CHECK_THROWS_AS(
      finite_difference_check(
          net, [](const DenseNet&) { return std::numeric_limits<double>::infinity(); }, analytic,
          1e-5),
      NumericError);
}

TEST_CASE("determinism: identical seed and config give bit-identical training") {
  Rng data_rng(83);
  const Matrix x = random_matrix(40, 6, data_rng);
  std::vector<int> y(40);
  for (int& v : y) v = static_cast<int>(data_rng.index(3));
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.seed = 1234;

  auto run = [&]() {
    DenseNet net = random_net(6, {{8, Activation::kRelu}, {3, Activation::kSoftmax}}, 999);
    train_softmax_classifier(net, x, y, cfg);
    return net;
  };
  const DenseNet a = run();
  const DenseNet b = run();
  for (size_t l = 0; l < a.depth(); ++l) {
    REQUIRE(std::memcmp(a.layers()[l].weight.data().data(), b.layers()[l].weight.data().data(),
                        a.layers()[l].weight.size() * sizeof(double)) == 0);
    REQUIRE(a.layers()[l].bias == b.layers()[l].bias);
  }
}

TEST_CASE("network files: save/load round trip reproduces outputs within 1e-12") {
  DenseNet net = random_net(
      7, {{6, Activation::kRelu}, {5, Activation::kSigmoid}, {3, Activation::kSoftmax}}, 89);
  std::stringstream ss;
  save_network(net, ss);
  int line = 0;
  const DenseNet loaded = load_network(ss, line);
  CHECK(loaded.name() == net.name());

  Rng rng(97);
  const Matrix x = random_matrix(5, 7, rng);
  const Matrix a = forward(net, x).output();
  const Matrix b = forward(loaded, x).output();
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-12);
  }
}

TEST_CASE("network files: malformed rows are reported with their line number") {
  DenseNet net = random_net(3, {{2, Activation::kLinear}}, 101);
  std::stringstream ss;
  save_network(net, ss);
  std::string text = ss.str();
  // Damage the first weight row (line 5: header is 4 lines).
  std::istringstream in(text);
  std::string rebuilt, line_text;
  int line = 0;
  while (std::getline(in, line_text)) {
    ++line;
    if (line == 5) line_text += " 99.0";
    rebuilt += line_text + "\n";
  }
  std::istringstream damaged(rebuilt);
  int counter = 0;
  CHECK_THROWS_MATCHES(load_network(damaged, counter), ParseError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("line 5")));
}

TEST_CASE("net validation: softmax only as final activation") {
  Layer softmax_layer;
  softmax_layer.weight = Matrix::identity(3);
  softmax_layer.bias.assign(3, 0.0);
  softmax_layer.activation = Activation::kSoftmax;
  Layer linear_layer = softmax_layer;
  linear_layer.activation = Activation::kLinear;
  CHECK_THROWS_AS(DenseNet("bad", {softmax_layer, linear_layer}), ShapeError);
  CHECK_NOTHROW(DenseNet("good", {linear_layer, softmax_layer}));
}

TEST_CASE("net validation: adjacent layer dimensions must compose") {
  Layer a;
  a.weight = Matrix(4, 3);
  a.bias.assign(4, 0.0);
  Layer b;
  b.weight = Matrix(2, 5);  // expects 5 inputs, gets 4
  b.bias.assign(2, 0.0);
  CHECK_THROWS_AS(DenseNet("bad", {a, b}), ShapeError);
}
