#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "blindrep/dataset.hpp"
#include "blindrep/errors.hpp"
#include "blindrep/forest.hpp"
#include "blindrep/optim.hpp"
#include "blindrep/suppression.hpp"

namespace blindrep {

// A representation is either the raw embedding or a trained suppressor
// applied to it. Non-owning: the suppressor must outlive the representation.
class Representation {
 public:
  static Representation raw() { return Representation("x", nullptr); }

  static Representation blinded(const Suppressor& s, std::string name = "") {
    if (name.empty()) name = std::string("phi_") + suppressor_kind_name(s.kind);
    return Representation(std::move(name), &s);
  }

  const std::string& name() const { return name_; }

  std::vector<double> operator()(std::span<const double> x) const {
    if (!suppressor_) return {x.begin(), x.end()};
    return suppress(*suppressor_, x);
  }

  Matrix apply_rows(const Matrix& x) const {
    if (!suppressor_) return x;
    return suppress(*suppressor_, x);
  }

  Matrix apply_dataset(const Dataset& ds) const { return apply_rows(embeddings_of(ds)); }

 private:
  Representation(std::string name, const Suppressor* s) : name_(std::move(name)), suppressor_(s) {}

  std::string name_;
  const Suppressor* suppressor_ = nullptr;
};

enum class ProbeKind { kMlp, kLinearHinge, kRandomForest };

inline const char* probe_kind_name(ProbeKind k) {
  switch (k) {
    case ProbeKind::kMlp: return "nn";
    case ProbeKind::kLinearHinge: return "svm";
    case ProbeKind::kRandomForest: return "rf";
  }
  return "nn";
}

struct ProbeConfig {
  int mlp_hidden = 128;
  double train_fraction = 0.8;  // internal sample-level split
  TrainConfig train;
  ForestConfig forest;

  ProbeConfig() { train.epochs = 30; }
};

struct ProbeModel {
  ProbeKind kind = ProbeKind::kMlp;
  TaskSpec task;
  DenseNet net;         // mlp / linear hinge
  RandomForest forest;  // random forest
  size_t in_dim = 0;

  int predict(std::span<const double> x) const {
    if (x.size() != in_dim) {
      throw ShapeError("probe predict: input dimension " + std::to_string(x.size()) +
                       ", expected " + std::to_string(in_dim));
    }
    if (kind == ProbeKind::kRandomForest) return forest.predict(x);
    return predict_classes(net, Matrix::from_row(x))[0];
  }

  std::vector<int> predict_rows(const Matrix& x) const {
    if (x.cols() != in_dim) {
      throw ShapeError("probe predict: input dimension " + std::to_string(x.cols()) +
                       ", expected " + std::to_string(in_dim));
    }
    if (kind == ProbeKind::kRandomForest) {
      std::vector<int> out(x.rows());
      for (size_t r = 0; r < x.rows(); ++r) out[r] = forest.predict(x.row_span(r));
      return out;
    }
    return predict_classes(net, x);
  }
};

struct ProbeResult {
  ProbeModel model;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

namespace detail {

inline void require_multiclass_train(std::span<const int> y) {
  const std::set<int> classes(y.begin(), y.end());
  if (classes.size() < 2) {
    throw DataError("train_probe: training split holds a single class");
  }
}

// One-vs-rest linear hinge trained with the shared Adam loop.
inline DenseNet train_linear_hinge(const Matrix& x, std::span<const int> y, int num_classes,
                                   const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  std::vector<LayerSpec> specs{{static_cast<size_t>(num_classes), Activation::kLinear}};
  DenseNet net = DenseNet::glorot("svm", x.cols(), specs, rng);
  AdamState state = AdamState::for_net(net);
  std::vector<size_t> order(x.rows());
  std::iota(order.begin(), order.end(), size_t{0});
  const size_t bs = static_cast<size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += bs) {
      const size_t b = std::min(bs, order.size() - start);
      Matrix xb = gather_rows(x, {order.data() + start, b});
      ForwardPass fp = forward(net, xb);
      Matrix grad(b, static_cast<size_t>(num_classes));
      const double inv_b = 1.0 / static_cast<double>(b);
      for (size_t r = 0; r < b; ++r) {
        const int label = y[order[start + r]];
        for (int c = 0; c < num_classes; ++c) {
          const double target = c == label ? 1.0 : -1.0;
          if (1.0 - target * fp.output()(r, static_cast<size_t>(c)) > 0.0) {
            grad(r, static_cast<size_t>(c)) = -target * inv_b;
          }
        }
      }
      Gradients g = backward(net, fp, grad);
      adam_update(net, g, state, cfg);
    }
  }
  return net;
}

inline double plain_accuracy(std::span<const int> pred, std::span<const int> y) {
  size_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == y[i]) ++hits;
  }
  return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace detail

// Trains a probe on explicit train/test feature matrices.
inline ProbeResult train_probe_split(const Matrix& x_train, std::span<const int> y_train,
                                     const Matrix& x_test, std::span<const int> y_test,
                                     const TaskSpec& task, ProbeKind kind,
                                     const ProbeConfig& cfg) {
  if (x_train.rows() == 0) throw DataError("train_probe: empty training split");
  if (x_test.rows() == 0) throw DataError("train_probe: empty test split");
  detail::require_multiclass_train(y_train);

  ProbeResult out;
  out.model.kind = kind;
  out.model.task = task;
  out.model.in_dim = x_train.cols();

  switch (kind) {
    case ProbeKind::kMlp: {
      Rng rng(cfg.train.seed);
      std::vector<LayerSpec> specs{
          {static_cast<size_t>(cfg.mlp_hidden), Activation::kRelu},
          {static_cast<size_t>(task.num_classes), Activation::kSoftmax}};
      out.model.net = DenseNet::glorot("probe-" + task.name, x_train.cols(), specs, rng);
      train_softmax_classifier(out.model.net, x_train, y_train, cfg.train);
      break;
    }
    case ProbeKind::kLinearHinge:
      out.model.net = detail::train_linear_hinge(x_train, y_train, task.num_classes, cfg.train);
      break;
    case ProbeKind::kRandomForest: {
      ForestConfig fc = cfg.forest;
      fc.seed = sub_seed(cfg.train.seed, 71);
      out.model.forest = RandomForest::fit(x_train, y_train, task.num_classes, fc);
      break;
    }
  }
  out.train_accuracy = detail::plain_accuracy(out.model.predict_rows(x_train), y_train);
  out.test_accuracy = detail::plain_accuracy(out.model.predict_rows(x_test), y_test);
  return out;
}

// Trains a probe on a dataset with an internal seeded sample-level split; the
// split depends only on cfg.train.seed, so different representations of the
// same dataset are probed on identical partitions.
inline ProbeResult train_probe(const Dataset& samples, const Representation& repr,
                               const TaskSpec& task, ProbeKind kind, const ProbeConfig& cfg) {
  if (samples.samples.empty()) throw DataError("train_probe: empty dataset");
  const Matrix x = repr.apply_dataset(samples);
  const std::vector<int> y = labels_of(samples, task);

  std::vector<size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng(sub_seed(cfg.train.seed, 61));
  rng.shuffle(idx);
  const size_t n_tr = std::max<size_t>(
      1, static_cast<size_t>(std::llround(cfg.train_fraction * static_cast<double>(idx.size()))));
  if (n_tr >= idx.size()) throw DataError("train_probe: test split is empty");

  Matrix x_train(n_tr, x.cols());
  Matrix x_test(idx.size() - n_tr, x.cols());
  std::vector<int> y_train(n_tr), y_test(idx.size() - n_tr);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (i < n_tr) {
      std::copy(x.row(idx[i]), x.row(idx[i]) + x.cols(), x_train.row(i));
      y_train[i] = y[idx[i]];
    } else {
      std::copy(x.row(idx[i]), x.row(idx[i]) + x.cols(), x_test.row(i - n_tr));
      y_test[i - n_tr] = y[idx[i]];
    }
  }
  return train_probe_split(x_train, y_train, x_test, y_test, task, kind, cfg);
}

struct EvalResult {
  double accuracy = 0.0;
  Matrix confusion;  // rows true class, cols predicted
  std::vector<int> predictions;
};

inline EvalResult evaluate_probe(const ProbeModel& probe, const Matrix& x,
                                 std::span<const int> y) {
  if (x.rows() == 0) throw DataError("evaluate_probe: empty sample set");
  if (x.rows() != y.size()) throw ShapeError("evaluate_probe: rows vs labels mismatch");
  EvalResult out;
  out.predictions = probe.predict_rows(x);
  const size_t classes = static_cast<size_t>(probe.task.num_classes);
  out.confusion = Matrix(classes, classes);
  size_t hits = 0;
  for (size_t i = 0; i < x.rows(); ++i) {
    out.confusion(static_cast<size_t>(y[i]), static_cast<size_t>(out.predictions[i])) += 1.0;
    if (out.predictions[i] == y[i]) ++hits;
  }
  out.accuracy = static_cast<double>(hits) / static_cast<double>(x.rows());
  return out;
}

inline EvalResult evaluate_probe(const ProbeModel& probe, const Dataset& ds,
                                 const Representation& repr) {
  return evaluate_probe(probe, repr.apply_dataset(ds), labels_of(ds, probe.task));
}

// Accuracy drop relative to random choice, in percent:
//   Diff = 100 * (before - after) / (before - chance).
inline double diff_metric(double before, double after, double chance) {
  if (!(before > chance)) {
    throw ArgumentError("diff_metric: undefined for before " + std::to_string(before) +
                        " <= chance " + std::to_string(chance));
  }
  return 100.0 * (before - after) / (before - chance);
}

struct VerificationResult {
  double accuracy = 0.0;
  double threshold = 0.0;
};

namespace detail {

inline double cosine_of_pair(const Matrix& x, size_t a, size_t b) {
  const double na = l2_norm(x.row_span(a));
  const double nb = l2_norm(x.row_span(b));
  if (na < 1e-300) throw NumericError("verification: sample " + std::to_string(a) +
                                      " has a zero-norm embedding");
  if (nb < 1e-300) throw NumericError("verification: sample " + std::to_string(b) +
                                      " has a zero-norm embedding");
  return dot(x.row_span(a), x.row_span(b)) / (na * nb);
}

inline void require_both_classes(std::span<const VerificationPair> pairs, const char* which) {
  bool has_same = false, has_diff = false;
  for (const VerificationPair& p : pairs) {
    (p.same_identity ? has_same : has_diff) = true;
  }
  if (pairs.size() < 2 || !has_same || !has_diff) {
    throw DataError(std::string("verification: ") + which +
                    " pair set needs >= 2 pairs covering both classes");
  }
}

}  // namespace detail

// Cosine-similarity verification. The decision threshold is selected on the
// dev pairs only; the reported accuracy is computed on the test pairs. When
// both pair sets index the same dataset they must not share a pair; when they
// index different datasets the referenced identities must be disjoint.
inline VerificationResult verification_accuracy(const Representation& repr,
                                                const Dataset& dev_ds,
                                                std::span<const VerificationPair> dev,
                                                const Dataset& test_ds,
                                                std::span<const VerificationPair> test) {
  detail::require_both_classes(dev, "dev");
  detail::require_both_classes(test, "test");
  if (&dev_ds == &test_ds) {
    std::set<std::pair<size_t, size_t>> seen;
    for (const VerificationPair& p : dev) seen.insert({std::min(p.a, p.b), std::max(p.a, p.b)});
    for (const VerificationPair& p : test) {
      if (seen.count({std::min(p.a, p.b), std::max(p.a, p.b)})) {
        throw DataError("verification: dev and test pair sets overlap");
      }
    }
  } else {
    std::set<int> dev_ids;
    for (const VerificationPair& p : dev) {
      dev_ids.insert(dev_ds.samples[p.a].identity);
      dev_ids.insert(dev_ds.samples[p.b].identity);
    }
    for (const VerificationPair& p : test) {
      if (dev_ids.count(test_ds.samples[p.a].identity) ||
          dev_ids.count(test_ds.samples[p.b].identity)) {
        throw DataError("verification: dev and test pairs share identities");
      }
    }
  }

  const Matrix x_dev = repr.apply_dataset(dev_ds);
  const Matrix x_test = repr.apply_dataset(test_ds);
  auto score = [&](const Matrix& x, std::span<const VerificationPair> pairs) {
    std::vector<std::pair<double, bool>> out(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
      out[i] = {detail::cosine_of_pair(x, pairs[i].a, pairs[i].b), pairs[i].same_identity};
    }
    return out;
  };
  const auto dev_scores = score(x_dev, dev);

  // Candidate thresholds: below, between and above the sorted dev scores.
  std::vector<double> sims(dev_scores.size());
  for (size_t i = 0; i < sims.size(); ++i) sims[i] = dev_scores[i].first;
  std::sort(sims.begin(), sims.end());
  std::vector<double> candidates;
  candidates.push_back(sims.front() - 1.0);
  for (size_t i = 0; i + 1 < sims.size(); ++i) {
    if (sims[i] < sims[i + 1]) candidates.push_back(0.5 * (sims[i] + sims[i + 1]));
  }
  candidates.push_back(sims.back() + 1.0);

  auto accuracy_at = [](const std::vector<std::pair<double, bool>>& scores, double t) {
    size_t hits = 0;
    for (const auto& [sim, same] : scores) {
      if ((sim >= t) == same) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(scores.size());
  };

  VerificationResult best;
  best.threshold = candidates.front();
  best.accuracy = -1.0;
  for (double t : candidates) {
    const double acc = accuracy_at(dev_scores, t);
    if (acc > best.accuracy) {
      best.accuracy = acc;
      best.threshold = t;
    }
  }
  best.accuracy = accuracy_at(score(x_test, test), best.threshold);
  return best;
}

// Convenience overload for pairs drawn from one dataset.
inline VerificationResult verification_accuracy(const Representation& repr, const Dataset& ds,
                                                std::span<const VerificationPair> dev,
                                                std::span<const VerificationPair> test) {
  return verification_accuracy(repr, ds, dev, ds, test);
}

struct AblationPoint {
  double fraction = 0.0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
};

struct AblationCurve {
  std::vector<AblationPoint> points;
  int repeats = 0;
};

// Random-feature-ablation experiment: per (fraction, repeat) a fresh seeded
// coordinate mask zeroes ceil(fraction * N) features in both splits and a
// fresh MLP probe is retrained. Cells are seeded by
// (seed, fraction index, repeat index), so any schedule gives the same curve.
inline AblationCurve feature_ablation_curve(const Dataset& samples, const TaskSpec& task,
                                            std::span<const double> fractions, int repeats,
                                            const ProbeConfig& cfg) {
  if (repeats < 1) throw ConfigError("ablation: repeats must be >= 1");
  if (fractions.empty()) throw ConfigError("ablation: no fractions given");
  for (size_t i = 0; i < fractions.size(); ++i) {
    if (fractions[i] < 0.0 || fractions[i] >= 1.0) {
      throw ConfigError("ablation: fractions must lie in [0, 1)");
    }
    if (i > 0 && fractions[i] <= fractions[i - 1]) {
      throw ConfigError("ablation: fractions must be strictly increasing");
    }
  }
  const size_t n_features = static_cast<size_t>(samples.dim());

  // One fixed split for the whole curve, so fraction 0 equals the plain probe.
  const Matrix x = embeddings_of(samples);
  const std::vector<int> y = labels_of(samples, task);
  std::vector<size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  {
    Rng rng(sub_seed(cfg.train.seed, 61));
    rng.shuffle(idx);
  }
  const size_t n_tr = std::max<size_t>(
      1, static_cast<size_t>(std::llround(cfg.train_fraction * static_cast<double>(idx.size()))));
  if (n_tr >= idx.size()) throw DataError("ablation: test split is empty");

  Matrix x_train(n_tr, n_features), x_test(idx.size() - n_tr, n_features);
  std::vector<int> y_train(n_tr), y_test(idx.size() - n_tr);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (i < n_tr) {
      std::copy(x.row(idx[i]), x.row(idx[i]) + n_features, x_train.row(i));
      y_train[i] = y[idx[i]];
    } else {
      std::copy(x.row(idx[i]), x.row(idx[i]) + n_features, x_test.row(i - n_tr));
      y_test[i - n_tr] = y[idx[i]];
    }
  }

  AblationCurve curve;
  curve.repeats = repeats;
  for (size_t fi = 0; fi < fractions.size(); ++fi) {
    const size_t n_masked =
        static_cast<size_t>(std::ceil(fractions[fi] * static_cast<double>(n_features)));
    if (n_masked >= n_features) {
      throw DataError("ablation: fraction " + std::to_string(fractions[fi]) +
                      " leaves no features");
    }
    std::vector<double> accs;
    accs.reserve(static_cast<size_t>(repeats));
    for (int rep = 0; rep < repeats; ++rep) {
      std::vector<size_t> features(n_features);
      std::iota(features.begin(), features.end(), size_t{0});
      Rng mask_rng(sub_seed(sub_seed(cfg.train.seed, 7000 + fi), static_cast<uint64_t>(rep)));
      for (size_t i = 0; i < n_masked; ++i) {
        std::swap(features[i], features[i + mask_rng.index(n_features - i)]);
      }
      Matrix xt = x_train, xe = x_test;
      for (size_t i = 0; i < n_masked; ++i) {
        const size_t f = features[i];
        for (size_t r = 0; r < xt.rows(); ++r) xt(r, f) = 0.0;
        for (size_t r = 0; r < xe.rows(); ++r) xe(r, f) = 0.0;
      }
      const ProbeResult res =
          train_probe_split(xt, y_train, xe, y_test, task, ProbeKind::kMlp, cfg);
      accs.push_back(res.test_accuracy);
    }
    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    var /= static_cast<double>(accs.size());
    curve.points.push_back({fractions[fi], mean, std::sqrt(var)});
  }
  return curve;
}

struct PcaResult {
  Matrix components;  // dims x N, orthonormal rows
  std::vector<double> variances;
  Matrix coords;  // samples x dims
};

// Principal-component projection via subspace iteration on the covariance.
// Used as the qualitative 2-D view of a representation.
inline PcaResult pca_project(const Matrix& x, int dims = 2) {
  if (dims < 1) throw ArgumentError("pca: dims must be >= 1");
  if (x.rows() < static_cast<size_t>(dims)) {
    throw DataError("pca: need at least " + std::to_string(dims) + " samples");
  }
  const size_t n = x.cols();
  const size_t b = x.rows();

  Matrix centered = x;
  std::vector<double> mean(n, 0.0);
  for (size_t r = 0; r < b; ++r) {
    for (size_t c = 0; c < n; ++c) mean[c] += x(r, c);
  }
  for (double& m : mean) m /= static_cast<double>(b);
  for (size_t r = 0; r < b; ++r) {
    for (size_t c = 0; c < n; ++c) centered(r, c) -= mean[c];
  }

  Matrix cov = matmul_tn(centered, centered);
  const double denom = b > 1 ? static_cast<double>(b - 1) : 1.0;
  for (double& v : cov.data()) v /= denom;
  double trace = 0.0;
  for (size_t c = 0; c < n; ++c) trace += cov(c, c);
  if (trace < 1e-12) throw DataError("pca: data has no variance (rank 0)");

  // Seeded start; orthonormalized every step, polished at the end.
  Matrix basis(n, static_cast<size_t>(dims));
  Rng rng(0x9C0FFEEull);
  for (double& v : basis.data()) v = rng.normal();
  auto orthonormalize = [&](Matrix& m) {
    for (size_t c = 0; c < m.cols(); ++c) {
      for (int pass = 0; pass < 2; ++pass) {
        for (size_t prev = 0; prev < c; ++prev) {
          double proj = 0.0;
          for (size_t r = 0; r < m.rows(); ++r) proj += m(r, c) * m(r, prev);
          for (size_t r = 0; r < m.rows(); ++r) m(r, c) -= proj * m(r, prev);
        }
      }
      double norm = 0.0;
      for (size_t r = 0; r < m.rows(); ++r) norm += m(r, c) * m(r, c);
      norm = std::sqrt(norm);
      if (norm < 1e-12) {
        for (size_t r = 0; r < m.rows(); ++r) m(r, c) = rng.normal();
        --c;  // redo this column
        continue;
      }
      for (size_t r = 0; r < m.rows(); ++r) m(r, c) /= norm;
    }
  };
  orthonormalize(basis);
  for (int it = 0; it < 150; ++it) {
    basis = matmul(cov, basis);
    orthonormalize(basis);
  }

  // Rayleigh quotients, sorted descending.
  std::vector<std::pair<double, size_t>> spectrum(static_cast<size_t>(dims));
  const Matrix cb = matmul(cov, basis);
  for (size_t c = 0; c < static_cast<size_t>(dims); ++c) {
    double v = 0.0;
    for (size_t r = 0; r < n; ++r) v += basis(r, c) * cb(r, c);
    spectrum[c] = {v, c};
  }
  std::stable_sort(spectrum.begin(), spectrum.end(),
                   [](const auto& a, const auto& b2) { return a.first > b2.first; });

  PcaResult out;
  out.components = Matrix(static_cast<size_t>(dims), n);
  out.variances.resize(static_cast<size_t>(dims));
  for (size_t c = 0; c < static_cast<size_t>(dims); ++c) {
    out.variances[c] = spectrum[c].first;
    for (size_t r = 0; r < n; ++r) out.components(c, r) = basis(r, spectrum[c].second);
  }
  out.coords = matmul_nt(centered, out.components);
  return out;
}

inline PcaResult pca_project(const Dataset& ds, const Representation& repr, int dims = 2) {
  return pca_project(repr.apply_dataset(ds), dims);
}

}  // namespace blindrep
